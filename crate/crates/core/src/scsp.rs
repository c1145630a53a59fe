//! Sparse cubic symmetrical patterns.
//!
//! A video is cut into non-overlapping `w × h × d` cubes. On the three
//! orthogonal central planes of each cube (xy, xt, yt) every interior pixel
//! contributes the signed differences between diametrically opposite
//! neighbours of its 8-ring. The concatenation over cubes is the encoded
//! video. Encoded fixed-length segments of training videos form a
//! dictionary, and a video is represented by the lasso code of each of its
//! segments against that dictionary.

use serde::{Deserialize, Serialize};

use crate::error::{DdmError, Result};
use crate::numeric::{dot, norm, Matrix, Vector};

/// Raw video, `frames × height × width × channels`, intensities in `[0, 1]`.
///
/// Storage is frame-major with channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl VideoTensor {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(DdmError::Data(format!(
                "video must have 1 or 3 channels, got {channels}"
            )));
        }
        if frames == 0 || height == 0 || width == 0 {
            return Err(DdmError::Data(format!(
                "empty video {frames}x{height}x{width}"
            )));
        }
        let expected = frames * height * width * channels;
        if data.len() != expected {
            return Err(DdmError::shape(
                "VideoTensor::new",
                format!("{frames}x{height}x{width}x{channels}"),
                format!("{} values", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(DdmError::Data(format!(
                "pixel {i} = {} outside [0, 1]",
                data[i]
            )));
        }
        Ok(VideoTensor {
            frames,
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a video by evaluating `f(t, y, x, c)` at every pixel.
    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(frames * height * width * channels);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    for c in 0..channels {
                        data.push(f(t, y, x, c));
                    }
                }
            }
        }
        VideoTensor::new(frames, height, width, channels, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.frames, self.height, self.width, self.channels)
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[((t * self.height + y) * self.width + x) * self.channels + c]
    }

    /// Frames `start..end` as a new video.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<VideoTensor> {
        if start >= end || end > self.frames {
            return Err(DdmError::Data(format!(
                "frame range {start}..{end} invalid for a {}-frame video",
                self.frames
            )));
        }
        let stride = self.height * self.width * self.channels;
        VideoTensor::new(
            end - start,
            self.height,
            self.width,
            self.channels,
            self.data[start * stride..end * stride].to_vec(),
        )
    }
}

/// Cube size `w × h × d` (pixels × pixels × frames).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub w: usize,
    pub h: usize,
    pub d: usize,
}

impl Default for BlockSpec {
    fn default() -> Self {
        BlockSpec { w: 3, h: 3, d: 3 }
    }
}

impl BlockSpec {
    pub fn new(w: usize, h: usize, d: usize) -> Result<Self> {
        let spec = BlockSpec { w, h, d };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.d == 0 {
            return Err(DdmError::Config(format!(
                "block dimensions must be at least 1, got {self}"
            )));
        }
        Ok(())
    }

    /// Length of one block's descriptor summed over the three planes.
    pub fn per_block_len(&self) -> usize {
        Plane::ALL
            .iter()
            .map(|&p| {
                let (rows, cols) = p.extent(self);
                plane_pattern_len(rows, cols)
            })
            .sum()
    }
}

impl std::fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.w, self.h, self.d)
    }
}

impl std::str::FromStr for BlockSpec {
    type Err = DdmError;

    /// Parses `WxHxD`, e.g. `3x3x3`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(['x', 'X', '×']).collect();
        let bad = || DdmError::Config(format!("block spec must look like 3x3x3, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let n: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        BlockSpec::new(n[0], n[1], n[2])
    }
}

/// One channel of one cube, stored `(t, y, x)` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicBlock {
    pub channel: usize,
    pub slab: usize,
    pub row: usize,
    pub col: usize,
    pub spec: BlockSpec,
    pub values: Vec<f64>,
}

impl CubicBlock {
    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize) -> f64 {
        self.values[(t * self.spec.h + y) * self.spec.w + x]
    }
}

/// Tiling of a video by cubes. Blocks are ordered channel, slab, block row,
/// block column.
#[derive(Clone, Debug)]
pub struct BlockGrid {
    pub slabs: usize,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub blocks: Vec<CubicBlock>,
}

/// Tiles `video` with non-overlapping cubes. Trailing frames, rows and
/// columns that do not fill a whole cube are dropped.
pub fn decompose_blocks(video: &VideoTensor, spec: BlockSpec) -> Result<BlockGrid> {
    spec.validate()?;
    let (t, h, w, c) = video.dims();
    if t < spec.d || h < spec.h || w < spec.w {
        return Err(DdmError::Data(format!(
            "video {t}x{h}x{w} (frames x height x width) is smaller than one {spec} block"
        )));
    }
    let (slabs, rows, cols) = (t / spec.d, h / spec.h, w / spec.w);
    let mut blocks = Vec::with_capacity(slabs * rows * cols * c);
    for channel in 0..c {
        for slab in 0..slabs {
            for row in 0..rows {
                for col in 0..cols {
                    let mut values = Vec::with_capacity(spec.w * spec.h * spec.d);
                    for dt in 0..spec.d {
                        for dy in 0..spec.h {
                            for dx in 0..spec.w {
                                values.push(video.get(
                                    slab * spec.d + dt,
                                    row * spec.h + dy,
                                    col * spec.w + dx,
                                    channel,
                                ));
                            }
                        }
                    }
                    blocks.push(CubicBlock {
                        channel,
                        slab,
                        row,
                        col,
                        spec,
                        values,
                    });
                }
            }
        }
    }
    Ok(BlockGrid {
        slabs,
        rows,
        cols,
        channels: c,
        blocks,
    })
}

/// Central orthogonal planes of a cube.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    /// Spatial plane at the middle frame; rows = y, cols = x.
    Xy,
    /// Plane at the middle row; rows = t, cols = x.
    Xt,
    /// Plane at the middle column; rows = t, cols = y.
    Yt,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Xy, Plane::Xt, Plane::Yt];

    fn extent(self, spec: &BlockSpec) -> (usize, usize) {
        match self {
            Plane::Xy => (spec.h, spec.w),
            Plane::Xt => (spec.d, spec.w),
            Plane::Yt => (spec.d, spec.h),
        }
    }

    /// Extracts the plane as a `rows × cols` row-major grid.
    pub fn slice(self, block: &CubicBlock) -> (usize, usize, Vec<f64>) {
        let s = block.spec;
        let (rows, cols) = self.extent(&s);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                out.push(match self {
                    Plane::Xy => block.get(s.d / 2, r, c),
                    Plane::Xt => block.get(r, s.h / 2, c),
                    Plane::Yt => block.get(r, c, s.w / 2),
                });
            }
        }
        (rows, cols, out)
    }
}

/// The 8-ring as (row, col) offsets. Entry `p` and entry `p + 4` are
/// diametrically opposite.
pub const RING8: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
];

const PAIR_ROWS: [(isize, isize); 2] = [(-1, 0), (1, 0)];
const PAIR_COLS: [(isize, isize); 2] = [(0, -1), (0, 1)];

/// Neighbourhood used on a `rows × cols` plane: the full 8-ring when both
/// axes have an interior, a single opposite pair along the one axis that
/// does, or nothing.
fn ring_for(rows: usize, cols: usize) -> &'static [(isize, isize)] {
    match (rows >= 3, cols >= 3) {
        (true, true) => &RING8,
        (true, false) => &PAIR_ROWS,
        (false, true) => &PAIR_COLS,
        (false, false) => &[],
    }
}

fn plane_pattern_len(rows: usize, cols: usize) -> usize {
    let ring = ring_for(rows, cols);
    if ring.is_empty() {
        return 0;
    }
    let centers_r = if ring.iter().any(|o| o.0 != 0) { rows - 2 } else { rows };
    let centers_c = if ring.iter().any(|o| o.1 != 0) { cols - 2 } else { cols };
    centers_r * centers_c * ring.len() / 2
}

/// Signed differences `x_p − x_{p+P/2}` for every center of a grid whose
/// full ring lies inside the grid. Centers are visited row-major.
pub fn ring_differences(
    rows: usize,
    cols: usize,
    values: &[f64],
    ring: &[(isize, isize)],
) -> Result<Vec<f64>> {
    if ring.len() % 2 != 0 {
        return Err(DdmError::Config(format!(
            "neighbourhood size must be even, got P = {}",
            ring.len()
        )));
    }
    if values.len() != rows * cols {
        return Err(DdmError::shape(
            "ring_differences",
            format!("{rows}x{cols}"),
            format!("{} values", values.len()),
        ));
    }
    let half = ring.len() / 2;
    let reach_r = ring.iter().map(|o| o.0.unsigned_abs()).max().unwrap_or(0);
    let reach_c = ring.iter().map(|o| o.1.unsigned_abs()).max().unwrap_or(0);
    let mut out = Vec::new();
    if rows < 2 * reach_r + 1 || cols < 2 * reach_c + 1 {
        return Ok(out);
    }
    let at = |r: usize, c: usize, o: (isize, isize)| {
        let rr = (r as isize + o.0) as usize;
        let cc = (c as isize + o.1) as usize;
        values[rr * cols + cc]
    };
    for r in reach_r..rows - reach_r {
        for c in reach_c..cols - reach_c {
            for p in 0..half {
                out.push(at(r, c, ring[p]) - at(r, c, ring[p + half]));
            }
        }
    }
    Ok(out)
}

/// Symmetric variation pattern of one cube on one plane.
pub fn symmetric_variation(block: &CubicBlock, plane: Plane) -> Vec<f64> {
    let (rows, cols, values) = plane.slice(block);
    // The ring is always even and sized from the plane itself.
    ring_differences(rows, cols, &values, ring_for(rows, cols))
        .expect("built-in neighbourhoods are even")
}

/// Block-grid bookkeeping for an encoded video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingLayout {
    pub spec: BlockSpec,
    pub slabs: usize,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub per_block_len: usize,
}

impl EncodingLayout {
    pub fn feature_len(&self) -> usize {
        self.slabs * self.rows * self.cols * self.channels * self.per_block_len
    }

    /// Offset of block `(channel, slab, row, col)` in the feature vector.
    pub fn block_offset(&self, channel: usize, slab: usize, row: usize, col: usize) -> usize {
        (((channel * self.slabs + slab) * self.rows + row) * self.cols + col) * self.per_block_len
    }
}

/// Concatenated block descriptors of a whole video.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedVideo {
    pub features: Vector,
    pub layout: EncodingLayout,
}

/// Encodes every cube of every channel and concatenates the descriptors in
/// channel, slab, block-row, block-column, plane (xy, xt, yt) order.
pub fn encode_video(video: &VideoTensor, spec: BlockSpec) -> Result<EncodedVideo> {
    let grid = decompose_blocks(video, spec)?;
    let layout = EncodingLayout {
        spec,
        slabs: grid.slabs,
        rows: grid.rows,
        cols: grid.cols,
        channels: grid.channels,
        per_block_len: spec.per_block_len(),
    };
    let mut features = Vec::with_capacity(layout.feature_len());
    for block in &grid.blocks {
        for plane in Plane::ALL {
            features.extend(symmetric_variation(block, plane));
        }
    }
    debug_assert_eq!(features.len(), layout.feature_len());
    Ok(EncodedVideo {
        features: Vector::from(features),
        layout,
    })
}

/// Number of whole segments of `segment_len` frames in a video.
pub fn segment_count(frames: usize, segment_len: usize) -> usize {
    if segment_len == 0 {
        0
    } else {
        frames / segment_len
    }
}

/// Encodes each non-overlapping `segment_len`-frame segment separately.
/// Trailing frames that do not fill a segment are dropped.
pub fn encode_segments(
    video: &VideoTensor,
    spec: BlockSpec,
    segment_len: usize,
) -> Result<Vec<EncodedVideo>> {
    if segment_len < spec.d {
        return Err(DdmError::Config(format!(
            "segment length {segment_len} is shorter than the block depth {}",
            spec.d
        )));
    }
    let n = segment_count(video.frames(), segment_len);
    if n == 0 {
        return Err(DdmError::Data(format!(
            "video has {} frames, fewer than one {segment_len}-frame segment",
            video.frames()
        )));
    }
    (0..n)
        .map(|s| {
            let seg = video.slice_frames(s * segment_len, (s + 1) * segment_len)?;
            encode_video(&seg, spec)
        })
        .collect()
}

/// Where a dictionary atom came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomSource {
    pub video: String,
    pub segment: usize,
}

/// Unit-norm encoded training segments, one per column.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    atoms: Matrix,
    gram: Matrix,
    sources: Vec<AtomSource>,
    segment_len: usize,
    layout: EncodingLayout,
}

impl Dictionary {
    /// Assembles a dictionary from already-normalized columns.
    pub fn from_parts(
        atoms: Matrix,
        sources: Vec<AtomSource>,
        segment_len: usize,
        layout: EncodingLayout,
    ) -> Result<Self> {
        if atoms.cols() == 0 {
            return Err(DdmError::Data("dictionary has no atoms".into()));
        }
        if atoms.cols() != sources.len() {
            return Err(DdmError::shape(
                "Dictionary::from_parts",
                format!("{} atoms", atoms.cols()),
                format!("{} sources", sources.len()),
            ));
        }
        if atoms.rows() != layout.feature_len() {
            return Err(DdmError::shape(
                "Dictionary::from_parts",
                format!("{} atom rows", atoms.rows()),
                format!("layout of {} features", layout.feature_len()),
            ));
        }
        let gram = atoms.transpose().matmul(&atoms)?;
        Ok(Dictionary {
            atoms,
            gram,
            sources,
            segment_len,
            layout,
        })
    }

    /// `d_feat × N` atom matrix.
    pub fn atoms(&self) -> &Matrix {
        &self.atoms
    }
    pub fn gram(&self) -> &Matrix {
        &self.gram
    }
    pub fn sources(&self) -> &[AtomSource] {
        &self.sources
    }
    pub fn segment_len(&self) -> usize {
        self.segment_len
    }
    pub fn layout(&self) -> &EncodingLayout {
        &self.layout
    }
    pub fn feature_len(&self) -> usize {
        self.atoms.rows()
    }
    pub fn len(&self) -> usize {
        self.atoms.cols()
    }
    pub fn is_empty(&self) -> bool {
        self.atoms.cols() == 0
    }

    /// Mask of atoms taken from `video`.
    pub fn atoms_from(&self, video: &str) -> Vec<bool> {
        self.sources.iter().map(|s| s.video == video).collect()
    }
}

/// Builds the dictionary from every whole segment of every corpus video, in
/// corpus order then segment order. Columns are scaled to unit norm; segments
/// with no variation at all (zero descriptor) are skipped.
pub fn build_dictionary<'a, I>(corpus: I, spec: BlockSpec, segment_len: usize) -> Result<Dictionary>
where
    I: IntoIterator<Item = (&'a str, &'a VideoTensor)>,
{
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut sources = Vec::new();
    let mut layout: Option<EncodingLayout> = None;
    let mut seen = 0usize;
    for (id, video) in corpus {
        seen += 1;
        let segments = encode_segments(video, spec, segment_len)
            .map_err(|e| DdmError::Data(format!("video {id}: {e}")))?;
        for (s, enc) in segments.into_iter().enumerate() {
            match layout {
                None => layout = Some(enc.layout),
                Some(l) if l != enc.layout => {
                    return Err(DdmError::Data(format!(
                        "video {id} encodes to {} features ({}x{} blocks), expected {} ({}x{} blocks)",
                        enc.layout.feature_len(),
                        enc.layout.rows,
                        enc.layout.cols,
                        l.feature_len(),
                        l.rows,
                        l.cols
                    )));
                }
                Some(_) => {}
            }
            let n = norm(&enc.features);
            if n == 0.0 {
                log::warn!("video {id} segment {s} has no variation; not used as an atom");
                continue;
            }
            columns.push(enc.features.iter().map(|v| v / n).collect());
            sources.push(AtomSource {
                video: id.to_string(),
                segment: s,
            });
        }
    }
    if seen == 0 {
        return Err(DdmError::Data("dictionary corpus is empty".into()));
    }
    let layout = layout.expect("at least one segment was encoded");
    let rows = layout.feature_len();
    let mut atoms = Matrix::zeros(rows, columns.len());
    for (j, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            atoms.set(i, j, *v);
        }
    }
    Dictionary::from_parts(atoms, sources, segment_len, layout)
}

/// Coordinate-descent stopping rule.
#[derive(Clone, Copy, Debug)]
pub struct LassoSolver {
    pub max_sweeps: usize,
    pub tolerance: f64,
}

impl Default for LassoSolver {
    fn default() -> Self {
        LassoSolver {
            max_sweeps: 10_000,
            tolerance: 1e-8,
        }
    }
}

#[inline]
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

impl LassoSolver {
    /// Minimizes `½‖y − D x‖² + λ‖x‖₁` given `G = DᵀD` and `c = Dᵀy`.
    ///
    /// Coordinates flagged in `frozen` are held at zero. A full sweep
    /// alternates with sweeps over the current support until no coordinate
    /// moves by more than the tolerance on a full sweep.
    pub fn solve_gram(
        &self,
        gram: &Matrix,
        correlation: &[f64],
        lambda: f64,
        frozen: Option<&[bool]>,
    ) -> Result<Vector> {
        let n = correlation.len();
        if gram.shape() != (n, n) {
            return Err(DdmError::shape(
                "lasso",
                format!("gram {}x{}", gram.rows(), gram.cols()),
                format!("{n} correlations"),
            ));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(DdmError::Config(format!("lasso penalty must be >= 0, got {lambda}")));
        }
        let is_frozen = |j: usize| frozen.is_some_and(|f| f[j]);
        let mut x = vec![0.0; n];
        // residual correlation Dᵀ(y − Dx)
        let mut r = correlation.to_vec();
        let mut sweeps = 0usize;
        let mut full = true;
        loop {
            let mut max_change = 0.0f64;
            for j in 0..n {
                if is_frozen(j) || (!full && x[j] == 0.0) {
                    continue;
                }
                let g = gram.get(j, j);
                if g <= 0.0 {
                    continue;
                }
                let old = x[j];
                let new = soft_threshold(r[j] + g * old, lambda) / g;
                let delta = new - old;
                if delta != 0.0 {
                    x[j] = new;
                    let row = gram.row(j);
                    for (rk, gk) in r.iter_mut().zip(row) {
                        *rk -= gk * delta;
                    }
                    max_change = max_change.max(delta.abs());
                }
            }
            sweeps += 1;
            if max_change.is_nan() {
                return Err(DdmError::NonFinite {
                    context: "lasso coordinate update".into(),
                });
            }
            if max_change < self.tolerance {
                if full {
                    return Ok(Vector::from(x));
                }
                full = true;
            } else {
                full = false;
            }
            if sweeps >= self.max_sweeps {
                let violation = kkt_violation_from_residual(&x, &r, lambda, frozen);
                return Err(DdmError::NoConvergence {
                    solver: "lasso coordinate descent",
                    iterations: sweeps,
                    violation,
                });
            }
        }
    }

    /// Lasso code of `signal` against `dict`.
    pub fn solve(
        &self,
        signal: &[f64],
        dict: &Dictionary,
        lambda: f64,
        frozen: Option<&[bool]>,
    ) -> Result<Vector> {
        if signal.len() != dict.feature_len() {
            return Err(DdmError::shape(
                "sparse_code",
                format!("signal of length {}", signal.len()),
                format!("dictionary with {} rows", dict.feature_len()),
            ));
        }
        if let Some(f) = frozen {
            if f.len() != dict.len() {
                return Err(DdmError::shape(
                    "sparse_code",
                    format!("mask of {}", f.len()),
                    format!("{} atoms", dict.len()),
                ));
            }
        }
        let correlation = dict.atoms().tmul_vec(signal)?;
        self.solve_gram(dict.gram(), &correlation, lambda, frozen)
    }
}

fn kkt_violation_from_residual(x: &[f64], r: &[f64], lambda: f64, frozen: Option<&[bool]>) -> f64 {
    x.iter()
        .zip(r)
        .enumerate()
        .filter(|(j, _)| !frozen.is_some_and(|f| f[*j]))
        .map(|(_, (&xj, &rj))| {
            if xj != 0.0 {
                (rj - lambda * xj.signum()).abs()
            } else {
                (rj.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Largest violation of the lasso optimality conditions for `x` as a code of
/// `signal` under atoms `d`: `|dⱼᵀr − λ·sign(xⱼ)|` on the support and
/// `max(0, |dⱼᵀr| − λ)` off it, where `r = signal − D x`.
pub fn kkt_violation(d: &Matrix, signal: &[f64], x: &[f64], lambda: f64) -> Result<f64> {
    let fit = d.mul_vec(x)?;
    let residual: Vec<f64> = signal.iter().zip(fit.iter()).map(|(s, f)| s - f).collect();
    let r = d.tmul_vec(&residual)?;
    Ok(kkt_violation_from_residual(x, &r, lambda, None))
}

/// Lasso objective `½‖signal − D x‖² + λ‖x‖₁`.
pub fn lasso_objective(d: &Matrix, signal: &[f64], x: &[f64], lambda: f64) -> Result<f64> {
    let fit = d.mul_vec(x)?;
    let rss: f64 = signal.iter().zip(fit.iter()).map(|(s, f)| (s - f) * (s - f)).sum();
    Ok(0.5 * rss + lambda * x.iter().map(|v| v.abs()).sum::<f64>())
}

/// Lasso code with the default solver settings.
pub fn sparse_code(signal: &[f64], dict: &Dictionary, lambda: f64) -> Result<Vector> {
    LassoSolver::default().solve(signal, dict, lambda, None)
}

/// Sequence of equal-length frames fed to the autoencoders.
#[derive(Clone, Debug, PartialEq)]
pub struct ScspSequence {
    pub video_id: String,
    pub frames: Vec<Vector>,
}

impl ScspSequence {
    pub fn new(video_id: impl Into<String>, frames: Vec<Vector>) -> Result<Self> {
        let video_id = video_id.into();
        let Some(first) = frames.first() else {
            return Err(DdmError::Data(format!("sequence {video_id} has no frames")));
        };
        let len = first.len();
        if let Some(i) = frames.iter().position(|f| f.len() != len) {
            return Err(DdmError::shape(
                "ScspSequence::new",
                format!("frame 0 of length {len}"),
                format!("frame {i} of length {}", frames[i].len()),
            ));
        }
        Ok(ScspSequence { video_id, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.frames[0].len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.iter().copied()).collect()
    }
}

/// Splits a vector into `frames` equal frames, zero-padding the tail up to
/// the next multiple of `frames`.
pub fn reshape_to_sequence(code: &[f64], frames: usize, video_id: &str) -> Result<ScspSequence> {
    if frames == 0 {
        return Err(DdmError::Config("sequence length must be at least 1".into()));
    }
    if code.is_empty() {
        return Err(DdmError::Data(format!("empty code for {video_id}")));
    }
    let frame_len = code.len().div_ceil(frames);
    let mut padded = code.to_vec();
    padded.resize(frame_len * frames, 0.0);
    let seq = padded
        .chunks(frame_len)
        .map(|c| Vector::from(c.to_vec()))
        .collect();
    ScspSequence::new(video_id, seq)
}

/// Lasso-codes every segment of `video`. The signal of each segment is
/// scaled to unit norm first so that `lambda` is relative to the signal. The
/// codes are concatenated and reshaped into one frame per segment.
///
/// With `exclude_own_atoms`, atoms taken from `video_id` itself are held at
/// zero, which is how training videos are coded against a dictionary that
/// contains them.
pub fn code_video(
    video: &VideoTensor,
    video_id: &str,
    dict: &Dictionary,
    lambda: f64,
    exclude_own_atoms: bool,
    solver: &LassoSolver,
) -> Result<ScspSequence> {
    let segments = encode_segments(video, dict.layout().spec, dict.segment_len())?;
    let mask = exclude_own_atoms.then(|| dict.atoms_from(video_id));
    let mut code = Vec::with_capacity(segments.len() * dict.len());
    for seg in &segments {
        if seg.layout != *dict.layout() {
            return Err(DdmError::shape(
                "code_video",
                format!("{video_id}: {} features", seg.layout.feature_len()),
                format!("dictionary of {} features", dict.feature_len()),
            ));
        }
        let n = norm(&seg.features);
        let signal: Vec<f64> = if n > 0.0 {
            seg.features.iter().map(|v| v / n).collect()
        } else {
            seg.features.to_vec()
        };
        code.extend(solver.solve(&signal, dict, lambda, mask.as_deref())?.iter());
    }
    reshape_to_sequence(&code, segments.len(), video_id)
}

/// Cosine similarity, zero when either side vanishes.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}
