//! Gaussian-Bernoulli restricted Boltzmann machines trained by contrastive
//! divergence, and greedy layer-wise stacking.
//!
//! The visible noise level `σ` is shared by all visible units and fixed
//! during training. Inputs are standardized per feature before a layer is
//! trained, so `σ = 1` is the natural value; the standardization is kept with
//! the layer so its parameters can be mapped back to the raw input scale.

use serde::{Deserialize, Serialize};

use crate::error::{DdmError, Result};
use crate::numeric::{dot, pairwise_sum, sigmoid_scalar, Matrix, RngStream, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrbmParams {
    /// `visible × hidden`.
    pub weights: Matrix,
    pub visible_bias: Vector,
    pub hidden_bias: Vector,
    pub sigma: f64,
}

impl GrbmParams {
    pub fn new(weights: Matrix, visible_bias: Vector, hidden_bias: Vector, sigma: f64) -> Result<Self> {
        let p = GrbmParams {
            weights,
            visible_bias,
            hidden_bias,
            sigma,
        };
        p.validate()?;
        Ok(p)
    }

    /// Small uniform weights, zero biases.
    pub fn init(visible: usize, hidden: usize, init_range: f64, sigma: f64, rng: &mut RngStream) -> Self {
        GrbmParams {
            weights: Matrix::random_uniform(visible, hidden, init_range, rng),
            visible_bias: Vector::zeros(visible),
            hidden_bias: Vector::zeros(hidden),
            sigma,
        }
    }

    pub fn visible(&self) -> usize {
        self.weights.rows()
    }

    pub fn hidden(&self) -> usize {
        self.weights.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.visible_bias.len() != self.visible() || self.hidden_bias.len() != self.hidden() {
            return Err(DdmError::shape(
                "GrbmParams",
                format!("weights {}x{}", self.visible(), self.hidden()),
                format!(
                    "biases {} (visible) and {} (hidden)",
                    self.visible_bias.len(),
                    self.hidden_bias.len()
                ),
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(DdmError::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        let finite = self.weights.is_finite()
            && self.visible_bias.iter().all(|v| v.is_finite())
            && self.hidden_bias.iter().all(|v| v.is_finite());
        if !finite {
            return Err(DdmError::NonFinite {
                context: "GRBM parameters".into(),
            });
        }
        Ok(())
    }

    fn check_visible(&self, op: &'static str, v: &[f64]) -> Result<()> {
        if v.len() != self.visible() {
            return Err(DdmError::shape(
                op,
                format!("visible vector of length {}", v.len()),
                format!("{} visible units", self.visible()),
            ));
        }
        Ok(())
    }

    fn check_hidden(&self, op: &'static str, h: &[f64]) -> Result<()> {
        if h.len() != self.hidden() {
            return Err(DdmError::shape(
                op,
                format!("hidden vector of length {}", h.len()),
                format!("{} hidden units", self.hidden()),
            ));
        }
        Ok(())
    }
}

/// `E(v, h) = Σᵢ (vᵢ − bᵢ)²/2σ² − Σⱼ cⱼhⱼ − Σᵢⱼ wᵢⱼ (vᵢ/σ) hⱼ`.
pub fn energy(v: &[f64], h: &[f64], p: &GrbmParams) -> Result<f64> {
    p.check_visible("energy", v)?;
    p.check_hidden("energy", h)?;
    let s2 = p.sigma * p.sigma;
    let quadratic: f64 = v
        .iter()
        .zip(p.visible_bias.iter())
        .map(|(vi, bi)| (vi - bi) * (vi - bi) / (2.0 * s2))
        .sum();
    let hidden_term = dot(&p.hidden_bias, h);
    let wh = p.weights.mul_vec(h)?;
    let interaction = dot(v, &wh) / p.sigma;
    Ok(quadratic - hidden_term - interaction)
}

/// `P(hⱼ = 1 | v) = s(Σᵢ wᵢⱼ vᵢ + cⱼ)`.
pub fn prob_h_given_v(v: &[f64], p: &GrbmParams) -> Result<Vector> {
    p.check_visible("prob_h_given_v", v)?;
    let pre = p.weights.tmul_vec(v)?;
    Ok(pre
        .iter()
        .zip(p.hidden_bias.iter())
        .map(|(a, c)| sigmoid_scalar(a + c))
        .collect())
}

/// Mean of the Gaussian `P(v | h)`: `uᵢ = bᵢ + σ² Σⱼ wᵢⱼ hⱼ`.
pub fn mean_v_given_h(h: &[f64], p: &GrbmParams) -> Result<Vector> {
    p.check_hidden("mean_v_given_h", h)?;
    let s2 = p.sigma * p.sigma;
    let wh = p.weights.mul_vec(h)?;
    Ok(p
        .visible_bias
        .iter()
        .zip(wh.iter())
        .map(|(b, x)| b + s2 * x)
        .collect())
}

/// Draw from `P(v | h)`: the mean plus `N(0, σ²)` noise per unit.
pub fn sample_v_given_h(h: &[f64], p: &GrbmParams, rng: &mut RngStream) -> Result<Vector> {
    let mut u = mean_v_given_h(h, p)?;
    for x in u.iter_mut() {
        *x += p.sigma * rng.normal();
    }
    Ok(u)
}

fn sample_bernoulli(probs: &[f64], rng: &mut RngStream) -> Vector {
    probs
        .iter()
        .map(|&q| if rng.bernoulli(q) { 1.0 } else { 0.0 })
        .collect()
}

/// Contrastive-divergence settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Gibbs steps in the negative phase.
    pub cd_steps: usize,
    /// Initial weights are drawn from `U(-init_range, init_range)`.
    pub init_range: f64,
    pub sigma: f64,
    /// Sample the visible layer in the negative phase instead of using its
    /// mean.
    pub sample_visible: bool,
    /// Maximum number of items used for layer-wise pre-training.
    pub subset_size: usize,
    pub seed: u64,
}

impl Default for CdConfig {
    fn default() -> Self {
        CdConfig {
            lr: 1e-3,
            epochs: 50,
            batch_size: 32,
            cd_steps: 1,
            init_range: 0.005,
            sigma: 1.0,
            sample_visible: false,
            subset_size: 200,
            seed: 0,
        }
    }
}

impl CdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(DdmError::Config(format!("CD learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.cd_steps == 0 || self.subset_size == 0 {
            return Err(DdmError::Config(
                "CD epochs, batch size, steps and subset size must all be at least 1".into(),
            ));
        }
        if !(self.init_range >= 0.0 && self.init_range.is_finite()) {
            return Err(DdmError::Config(format!("init range must be >= 0, got {}", self.init_range)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(DdmError::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// `(1/n) Σₙ aₙᵢ bₙⱼ` with a pairwise reduction over samples.
fn mean_outer(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.rows();
    let mut out = Matrix::zeros(a.cols(), b.cols());
    let mut scratch = vec![0.0; n];
    for i in 0..a.cols() {
        for j in 0..b.cols() {
            for (k, s) in scratch.iter_mut().enumerate() {
                *s = a.get(k, i) * b.get(k, j);
            }
            out.set(i, j, pairwise_sum(&scratch) / n as f64);
        }
    }
    out
}

fn column_means(m: &Matrix) -> Vec<f64> {
    crate::numeric::column_means(m).into_vec()
}

/// One CD-k step on a batch (one visible vector per row). Returns the mean
/// squared reconstruction error of the batch, where the reconstruction is
/// the visible mean after the first Gibbs step.
///
/// Batch statistics are reduced pairwise over rows in row order, so the
/// result does not depend on how the work is scheduled.
pub fn cd_update(batch: &Matrix, p: &mut GrbmParams, cfg: &CdConfig, rng: &mut RngStream) -> Result<f64> {
    if batch.cols() != p.visible() {
        return Err(DdmError::shape(
            "cd_update",
            format!("batch of {}-vectors", batch.cols()),
            format!("{} visible units", p.visible()),
        ));
    }
    if batch.rows() == 0 {
        return Err(DdmError::Data("empty CD batch".into()));
    }
    let (n, nv, nh) = (batch.rows(), p.visible(), p.hidden());
    let mut h0 = Matrix::zeros(n, nh);
    let mut vk = Matrix::zeros(n, nv);
    let mut hk = Matrix::zeros(n, nh);
    let mut sq_err = vec![0.0; n];
    for r in 0..n {
        let v0 = batch.row(r);
        let ph0 = prob_h_given_v(v0, p)?;
        h0.row_mut(r).copy_from_slice(&ph0);
        let mut h = sample_bernoulli(&ph0, rng);
        let mut v = Vector::zeros(nv);
        let mut ph = ph0.clone();
        for step in 0..cfg.cd_steps {
            v = if cfg.sample_visible {
                sample_v_given_h(&h, p, rng)?
            } else {
                mean_v_given_h(&h, p)?
            };
            if step == 0 {
                let recon = mean_v_given_h(&h, p)?;
                let e: Vec<f64> = v0.iter().zip(recon.iter()).map(|(a, b)| (a - b) * (a - b)).collect();
                sq_err[r] = pairwise_sum(&e);
            }
            ph = prob_h_given_v(&v, p)?;
            if step + 1 < cfg.cd_steps {
                h = sample_bernoulli(&ph, rng);
            }
        }
        vk.row_mut(r).copy_from_slice(&v);
        hk.row_mut(r).copy_from_slice(&ph);
    }

    let pos = mean_outer(batch, &h0);
    let neg = mean_outer(&vk, &hk);
    let v0_mean = column_means(batch);
    let vk_mean = column_means(&vk);
    let h0_mean = column_means(&h0);
    let hk_mean = column_means(&hk);

    let mut next = p.clone();
    for ((w, a), b) in next
        .weights
        .as_mut_slice()
        .iter_mut()
        .zip(pos.as_slice())
        .zip(neg.as_slice())
    {
        *w += cfg.lr * (a - b);
    }
    for (i, b) in next.visible_bias.iter_mut().enumerate() {
        *b += cfg.lr * (v0_mean[i] - vk_mean[i]);
    }
    for (j, c) in next.hidden_bias.iter_mut().enumerate() {
        *c += cfg.lr * (h0_mean[j] - hk_mean[j]);
    }
    next.validate()?;
    *p = next;
    Ok(pairwise_sum(&sq_err) / (n * nv) as f64)
}

/// Deterministic mean-field reconstruction error over `data`: each row goes
/// `v → P(h|v) → E[v|h]`.
pub fn reconstruction_error(data: &Matrix, p: &GrbmParams) -> Result<f64> {
    let mut per_row = Vec::with_capacity(data.rows());
    for r in 0..data.rows() {
        let v = data.row(r);
        let h = prob_h_given_v(v, p)?;
        let u = mean_v_given_h(&h, p)?;
        let e: Vec<f64> = v.iter().zip(u.iter()).map(|(a, b)| (a - b) * (a - b)).collect();
        per_row.push(pairwise_sum(&e));
    }
    Ok(pairwise_sum(&per_row) / (data.rows() * data.cols()) as f64)
}

/// Trains a fresh GRBM on `data` for `cfg.epochs` epochs of shuffled
/// mini-batches. Returns the parameters and the per-epoch mean batch error.
pub fn train_grbm(
    data: &Matrix,
    hidden: usize,
    cfg: &CdConfig,
    rng: &mut RngStream,
) -> Result<(GrbmParams, Vec<f64>)> {
    cfg.validate()?;
    if data.rows() == 0 {
        return Err(DdmError::Data("no GRBM training data".into()));
    }
    let mut p = GrbmParams::init(data.cols(), hidden, cfg.init_range, cfg.sigma, rng);
    let history = train_grbm_from(data, &mut p, cfg, rng)?;
    Ok((p, history))
}

/// Continues CD training of `p` on `data`.
pub fn train_grbm_from(
    data: &Matrix,
    p: &mut GrbmParams,
    cfg: &CdConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| data.row(i)).collect();
            let batch = Matrix::from_rows(&rows)?;
            let err = cd_update(&batch, p, cfg, rng).map_err(|e| match e {
                DdmError::NonFinite { context } => DdmError::NonFinite {
                    context: format!("{context} (epoch {epoch}, batch {b})"),
                },
                other => other,
            })?;
            total += err * chunk.len() as f64;
        }
        let epoch_err = total / data.rows() as f64;
        log::debug!("grbm {}x{} epoch {epoch}: reconstruction error {epoch_err:.6}", p.visible(), p.hidden());
        history.push(epoch_err);
    }
    Ok(history)
}

/// Per-feature affine standardization `(x − mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vector,
    pub scale: Vector,
}

impl Standardizer {
    /// Scales below this are treated as this value.
    pub const MIN_SCALE: f64 = 1e-4;

    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: Vector::zeros(dim),
            scale: vec![1.0; dim].into(),
        }
    }

    /// Mean and (population) standard deviation of each column.
    pub fn fit(data: &Matrix) -> Self {
        let mean = crate::numeric::column_means(data);
        let n = data.rows() as f64;
        let scale = (0..data.cols())
            .map(|c| {
                let dev: Vec<f64> = (0..data.rows())
                    .map(|r| (data.get(r, c) - mean[c]).powi(2))
                    .collect();
                (pairwise_sum(&dev) / n).sqrt().max(Self::MIN_SCALE)
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vector {
        x.iter()
            .zip(self.mean.iter().zip(self.scale.iter()))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_rows(&self, data: &Matrix) -> Matrix {
        let mut out = data.clone();
        for r in 0..out.rows() {
            let row = self.apply(data.row(r));
            out.row_mut(r).copy_from_slice(&row);
        }
        out
    }
}

/// A trained GRBM together with the standardization of its input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainedLayer {
    pub grbm: GrbmParams,
    pub input: Standardizer,
}

impl PretrainedLayer {
    /// Hidden activation means for a raw (unstandardized) input.
    pub fn activations(&self, x: &[f64]) -> Result<Vector> {
        prob_h_given_v(&self.input.apply(x), &self.grbm)
    }
}

/// Random stream used for layer `index` of a stack seeded with `seed`.
pub fn layer_stream(seed: u64, index: usize) -> RngStream {
    RngStream::new(seed).derive(index as u64)
}

/// Random stream used to draw the pre-training subset.
pub fn subset_stream(seed: u64) -> RngStream {
    RngStream::new(seed).derive(u64::MAX - 1)
}

/// Greedy layer-wise pre-training.
///
/// At most `cfg.subset_size` rows of `data` are used (a seeded random
/// subset when there are more). Each layer is trained on the standardized
/// hidden means of the layer below.
pub fn pretrain_stack(data: &Matrix, hidden_sizes: &[usize], cfg: &CdConfig) -> Result<Vec<PretrainedLayer>> {
    cfg.validate()?;
    if hidden_sizes.is_empty() {
        return Err(DdmError::Config("at least one hidden layer is required".into()));
    }
    if let Some(i) = hidden_sizes.iter().position(|&s| s == 0) {
        return Err(DdmError::Config(format!("hidden layer {i} has zero units")));
    }
    if data.rows() == 0 {
        return Err(DdmError::Data("no pre-training data".into()));
    }
    let mut input = select_subset(data, cfg.subset_size, cfg.seed)?;
    let mut layers = Vec::with_capacity(hidden_sizes.len());
    for (i, &hidden) in hidden_sizes.iter().enumerate() {
        let standardizer = Standardizer::fit(&input);
        let standardized = standardizer.apply_rows(&input);
        let mut rng = layer_stream(cfg.seed, i);
        let (grbm, history) = train_grbm(&standardized, hidden, cfg, &mut rng)?;
        log::info!(
            "pre-trained layer {} ({}x{}): reconstruction error {:.5} -> {:.5}",
            i + 1,
            grbm.visible(),
            grbm.hidden(),
            history.first().copied().unwrap_or(f64::NAN),
            history.last().copied().unwrap_or(f64::NAN)
        );
        let layer = PretrainedLayer {
            grbm,
            input: standardizer,
        };
        let mut next = Matrix::zeros(input.rows(), hidden);
        for r in 0..input.rows() {
            let a = layer.activations(input.row(r))?;
            next.row_mut(r).copy_from_slice(&a);
        }
        input = next;
        layers.push(layer);
    }
    Ok(layers)
}

/// Rows of `data` used for pre-training: all of them when they fit in
/// `subset_size`, otherwise a seeded random subset in original order.
pub fn select_subset(data: &Matrix, subset_size: usize, seed: u64) -> Result<Matrix> {
    if data.rows() <= subset_size {
        return Ok(data.clone());
    }
    let idx = subset_indices(data.rows(), subset_size, seed);
    let rows: Vec<&[f64]> = idx.iter().map(|&i| data.row(i)).collect();
    Matrix::from_rows(&rows)
}

/// Sorted indices of a seeded random `k`-subset of `0..n`.
pub fn subset_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if k >= n {
        return idx;
    }
    subset_stream(seed).shuffle(&mut idx);
    idx.truncate(k);
    idx.sort_unstable();
    idx
}
