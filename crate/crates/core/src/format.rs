//! Binary containers for videos, features and models.
//!
//! Feature and model files share one layout: an 8-byte magic, a `u64`
//! little-endian header length, a UTF-8 JSON header, then little-endian
//! `f64` payload values. Videos use a fixed 24-byte header followed by
//! 8-bit intensities.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::FeatureMode;
use crate::error::{DdmError, Result};
use crate::grbm::{GrbmParams, PretrainedLayer, Standardizer};
use crate::hddm::{ClassModel, HddmParams};
use crate::numeric::{Matrix, Vector};
use crate::pipeline::FrameScaler;
use crate::scsp::{AtomSource, BlockSpec, Dictionary, EncodingLayout, ScspSequence, VideoTensor};

pub const RVT_MAGIC: &[u8; 8] = b"RVT1\0\0\0\0";
pub const FEATURE_MAGIC: &[u8; 8] = b"SCSPFTv1";
pub const MODEL_MAGIC: &[u8; 8] = b"DDMMDLv1";

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| DdmError::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| DdmError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| DdmError::io(path, e))
}

// ---------------------------------------------------------------- RVT1

/// Pixels are quantized to `round(255 v)`.
pub fn encode_rvt(video: &VideoTensor) -> Vec<u8> {
    let (t, h, w, c) = video.dims();
    let mut out = Vec::with_capacity(24 + video.as_slice().len());
    out.extend_from_slice(RVT_MAGIC);
    for d in [t, h, w, c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend(video.as_slice().iter().map(|&v| (v * 255.0).round() as u8));
    out
}

pub fn decode_rvt(bytes: &[u8], path: &Path) -> Result<VideoTensor> {
    if bytes.len() < 24 || &bytes[..8] != RVT_MAGIC {
        return Err(DdmError::format(path, "missing RVT1 header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (t, h, w, c) = (dim(0), dim(1), dim(2), dim(3));
    let n = t
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| DdmError::format(path, "dimensions overflow"))?;
    if bytes.len() - 24 != n {
        return Err(DdmError::format(
            path,
            format!("{t}x{h}x{w}x{c} needs {n} pixel bytes, found {}", bytes.len() - 24),
        ));
    }
    let pixels = bytes[24..].iter().map(|&b| b as f64 / 255.0).collect();
    VideoTensor::new(t, h, w, c, pixels).map_err(|e| DdmError::format(path, e.to_string()))
}

pub fn read_rvt(path: &Path) -> Result<VideoTensor> {
    decode_rvt(&read_file(path)?, path)
}

pub fn write_rvt(path: &Path, video: &VideoTensor) -> Result<()> {
    write_file(path, &encode_rvt(video))
}

// ------------------------------------------------------ shared container

pub fn encode_container<H: Serialize>(magic: &[u8; 8], header: &H, data: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| DdmError::Data(format!("header serialization: {e}")))?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * data.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_container<H: DeserializeOwned>(magic: &[u8; 8], bytes: &[u8], path: &Path) -> Result<(H, Vec<f64>)> {
    if bytes.len() < 16 || &bytes[..8] != magic {
        let expected = String::from_utf8_lossy(magic);
        return Err(DdmError::format(path, format!("expected magic {expected:?}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(len))
        .ok_or_else(|| DdmError::format(path, "header length exceeds file size"))?;
    let header: H = serde_json::from_slice(body).map_err(|e| DdmError::format(path, format!("header: {e}")))?;
    let rest = &bytes[16 + len..];
    if rest.len() % 8 != 0 {
        return Err(DdmError::format(path, "payload is not a whole number of 64-bit floats"));
    }
    let data = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, data))
}

/// Splits a payload into consecutive pieces, checking the total length.
struct Payload<'a> {
    data: &'a [f64],
    at: usize,
    path: &'a Path,
}

impl<'a> Payload<'a> {
    fn new(data: &'a [f64], path: &'a Path) -> Self {
        Payload { data, at: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [f64]> {
        let s = self
            .at
            .checked_add(n)
            .and_then(|end| self.data.get(self.at..end))
            .ok_or_else(|| DdmError::format(self.path, "payload shorter than the header declares"))?;
        self.at += n;
        Ok(s)
    }

    fn vector(&mut self, n: usize) -> Result<Vector> {
        Ok(self.take(n)?.to_vec().into())
    }

    fn finish(self) -> Result<()> {
        if self.at != self.data.len() {
            return Err(DdmError::format(self.path, "payload longer than the header declares"));
        }
        Ok(())
    }
}

// ------------------------------------------------------------ SCSPFTv1

/// How a feature file was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub features: FeatureMode,
    pub block: BlockSpec,
    pub lambda: f64,
    pub segment_len: usize,
    /// Videos whose segments make up the dictionary used for coding.
    pub dictionary_sources: Vec<String>,
    pub config: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceFile {
    pub sequence: ScspSequence,
    pub label: Option<u32>,
    pub meta: FeatureMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum FeatureHeader {
    Sequence {
        video_id: String,
        label: Option<u32>,
        frames: usize,
        frame_len: usize,
        meta: FeatureMeta,
    },
    Dictionary {
        rows: usize,
        cols: usize,
        sources: Vec<AtomSource>,
        segment_len: usize,
        layout: EncodingLayout,
        meta: FeatureMeta,
    },
}

impl SequenceFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = FeatureHeader::Sequence {
            video_id: self.sequence.video_id.clone(),
            label: self.label,
            frames: self.sequence.len(),
            frame_len: self.sequence.frame_len(),
            meta: self.meta.clone(),
        };
        encode_container(FEATURE_MAGIC, &header, &self.sequence.flatten())
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        match decode_container(FEATURE_MAGIC, bytes, path)? {
            (FeatureHeader::Sequence { video_id, label, frames, frame_len, meta }, data) => {
                let mut p = Payload::new(&data, path);
                let rows = (0..frames).map(|_| p.vector(frame_len)).collect::<Result<Vec<_>>>()?;
                p.finish()?;
                let sequence = ScspSequence::new(video_id, rows).map_err(|e| DdmError::format(path, e.to_string()))?;
                Ok(SequenceFile { sequence, label, meta })
            }
            _ => Err(DdmError::format(path, "expected a sequence feature file, found a dictionary")),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DictionaryFile {
    pub dictionary: Dictionary,
    pub meta: FeatureMeta,
}

impl DictionaryFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let d = &self.dictionary;
        let header = FeatureHeader::Dictionary {
            rows: d.atoms().rows(),
            cols: d.atoms().cols(),
            sources: d.sources().to_vec(),
            segment_len: d.segment_len(),
            layout: *d.layout(),
            meta: self.meta.clone(),
        };
        encode_container(FEATURE_MAGIC, &header, d.atoms().as_slice())
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        match decode_container(FEATURE_MAGIC, bytes, path)? {
            (FeatureHeader::Dictionary { rows, cols, sources, segment_len, layout, meta }, data) => {
                let mut p = Payload::new(&data, path);
                let atoms = Matrix::from_vec(rows, cols, p.take(rows * cols)?.to_vec())?;
                p.finish()?;
                let dictionary = Dictionary::from_parts(atoms, sources, segment_len, layout)
                    .map_err(|e| DdmError::format(path, e.to_string()))?;
                Ok(DictionaryFile { dictionary, meta })
            }
            _ => Err(DdmError::format(path, "expected a dictionary file, found a sequence")),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }
}

// ------------------------------------------------------------ DDMMDLv1

/// A pre-trained stack, optionally with fine-tuned class models.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub features: FeatureMode,
    pub scaler: FrameScaler,
    pub stack: Vec<PretrainedLayer>,
    pub models: Vec<ClassModel>,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct GrbmMeta {
    visible: usize,
    hidden: usize,
    sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct ClassMeta {
    label: u32,
    epochs_run: usize,
    final_cost: f64,
    cost_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    kind: String,
    features: FeatureMode,
    /// Autoencoder depth M.
    depth: usize,
    /// `[input, hidden_1, …, code]`.
    sizes: Vec<usize>,
    labels: Vec<u32>,
    classes: Vec<ClassMeta>,
    grbm: Vec<GrbmMeta>,
    scaler: FrameScaler,
    seed: u64,
    config: BTreeMap<String, String>,
}

impl ModelFile {
    /// Input dimension followed by every hidden size of the stack.
    pub fn sizes(&self) -> Vec<usize> {
        match self.stack.first() {
            Some(first) => std::iter::once(first.grbm.visible())
                .chain(self.stack.iter().map(|l| l.grbm.hidden()))
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn labels(&self) -> Vec<u32> {
        self.models.iter().map(|m| m.label).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let sizes = self.sizes();
        for m in &self.models {
            if m.params.sizes() != sizes {
                return Err(DdmError::shape(
                    "ModelFile",
                    format!("class {} network {:?}", m.label, m.params.sizes()),
                    format!("stack {sizes:?}"),
                ));
            }
        }
        let header = ModelHeader {
            kind: if self.models.is_empty() { "pretrained" } else { "classes" }.into(),
            features: self.features,
            depth: self.stack.len(),
            sizes,
            labels: self.labels(),
            classes: self
                .models
                .iter()
                .map(|m| ClassMeta {
                    label: m.label,
                    epochs_run: m.epochs_run,
                    final_cost: m.final_cost,
                    cost_history: m.cost_history.clone(),
                })
                .collect(),
            grbm: self
                .stack
                .iter()
                .map(|l| GrbmMeta {
                    visible: l.grbm.visible(),
                    hidden: l.grbm.hidden(),
                    sigma: l.grbm.sigma,
                })
                .collect(),
            scaler: self.scaler,
            seed: self.seed,
            config: self.config.clone(),
        };
        let mut data = Vec::new();
        for l in &self.stack {
            data.extend_from_slice(l.grbm.weights.as_slice());
            data.extend_from_slice(&l.grbm.visible_bias);
            data.extend_from_slice(&l.grbm.hidden_bias);
            data.extend_from_slice(&l.input.mean);
            data.extend_from_slice(&l.input.scale);
        }
        for m in &self.models {
            data.extend(m.params.to_flat());
        }
        encode_container(MODEL_MAGIC, &header, &data)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (h, data): (ModelHeader, Vec<f64>) = decode_container(MODEL_MAGIC, bytes, path)?;
        let bad = |reason: String| DdmError::format(path, reason);
        if h.grbm.len() != h.depth || h.classes.len() != h.labels.len() {
            return Err(bad("header counts disagree".into()));
        }
        let mut p = Payload::new(&data, path);
        let mut stack = Vec::with_capacity(h.depth);
        for g in &h.grbm {
            let weights = Matrix::from_vec(g.visible, g.hidden, p.take(g.visible * g.hidden)?.to_vec())?;
            let vb = p.vector(g.visible)?;
            let hb = p.vector(g.hidden)?;
            let grbm = GrbmParams::new(weights, vb, hb, g.sigma).map_err(|e| bad(e.to_string()))?;
            let input = Standardizer {
                mean: p.vector(g.visible)?,
                scale: p.vector(g.visible)?,
            };
            stack.push(PretrainedLayer { grbm, input });
        }
        let mut models = Vec::with_capacity(h.classes.len());
        for c in h.classes {
            let mut params = HddmParams::zeros(&h.sizes).map_err(|e| bad(e.to_string()))?;
            params.set_flat(p.take(params.parameter_count())?)?;
            params.validate().map_err(|e| bad(format!("class {}: {e}", c.label)))?;
            models.push(ClassModel {
                label: c.label,
                params,
                epochs_run: c.epochs_run,
                final_cost: c.final_cost,
                cost_history: c.cost_history,
            });
        }
        p.finish()?;
        let file = ModelFile {
            features: h.features,
            scaler: h.scaler,
            stack,
            models,
            seed: h.seed,
            config: h.config,
        };
        if file.sizes() != h.sizes {
            return Err(bad(format!("declared sizes {:?} do not match the stack {:?}", h.sizes, file.sizes())));
        }
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;
    use std::path::PathBuf;

    fn p() -> PathBuf {
        PathBuf::from("mem")
    }

    #[test]
    fn rvt_layout() {
        let v = VideoTensor::from_fn(2, 1, 2, 1, |t, _, x, _| (t * 2 + x) as f64 / 3.0).unwrap();
        let b = encode_rvt(&v);
        assert_eq!(&b[..8], b"RVT1\0\0\0\0");
        assert_eq!(&b[8..24], &[2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[24..], &[0, 85, 170, 255]);
        let back = decode_rvt(&b, &p()).unwrap();
        assert_eq!(back.get(1, 0, 0, 0), 170.0 / 255.0);
        assert_eq!(encode_rvt(&back), b);
    }

    #[test]
    fn rvt_rejects_truncation() {
        let v = VideoTensor::from_fn(1, 2, 2, 1, |_, _, _, _| 0.5).unwrap();
        let b = encode_rvt(&v);
        let e = decode_rvt(&b[..b.len() - 1], Path::new("clip.rvt")).unwrap_err().to_string();
        assert!(e.contains("clip.rvt"), "{e}");
        assert!(decode_rvt(b"RVT2", &p()).is_err());
    }

    fn meta() -> FeatureMeta {
        FeatureMeta {
            features: FeatureMode::Scsp,
            block: BlockSpec::default(),
            lambda: 0.1,
            segment_len: 30,
            dictionary_sources: vec!["a".into(), "b".into()],
            config: [("seed".to_string(), "3".to_string())].into_iter().collect(),
        }
    }

    #[test]
    fn sequence_round_trip() {
        let s = ScspSequence::new("v1", vec![vec![0.1, -0.0, 1e-300].into(), vec![f64::MIN_POSITIVE, 2.0, 3.5].into()]).unwrap();
        let f = SequenceFile { sequence: s, label: Some(2), meta: meta() };
        let b = f.to_bytes().unwrap();
        assert_eq!(&b[..8], b"SCSPFTv1");
        let back = SequenceFile::from_bytes(&b, &p()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_bytes().unwrap(), b);
        assert!(DictionaryFile::from_bytes(&b, &p()).is_err());
    }

    #[test]
    fn model_header_counts_must_match_payload() {
        let mut rng = RngStream::new(1);
        let stack = vec![PretrainedLayer {
            grbm: GrbmParams::init(3, 2, 0.1, 1.0, &mut rng),
            input: Standardizer::identity(3),
        }];
        let f = ModelFile {
            features: FeatureMode::Raw,
            scaler: FrameScaler { min: 0.0, max: 1.0 },
            stack,
            models: vec![],
            seed: 0,
            config: BTreeMap::new(),
        };
        let mut b = f.to_bytes().unwrap();
        assert_eq!(ModelFile::from_bytes(&b, &p()).unwrap(), f);
        b.truncate(b.len() - 8);
        assert!(ModelFile::from_bytes(&b, &p()).is_err());
    }
}
