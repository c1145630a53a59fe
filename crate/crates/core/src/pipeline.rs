//! End-to-end fitting and classification: features, frame scaling,
//! layer-wise pre-training and per-class fine-tuning.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{classify, ClassificationReport};
use crate::config::{FeatureMode, PipelineConfig};
use crate::error::{DdmError, Result};
use crate::grbm::{pretrain_stack, subset_indices, PretrainedLayer};
use crate::hddm::{fine_tune, init_from_pretraining, ClassModel};
use crate::numeric::{Matrix, RngStream, Vector};
use crate::scsp::{build_dictionary, code_video, decompose_blocks, BlockSpec, Dictionary, LassoSolver, ScspSequence, VideoTensor};

/// A labeled training video.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub id: &'a str,
    pub video: &'a VideoTensor,
    pub label: u32,
}

/// One frame per temporal slab: the mean of every `w × h × d` block,
/// ordered channel, block row, block column.
pub fn raw_frames(video: &VideoTensor, spec: BlockSpec, video_id: &str) -> Result<ScspSequence> {
    let grid = decompose_blocks(video, spec)?;
    let per_frame = grid.channels * grid.rows * grid.cols;
    let mut frames = vec![Vector::zeros(per_frame); grid.slabs];
    let n = (spec.w * spec.h * spec.d) as f64;
    for b in &grid.blocks {
        let at = (b.channel * grid.rows + b.row) * grid.cols + b.col;
        frames[b.slab][at] = b.values.iter().sum::<f64>() / n;
    }
    ScspSequence::new(video_id, frames)
}

/// Global affine map of frame values onto `[0, 1]`, fitted on training
/// frames and clamped outside their range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameScaler {
    pub min: f64,
    pub max: f64,
}

impl FrameScaler {
    pub fn fit<'a, I: IntoIterator<Item = &'a ScspSequence>>(seqs: I) -> Result<Self> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in seqs.into_iter().flat_map(|s| s.frames.iter()).flat_map(|f| f.iter()) {
            min = min.min(*v);
            max = max.max(*v);
        }
        if !(min.is_finite() && max.is_finite()) {
            return Err(DdmError::Data("no finite frame values to fit the scaler".into()));
        }
        Ok(FrameScaler { min, max })
    }

    pub fn apply_value(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            ((v - self.min) / span).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }

    pub fn apply(&self, seq: &ScspSequence) -> ScspSequence {
        ScspSequence {
            video_id: seq.video_id.clone(),
            frames: seq
                .frames
                .iter()
                .map(|f| f.iter().map(|&v| self.apply_value(v)).collect())
                .collect(),
        }
    }
}

/// Turns videos into unscaled frame sequences.
#[derive(Clone, Debug)]
pub enum Featurizer {
    Scsp { dictionary: Dictionary, lambda: f64 },
    Raw { spec: BlockSpec },
}

impl Featurizer {
    /// Builds the featurizer from training videos only.
    pub fn fit(samples: &[Sample<'_>], cfg: &PipelineConfig) -> Result<Self> {
        Ok(match cfg.features {
            FeatureMode::Scsp => Featurizer::Scsp {
                dictionary: build_dictionary(samples.iter().map(|s| (s.id, s.video)), cfg.block, cfg.segment_len())?,
                lambda: cfg.lambda,
            },
            FeatureMode::Raw => Featurizer::Raw { spec: cfg.block },
        })
    }

    pub fn mode(&self) -> FeatureMode {
        match self {
            Featurizer::Scsp { .. } => FeatureMode::Scsp,
            Featurizer::Raw { .. } => FeatureMode::Raw,
        }
    }

    pub fn dictionary(&self) -> Option<&Dictionary> {
        match self {
            Featurizer::Scsp { dictionary, .. } => Some(dictionary),
            Featurizer::Raw { .. } => None,
        }
    }

    /// Frames of a video. A training video is coded without the atoms cut
    /// from itself.
    pub fn frames(&self, video: &VideoTensor, id: &str, training: bool) -> Result<ScspSequence> {
        match self {
            Featurizer::Scsp { dictionary, lambda } => {
                code_video(video, id, dictionary, *lambda, training, &LassoSolver::default())
            }
            Featurizer::Raw { spec } => raw_frames(video, *spec, id),
        }
    }
}

/// Video ids that fed each fitted stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dictionary: BTreeSet<String>,
    pub scaler: BTreeSet<String>,
    pub pretraining: BTreeSet<String>,
    pub fine_tune: BTreeMap<u32, BTreeSet<String>>,
}

impl Provenance {
    pub fn contains(&self, id: &str) -> bool {
        self.dictionary.contains(id)
            || self.scaler.contains(id)
            || self.pretraining.contains(id)
            || self.fine_tune.values().any(|s| s.contains(id))
    }
}

/// Everything learned from a training set.
#[derive(Clone, Debug)]
pub struct TrainedPipeline {
    pub featurizer: Featurizer,
    pub scaler: FrameScaler,
    pub stack: Vec<PretrainedLayer>,
    pub models: Vec<ClassModel>,
    pub provenance: Provenance,
}

/// Rng stream for fine-tuning class `label`.
pub fn class_stream(seed: u64, label: u32) -> RngStream {
    RngStream::new(seed).derive(1 << 32 | label as u64)
}

/// Layer-wise pre-training on a seeded subset of all training frames.
/// Returns the stack and the ids of the videos whose frames were used.
pub fn pretrain(seqs: &[ScspSequence], cfg: &PipelineConfig) -> Result<(Vec<PretrainedLayer>, BTreeSet<String>)> {
    let mut owners = Vec::new();
    let mut rows: Vec<&[f64]> = Vec::new();
    for s in seqs {
        for f in &s.frames {
            owners.push(s.video_id.as_str());
            rows.push(f);
        }
    }
    if rows.is_empty() {
        return Err(DdmError::Data("no frames for pre-training".into()));
    }
    let data = Matrix::from_rows(&rows)?;
    let mut grbm = cfg.grbm.clone();
    grbm.seed = cfg.seed;
    let stack = pretrain_stack(&data, &cfg.layers, &grbm)?;
    let used = subset_indices(data.rows(), grbm.subset_size, grbm.seed)
        .into_iter()
        .map(|i| owners[i].to_string())
        .collect();
    Ok((stack, used))
}

/// Fine-tunes one model per class from the shared pre-trained stack.
/// Classes train in parallel; each draws from its own stream.
pub fn train_classes(
    labeled: &[(ScspSequence, u32)],
    stack: &[PretrainedLayer],
    cfg: &PipelineConfig,
) -> Result<Vec<ClassModel>> {
    let init = init_from_pretraining(stack)?;
    let mut by_class: BTreeMap<u32, Vec<ScspSequence>> = BTreeMap::new();
    for (s, l) in labeled {
        by_class.entry(*l).or_default().push(s.clone());
    }
    by_class
        .into_par_iter()
        .map(|(label, seqs)| {
            let mut rng = class_stream(cfg.seed, label);
            fine_tune(label, &seqs, &init, &cfg.fine_tune, &mut rng)
        })
        .collect()
}

/// Fits the whole pipeline on `samples`.
pub fn fit(samples: &[Sample<'_>], cfg: &PipelineConfig) -> Result<TrainedPipeline> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(DdmError::Data("no training videos".into()));
    }
    let featurizer = Featurizer::fit(samples, cfg)?;
    let raw: Vec<ScspSequence> = samples
        .par_iter()
        .map(|s| featurizer.frames(s.video, s.id, true))
        .collect::<Result<_>>()?;
    let scaler = FrameScaler::fit(&raw)?;
    let scaled: Vec<ScspSequence> = raw.iter().map(|s| scaler.apply(s)).collect();
    let (stack, pretrain_ids) = pretrain(&scaled, cfg)?;
    let labeled: Vec<(ScspSequence, u32)> = scaled.into_iter().zip(samples.iter().map(|s| s.label)).collect();
    let models = train_classes(&labeled, &stack, cfg)?;

    let ids = |it: &mut dyn Iterator<Item = &str>| it.map(str::to_string).collect::<BTreeSet<_>>();
    let mut provenance = Provenance {
        dictionary: match featurizer.dictionary() {
            Some(d) => ids(&mut d.sources().iter().map(|s| s.video.as_str())),
            None => BTreeSet::new(),
        },
        scaler: ids(&mut samples.iter().map(|s| s.id)),
        pretraining: pretrain_ids,
        fine_tune: BTreeMap::new(),
    };
    for s in samples {
        provenance.fine_tune.entry(s.label).or_default().insert(s.id.to_string());
    }
    Ok(TrainedPipeline {
        featurizer,
        scaler,
        stack,
        models,
        provenance,
    })
}

impl TrainedPipeline {
    /// Scaled frames of a query video.
    pub fn query_frames(&self, video: &VideoTensor, id: &str) -> Result<ScspSequence> {
        Ok(self.scaler.apply(&self.featurizer.frames(video, id, false)?))
    }

    pub fn classify(&self, video: &VideoTensor, id: &str) -> Result<ClassificationReport> {
        classify(&self.query_frames(video, id)?, &self.models)
    }
}
