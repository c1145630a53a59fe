//! Labeled corpora, the synthetic grating generator, evaluation protocols
//! and metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, Protocol};
use crate::error::{DdmError, Result};
use crate::format::{read_rvt, write_file, write_rvt};
use crate::numeric::RngStream;
use crate::pipeline::{fit, Sample};
use crate::scsp::VideoTensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusItem {
    pub id: String,
    pub video: VideoTensor,
    pub label: u32,
}

/// Videos with labels in `1..=classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCorpus {
    pub items: Vec<CorpusItem>,
    pub classes: u32,
    /// Manifest the corpus was read from, if any.
    pub source: Option<PathBuf>,
}

impl LabeledCorpus {
    pub fn new(items: Vec<CorpusItem>, source: Option<PathBuf>) -> Result<Self> {
        if items.is_empty() {
            return Err(DdmError::Data("corpus is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for it in &items {
            if it.label == 0 {
                return Err(DdmError::Data(format!("{}: labels start at 1", it.id)));
            }
            if !seen.insert(it.id.as_str()) {
                return Err(DdmError::Data(format!("duplicate video id {}", it.id)));
            }
        }
        let classes = items.iter().map(|i| i.label).max().unwrap_or(0);
        Ok(LabeledCorpus { items, classes, source })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<u32> {
        (1..=self.classes).collect()
    }

    pub fn samples(&self) -> Vec<Sample<'_>> {
        self.items
            .iter()
            .map(|i| Sample { id: &i.id, video: &i.video, label: i.label })
            .collect()
    }
}

/// One `(path, label)` line of a manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: u32,
}

/// Parses `path<TAB>label` lines, skipping blanks and `#` comments.
pub fn parse_manifest(text: &str, origin: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let bad = |why: &str| DdmError::Data(format!("{} line {}: {why}", origin.display(), n + 1));
        let (path, label) = line.rsplit_once('\t').ok_or_else(|| bad("expected path<TAB>label"))?;
        let label: u32 = label.trim().parse().map_err(|_| bad("label is not a positive integer"))?;
        if label == 0 {
            return Err(bad("label out of range (labels start at 1)"));
        }
        out.push(ManifestEntry { path: path.to_string(), label });
    }
    Ok(out)
}

/// Reads a manifest and every video it lists. Relative paths are resolved
/// against the manifest's directory; the path as written is the video id.
pub fn load_corpus(manifest: &Path) -> Result<LabeledCorpus> {
    let text = std::fs::read_to_string(manifest).map_err(|e| DdmError::io(manifest, e))?;
    let entries = parse_manifest(&text, manifest)?;
    if entries.is_empty() {
        return Err(DdmError::Data(format!("manifest {} lists no videos", manifest.display())));
    }
    let base = manifest.parent().unwrap_or(Path::new(""));
    let items = entries
        .par_iter()
        .map(|e| {
            let video = read_rvt(&base.join(&e.path))?;
            Ok(CorpusItem { id: e.path.clone(), video, label: e.label })
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledCorpus::new(items, Some(manifest.to_path_buf()))
}

/// Writes every video as `<id>.rvt` under `dir` plus `manifest.tsv`, whose
/// leading comment lines carry `header`. Returns the manifest path.
pub fn write_corpus(dir: &Path, corpus: &LabeledCorpus, header: &BTreeMap<String, String>) -> Result<PathBuf> {
    let mut manifest = String::new();
    for (k, v) in header {
        let _ = writeln!(manifest, "# {k} = {v}");
    }
    for it in &corpus.items {
        let name = format!("{}.rvt", sanitize(&it.id));
        write_rvt(&dir.join(&name), &it.video)?;
        let _ = writeln!(manifest, "{name}\t{}", it.label);
    }
    let path = dir.join("manifest.tsv");
    write_file(&path, manifest.as_bytes())?;
    Ok(path)
}

/// File-name-safe form of a video id.
pub fn sanitize(id: &str) -> String {
    let stem = id.strip_suffix(".rvt").unwrap_or(id);
    stem.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

// ------------------------------------------------------------ synthetic

/// Parameters of the drifting-grating corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: u32,
    pub per_class: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { classes: 3, per_class: 10, frames: 30, height: 24, width: 24, seed: 7, noise: 0.03 }
    }
}

/// Orientation (radians) and drift speed (pixels per frame) of a class.
pub fn class_motion(label: u32, classes: u32) -> (f64, f64) {
    let k = (label - 1) as f64;
    let theta = std::f64::consts::PI * k / classes as f64;
    let speed = 0.5 + 0.5 * k;
    (theta, speed)
}

/// Spatial period of every grating, in pixels.
pub const GRATING_PERIOD: f64 = 8.0;

/// Each class is a grating drifting along its own orientation at its own
/// speed. Videos differ by a small phase jitter, contrast, a global
/// brightness offset and seeded pixel noise; intensities are clamped to
/// `[0, 1]`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<LabeledCorpus> {
    if spec.classes == 0 || spec.per_class == 0 || spec.frames == 0 || spec.height == 0 || spec.width == 0 {
        return Err(DdmError::Config("synthetic corpus dimensions must all be at least 1".into()));
    }
    let k = 2.0 * std::f64::consts::PI / GRATING_PERIOD;
    let mut items = Vec::with_capacity(spec.classes as usize * spec.per_class);
    for label in 1..=spec.classes {
        let (theta, speed) = class_motion(label, spec.classes);
        let (c, s) = (theta.cos(), theta.sin());
        for i in 0..spec.per_class {
            let index = (label - 1) as u64 * spec.per_class as u64 + i as u64;
            let mut rng = RngStream::new(spec.seed).derive(index);
            let phase = rng.uniform_range(-0.4, 0.4);
            let contrast = rng.uniform_range(0.25, 0.35);
            let offset = rng.uniform_range(-0.15, 0.15);
            let mut noise = Vec::with_capacity(spec.frames * spec.height * spec.width);
            for _ in 0..spec.frames * spec.height * spec.width {
                noise.push(spec.noise * rng.normal());
            }
            let (h, w) = (spec.height, spec.width);
            let video = VideoTensor::from_fn(spec.frames, h, w, 1, |t, y, x, _| {
                let u = x as f64 * c + y as f64 * s - speed * t as f64;
                let v = 0.5 + offset + contrast * (k * u + phase).sin() + noise[(t * h + y) * w + x];
                v.clamp(0.0, 1.0)
            })?;
            items.push(CorpusItem { id: format!("c{label}_v{i:02}"), video, label });
        }
    }
    LabeledCorpus::new(items, None)
}

/// Dominant orientation (radians, modulo π) of the spatial gradient,
/// weighting each pixel by its squared temporal derivative.
pub fn motion_orientation(video: &VideoTensor) -> f64 {
    let (t, h, w, _) = video.dims();
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for f in 0..t.saturating_sub(1) {
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let gx = (video.get(f, y, x + 1, 0) - video.get(f, y, x - 1, 0)) / 2.0;
                let gy = (video.get(f, y + 1, x, 0) - video.get(f, y - 1, x, 0)) / 2.0;
                let gt = video.get(f + 1, y, x, 0) - video.get(f, y, x, 0);
                let wgt = gt * gt;
                sxx += wgt * gx * gx;
                syy += wgt * gy * gy;
                sxy += wgt * gx * gy;
            }
        }
    }
    let a = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    a.rem_euclid(std::f64::consts::PI)
}

// ----------------------------------------------------------- evaluation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub truth: u32,
    pub predicted: u32,
    /// Accumulated vote per class, in label order.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub protocol: String,
    pub seed: u64,
    pub labels: Vec<u32>,
    pub predictions: Vec<Prediction>,
    pub accuracy: f64,
    pub map: f64,
    /// `confusion[truth − 1][predicted − 1]`.
    pub confusion: Vec<Vec<usize>>,
    pub config: BTreeMap<String, String>,
}

impl EvalResult {
    pub fn from_predictions(protocol: &str, labels: Vec<u32>, predictions: Vec<Prediction>, cfg: &PipelineConfig) -> Result<Self> {
        let c = labels.len();
        let index = |l: u32| labels.iter().position(|&x| x == l);
        let mut confusion = vec![vec![0usize; c]; c];
        let mut truth_idx = Vec::with_capacity(predictions.len());
        for p in &predictions {
            let (t, q) = match (index(p.truth), index(p.predicted)) {
                (Some(t), Some(q)) => (t, q),
                _ => return Err(DdmError::Data(format!("{}: label outside 1..={c}", p.id))),
            };
            confusion[t][q] += 1;
            truth_idx.push(t);
        }
        let total = predictions.len();
        let correct: usize = (0..c).map(|i| confusion[i][i]).sum();
        let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        let scores: Vec<Vec<f64>> = predictions.iter().map(|p| p.weights.clone()).collect();
        let map = mean_average_precision(&scores, &truth_idx, c)?;
        Ok(EvalResult {
            protocol: protocol.to_string(),
            seed: cfg.seed,
            labels,
            predictions,
            accuracy,
            map,
            confusion,
            config: cfg.echo(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| DdmError::Data(format!("result serialization: {e}")))
    }

    /// Confusion matrix with a `truth\predicted` header row; leading `#`
    /// lines carry the seed.
    pub fn confusion_csv(&self) -> String {
        let mut out = format!("# protocol = {}\n# seed = {}\n", self.protocol, self.seed);
        out.push_str("truth\\predicted");
        for l in &self.labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            let _ = write!(out, "{l}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Mean over classes of the average precision of ranking all queries by
/// their weight for that class. `truth[q]` is the class index of query `q`.
/// Classes without positives are skipped with a warning.
pub fn mean_average_precision(scores: &[Vec<f64>], truth: &[usize], classes: usize) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(DdmError::shape("mean_average_precision", format!("{} score rows", scores.len()), format!("{} labels", truth.len())));
    }
    if let Some(q) = scores.iter().position(|s| s.len() != classes) {
        return Err(DdmError::Data(format!("query {q} has {} scores for {classes} classes", scores[q].len())));
    }
    let mut aps = Vec::new();
    for c in 0..classes {
        let positives = truth.iter().filter(|&&t| t == c).count();
        if positives == 0 {
            log::warn!("class index {c} has no positive queries; left out of mAP");
            continue;
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b][c].total_cmp(&scores[a][c]).then(a.cmp(&b)));
        let (mut hits, mut sum) = (0usize, 0.0);
        for (rank, &q) in order.iter().enumerate() {
            if truth[q] == c {
                hits += 1;
                sum += hits as f64 / (rank + 1) as f64;
            }
        }
        aps.push(sum / positives as f64);
    }
    if aps.is_empty() {
        return Err(DdmError::Data("no class has positive queries".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

fn check_classes(samples: &[Sample<'_>], classes: u32, context: &str) -> Result<()> {
    let present: BTreeSet<u32> = samples.iter().map(|s| s.label).collect();
    for c in 1..=classes {
        if !present.contains(&c) {
            return Err(DdmError::Data(format!("{context}: class {c} has no training videos")));
        }
    }
    Ok(())
}

/// Leave-one-out: each item is classified by a pipeline fitted on all the
/// others. Folds run in parallel and are merged in corpus order.
pub fn loo_evaluate(corpus: &LabeledCorpus, cfg: &PipelineConfig) -> Result<EvalResult> {
    if corpus.len() < 2 {
        return Err(DdmError::Data("leave-one-out needs at least two videos".into()));
    }
    if corpus.classes < 2 {
        return Err(DdmError::Data("evaluation needs at least two classes".into()));
    }
    let all = corpus.samples();
    let predictions = (0..corpus.len())
        .into_par_iter()
        .map(|i| {
            let held = &corpus.items[i];
            let train: Vec<Sample> = all.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, s)| *s).collect();
            check_classes(&train, corpus.classes, &format!("fold {}", held.id))?;
            let fitted = fit(&train, cfg)?;
            if fitted.provenance.contains(&held.id) {
                return Err(DdmError::Data(format!("fold {}: held-out video reached training", held.id)));
            }
            let report = fitted.classify(&held.video, &held.id)?;
            log::info!("fold {}: truth {} predicted {}", held.id, held.label, report.predicted);
            Ok(Prediction {
                id: held.id.clone(),
                truth: held.label,
                predicted: report.predicted,
                weights: corpus.labels().iter().map(|&l| report.weight_of(l).unwrap_or(0.0)).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalResult::from_predictions("loo", corpus.labels(), predictions, cfg)
}

/// Fixed split: fit on `train`, classify every item of `test`.
pub fn split_evaluate(train: &LabeledCorpus, test: &LabeledCorpus, cfg: &PipelineConfig) -> Result<EvalResult> {
    let classes = train.classes.max(test.classes);
    if classes < 2 {
        return Err(DdmError::Data("evaluation needs at least two classes".into()));
    }
    let samples = train.samples();
    check_classes(&samples, classes, "training split")?;
    let fitted = fit(&samples, cfg)?;
    let labels: Vec<u32> = (1..=classes).collect();
    let predictions = test
        .items
        .par_iter()
        .map(|it| {
            if fitted.provenance.contains(&it.id) {
                return Err(DdmError::Data(format!("test video {} also appears in training", it.id)));
            }
            let report = fitted.classify(&it.video, &it.id)?;
            Ok(Prediction {
                id: it.id.clone(),
                truth: it.label,
                predicted: report.predicted,
                weights: labels.iter().map(|&l| report.weight_of(l).unwrap_or(0.0)).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalResult::from_predictions("split", labels, predictions, cfg)
}

/// Runs the protocol named in the configuration.
pub fn evaluate(corpus: &LabeledCorpus, test: Option<&LabeledCorpus>, cfg: &PipelineConfig) -> Result<EvalResult> {
    match (cfg.protocol, test) {
        (Protocol::Loo, _) => loo_evaluate(corpus, cfg),
        (Protocol::Split, Some(t)) => split_evaluate(corpus, t, cfg),
        (Protocol::Split, None) => Err(DdmError::Config("split protocol needs test_manifest".into())),
    }
}
