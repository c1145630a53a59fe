//! Flat `key = value` pipeline configuration with `#` comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DdmError, Result};
use crate::grbm::CdConfig;
use crate::hddm::FineTuneConfig;
use crate::scsp::BlockSpec;

/// What the class models consume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Sparse codes of symmetric-variation descriptors.
    Scsp,
    /// Block-averaged raw frames, one per temporal slab.
    Raw,
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Scsp => "scsp",
            FeatureMode::Raw => "raw",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = DdmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scsp" => Ok(FeatureMode::Scsp),
            "raw" => Ok(FeatureMode::Raw),
            other => Err(DdmError::Config(format!("unknown feature mode {other:?} (expected scsp or raw)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Loo,
    Split,
}

impl FromStr for Protocol {
    type Err = DdmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loo" => Ok(Protocol::Loo),
            "split" => Ok(Protocol::Split),
            other => Err(DdmError::Config(format!("unknown protocol {other:?} (expected loo or split)"))),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Loo => "loo",
            Protocol::Split => "split",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub features: FeatureMode,
    pub block: BlockSpec,
    pub lambda: f64,
    /// Frames per dictionary segment; `None` means ten block depths.
    pub segment_len: Option<usize>,
    /// Hidden layer sizes from the first hidden layer to the code.
    pub layers: Vec<usize>,
    pub grbm: CdConfig,
    pub fine_tune: FineTuneConfig,
    pub seed: u64,
    pub protocol: Protocol,
    pub manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub feature_dir: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            features: FeatureMode::Scsp,
            block: BlockSpec::default(),
            lambda: 0.1,
            segment_len: None,
            layers: vec![64, 32, 16, 8],
            grbm: CdConfig::default(),
            fine_tune: FineTuneConfig::default(),
            seed: 0,
            protocol: Protocol::Loo,
            manifest: None,
            test_manifest: None,
            feature_dir: None,
            pretrained: None,
            model: None,
            report: None,
        }
    }
}

/// Every recognized key, in echo order.
pub const KEYS: &[&str] = &[
    "features",
    "block",
    "lambda",
    "segment_len",
    "layers",
    "grbm_lr",
    "grbm_epochs",
    "grbm_batch",
    "cd_steps",
    "init_range",
    "sigma",
    "sample_visible",
    "subset_size",
    "ft_lr",
    "ft_decay",
    "ft_epochs",
    "ft_batch",
    "lambda_wd",
    "lambda_sp",
    "rho",
    "seed",
    "protocol",
    "manifest",
    "test_manifest",
    "feature_dir",
    "pretrained",
    "model",
    "report",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| DdmError::Config(format!("{key} = {value:?}: {e}")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl PipelineConfig {
    pub fn segment_len(&self) -> usize {
        self.segment_len.unwrap_or(self.block.d * 10)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "features" => self.features = v.parse()?,
            "block" => self.block = v.parse()?,
            "lambda" => self.lambda = parse(key, v)?,
            "segment_len" => {
                self.segment_len = if v.is_empty() || v == "auto" { None } else { Some(parse(key, v)?) }
            }
            "layers" => {
                self.layers = v
                    .split(',')
                    .map(|s| parse::<usize>(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "grbm_lr" => self.grbm.lr = parse(key, v)?,
            "grbm_epochs" => self.grbm.epochs = parse(key, v)?,
            "grbm_batch" => self.grbm.batch_size = parse(key, v)?,
            "cd_steps" => self.grbm.cd_steps = parse(key, v)?,
            "init_range" => self.grbm.init_range = parse(key, v)?,
            "sigma" => self.grbm.sigma = parse(key, v)?,
            "sample_visible" => self.grbm.sample_visible = parse(key, v)?,
            "subset_size" => self.grbm.subset_size = parse(key, v)?,
            "ft_lr" => self.fine_tune.lr = parse(key, v)?,
            "ft_decay" => self.fine_tune.lr_decay = parse(key, v)?,
            "ft_epochs" => self.fine_tune.epochs = parse(key, v)?,
            "ft_batch" => self.fine_tune.batch_size = parse(key, v)?,
            "lambda_wd" => self.fine_tune.lambda_wd = parse(key, v)?,
            "lambda_sp" => self.fine_tune.lambda_sp = parse(key, v)?,
            "rho" => self.fine_tune.rho = parse(key, v)?,
            "seed" => {
                self.seed = parse(key, v)?;
                self.grbm.seed = self.seed;
            }
            "protocol" => self.protocol = v.parse()?,
            "manifest" => self.manifest = opt_path(v),
            "test_manifest" => self.test_manifest = opt_path(v),
            "feature_dir" => self.feature_dir = opt_path(v),
            "pretrained" => self.pretrained = opt_path(v),
            "model" => self.model = opt_path(v),
            "report" => self.report = opt_path(v),
            other => return Err(DdmError::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "features" => self.features.to_string(),
            "block" => self.block.to_string(),
            "lambda" => self.lambda.to_string(),
            "segment_len" => self.segment_len().to_string(),
            "layers" => self.layers.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(","),
            "grbm_lr" => self.grbm.lr.to_string(),
            "grbm_epochs" => self.grbm.epochs.to_string(),
            "grbm_batch" => self.grbm.batch_size.to_string(),
            "cd_steps" => self.grbm.cd_steps.to_string(),
            "init_range" => self.grbm.init_range.to_string(),
            "sigma" => self.grbm.sigma.to_string(),
            "sample_visible" => self.grbm.sample_visible.to_string(),
            "subset_size" => self.grbm.subset_size.to_string(),
            "ft_lr" => self.fine_tune.lr.to_string(),
            "ft_decay" => self.fine_tune.lr_decay.to_string(),
            "ft_epochs" => self.fine_tune.epochs.to_string(),
            "ft_batch" => self.fine_tune.batch_size.to_string(),
            "lambda_wd" => self.fine_tune.lambda_wd.to_string(),
            "lambda_sp" => self.fine_tune.lambda_sp.to_string(),
            "rho" => self.fine_tune.rho.to_string(),
            "seed" => self.seed.to_string(),
            "protocol" => self.protocol.to_string(),
            "manifest" => show_path(&self.manifest),
            "test_manifest" => show_path(&self.test_manifest),
            "feature_dir" => show_path(&self.feature_dir),
            "pretrained" => show_path(&self.pretrained),
            "model" => show_path(&self.model),
            "report" => show_path(&self.report),
            _ => return None,
        };
        Some(s)
    }

    /// Parses configuration text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DdmError::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            cfg.set(k.trim(), v).map_err(|e| match e {
                DdmError::Config(m) => DdmError::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.block.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(DdmError::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.segment_len() < self.block.d {
            return Err(DdmError::Config(format!(
                "segment_len {} is shorter than the block depth {}",
                self.segment_len(),
                self.block.d
            )));
        }
        if self.layers.is_empty() || self.layers.contains(&0) {
            return Err(DdmError::Config("layers must list at least one positive size".into()));
        }
        self.grbm.validate()?;
        self.fine_tune.validate()?;
        Ok(())
    }

    /// Every key with its current value.
    pub fn echo(&self) -> BTreeMap<String, String> {
        KEYS.iter()
            .map(|&k| (k.to_string(), self.get(k).expect("known key")))
            .collect()
    }

    /// Configuration text that parses back to this configuration.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|&k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }
}
