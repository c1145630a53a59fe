//! Weighted voting over per-class reconstruction errors.
//!
//! Every frame of a query casts the vote `μ_c = exp(−‖x − x̃_c‖₂)` for each
//! class model `c`; the class with the largest accumulated vote wins, ties
//! going to the lowest label.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DdmError, Result};
use crate::hddm::{reconstruct, ClassModel};
use crate::numeric::pairwise_sum;
use crate::scsp::ScspSequence;

pub const TIE_BREAK: &str = "lowest class label";

/// Vote weight for a reconstruction error norm.
pub fn weight_from_error(error: f64) -> f64 {
    (-error).exp()
}

/// Vote of one frame for one class.
pub fn vote_weight(frame: &[f64], model: &ClassModel) -> Result<f64> {
    Ok(weight_from_error(reconstruct(frame, model)?.error))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub query: String,
    /// Class labels in the order of `weights` and `errors`.
    pub labels: Vec<u32>,
    /// Accumulated vote per class.
    pub weights: Vec<f64>,
    pub predicted: u32,
    /// `errors[c][l]`: reconstruction error of frame `l` under class `c`.
    pub errors: Vec<Vec<f64>>,
    pub tie_break: String,
}

impl ClassificationReport {
    /// Builds a report from a class × frame error table.
    pub fn from_errors(query: impl Into<String>, labels: Vec<u32>, errors: Vec<Vec<f64>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(DdmError::Config("no class models to vote with".into()));
        }
        if labels.len() != errors.len() {
            return Err(DdmError::shape(
                "ClassificationReport",
                format!("{} labels", labels.len()),
                format!("{} error rows", errors.len()),
            ));
        }
        let weights: Vec<f64> = errors
            .iter()
            .map(|row| {
                let votes: Vec<f64> = row.iter().map(|&e| weight_from_error(e)).collect();
                pairwise_sum(&votes)
            })
            .collect();
        let predicted = argmax_label(&labels, &weights);
        Ok(ClassificationReport {
            query: query.into(),
            labels,
            weights,
            predicted,
            errors,
            tie_break: TIE_BREAK.into(),
        })
    }

    pub fn frame_count(&self) -> usize {
        self.errors.first().map_or(0, Vec::len)
    }

    pub fn weight_of(&self, label: u32) -> Option<f64> {
        self.labels.iter().position(|&l| l == label).map(|i| self.weights[i])
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| DdmError::Data(format!("report serialization: {e}")))
    }

    /// Aligned table: one row per class with its accumulated weight, the
    /// predicted class marked with `*`.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "query: {}", self.query);
        let _ = writeln!(out, "{:>8}  {:>16}  {:>14}", "class", "weight", "mean error");
        for (i, &label) in self.labels.iter().enumerate() {
            let row = &self.errors[i];
            let mean = if row.is_empty() { 0.0 } else { pairwise_sum(row) / row.len() as f64 };
            let mark = if label == self.predicted { "*" } else { " " };
            let _ = writeln!(out, "{:>7}{mark}  {:>16.10}  {:>14.6}", label, self.weights[i], mean);
        }
        let _ = writeln!(out, "predicted: {} (ties: {})", self.predicted, self.tie_break);
        out
    }
}

/// Label with the largest weight; the lowest label wins a tie.
pub fn argmax_label(labels: &[u32], weights: &[f64]) -> u32 {
    let mut best: Option<(u32, f64)> = None;
    for (&l, &w) in labels.iter().zip(weights) {
        best = match best {
            Some((bl, bw)) if w < bw || (w == bw && l > bl) => Some((bl, bw)),
            _ => Some((l, w)),
        };
    }
    best.expect("labels checked non-empty").0
}

/// Classifies `query` against every class model.
pub fn classify(query: &ScspSequence, models: &[ClassModel]) -> Result<ClassificationReport> {
    if models.is_empty() {
        return Err(DdmError::Config("no class models to vote with".into()));
    }
    let mut labels: Vec<u32> = models.iter().map(|m| m.label).collect();
    labels.sort_unstable();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(DdmError::Config("duplicate class label in model set".into()));
    }
    if query.is_empty() {
        return Err(DdmError::Data(format!("query {} has no frames", query.video_id)));
    }
    for m in models {
        if m.params.input_dim() != query.frame_len() {
            return Err(DdmError::shape(
                "classify",
                format!("query {} frames of length {}", query.video_id, query.frame_len()),
                format!("class {} model input dim {}", m.label, m.params.input_dim()),
            ));
        }
    }
    let errors: Vec<(u32, Vec<f64>)> = models
        .par_iter()
        .map(|m| {
            let row = query
                .frames
                .iter()
                .map(|f| reconstruct(f, m).map(|r| r.error))
                .collect::<Result<Vec<f64>>>()?;
            Ok((m.label, row))
        })
        .collect::<Result<_>>()?;
    let mut errors = errors;
    errors.sort_by_key(|(l, _)| *l);
    let (labels, rows): (Vec<u32>, Vec<Vec<f64>>) = errors.into_iter().unzip();
    ClassificationReport::from_errors(query.video_id.clone(), labels, rows)
}
