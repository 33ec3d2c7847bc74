//! Late fusion of two modality classifiers.
//!
//! Both the per-sample probabilities and the two classification thresholds
//! are combined with the same rule; a fused sample is called malignant iff
//! its fused probability is at least the fused threshold.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normal;
use crate::report::{self, fmt_f64};

/// Probit-domain clip applied to Stouffer inputs.
pub const STOUFFER_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("sample ids of the two modalities are not aligned (first difference at row {0})")]
    Misaligned(usize),
    #[error("{ids} ids but {scores} scores")]
    LengthMismatch { ids: usize, scores: usize },
    #[error("unknown fusion rule `{0}`")]
    UnknownRule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionRule {
    Stouffer,
    Mean,
    Max,
    Product,
}

impl FusionRule {
    pub const ALL: [FusionRule; 4] =
        [FusionRule::Stouffer, FusionRule::Mean, FusionRule::Max, FusionRule::Product];

    pub fn name(self) -> &'static str {
        match self {
            FusionRule::Stouffer => "stouffer",
            FusionRule::Mean => "mean",
            FusionRule::Max => "max",
            FusionRule::Product => "product",
        }
    }
}

impl fmt::Display for FusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionRule {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stouffer" => Ok(FusionRule::Stouffer),
            "mean" => Ok(FusionRule::Mean),
            "max" => Ok(FusionRule::Max),
            "product" => Ok(FusionRule::Product),
            other => Err(FusionError::UnknownRule(other.to_string())),
        }
    }
}

/// Combines two probabilities.
///
/// Stouffer uses the equal-weight inverse-normal combination
/// `Phi((Phi^-1(p1) + Phi^-1(p2)) / sqrt 2)` with inputs clipped to
/// `[1e-12, 1 - 1e-12]`.
pub fn fuse_pair(p1: f64, p2: f64, rule: FusionRule) -> Result<f64, FusionError> {
    for p in [p1, p2] {
        if !(0.0..=1.0).contains(&p) {
            return Err(FusionError::OutOfRange(p));
        }
    }
    Ok(match rule {
        FusionRule::Mean => (p1 + p2) / 2.0,
        FusionRule::Max => p1.max(p2),
        FusionRule::Product => p1 * p2,
        FusionRule::Stouffer => {
            let z = (probit_clipped(p1) + probit_clipped(p2)) / std::f64::consts::SQRT_2;
            normal::cdf(z)
        }
    })
}

/// Probit of `p` clipped to `[eps, 1 - eps]`, evaluated on the nearer tail so
/// that `probit_clipped(1 - p) == -probit_clipped(p)`.
fn probit_clipped(p: f64) -> f64 {
    let tail = p.min(1.0 - p).max(STOUFFER_EPSILON);
    let z = normal::quantile(tail);
    if p > 0.5 { -z } else { z }
}

/// One modality's test-set output: scores aligned with sample ids plus the
/// threshold learned on its training data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityScores {
    pub sample_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedScores {
    pub rule: FusionRule,
    pub sample_ids: Vec<String>,
    pub scores_a: Vec<f64>,
    pub scores_b: Vec<f64>,
    pub fused_probability: Vec<f64>,
    pub fused_threshold: f64,
}

impl FusedScores {
    pub fn predictions(&self) -> Vec<bool> {
        self.fused_probability.iter().map(|&p| p >= self.fused_threshold).collect()
    }
}

/// Fuses two modalities whose sample ids must match row for row.
pub fn fuse_modalities(
    a: &ModalityScores,
    b: &ModalityScores,
    rule: FusionRule,
) -> Result<FusedScores, FusionError> {
    for m in [a, b] {
        if m.sample_ids.len() != m.scores.len() {
            return Err(FusionError::LengthMismatch { ids: m.sample_ids.len(), scores: m.scores.len() });
        }
    }
    if a.sample_ids.len() != b.sample_ids.len() {
        return Err(FusionError::Misaligned(a.sample_ids.len().min(b.sample_ids.len())));
    }
    if let Some(k) = a.sample_ids.iter().zip(&b.sample_ids).position(|(x, y)| x != y) {
        return Err(FusionError::Misaligned(k));
    }
    let fused_probability = a
        .scores
        .iter()
        .zip(&b.scores)
        .map(|(&x, &y)| fuse_pair(x, y, rule))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FusedScores {
        rule,
        sample_ids: a.sample_ids.clone(),
        scores_a: a.scores.clone(),
        scores_b: b.scores.clone(),
        fused_probability,
        fused_threshold: fuse_pair(a.threshold, b.threshold, rule)?,
    })
}

pub fn write_fused_csv<W: Write>(fused: &FusedScores, writer: W) -> std::io::Result<()> {
    let mut w = report::csv_writer(writer, "fused_scores")?;
    w.write_record(["sample_id", "p_a", "p_b", "fused_p", "fused_threshold", "prediction"])?;
    for (i, pred) in fused.predictions().into_iter().enumerate() {
        w.write_record([
            fused.sample_ids[i].clone(),
            fmt_f64(fused.scores_a[i]),
            fmt_f64(fused.scores_b[i]),
            fmt_f64(fused.fused_probability[i]),
            fmt_f64(fused.fused_threshold),
            if pred { "malignant" } else { "benign" }.to_string(),
        ])?;
    }
    w.flush()
}
