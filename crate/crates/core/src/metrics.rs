//! Confusion matrices, the seven-metric report row, ROC/AUC and
//! balanced-accuracy-optimal thresholds.
//!
//! A sample is predicted positive (malignant) iff `score >= threshold`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ClassLabel;
use crate::report::{self, fmt_f64, fmt_opt};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("both classes are required")]
    SingleClass,
    #[error("non-finite score")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub r#fn: u64,
}

impl Confusion {
    pub fn positives(&self) -> u64 {
        self.tp + self.r#fn
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    /// Rows are true class (malignant, benign), columns predicted (malignant, benign).
    pub fn as_matrix(&self) -> [[u64; 2]; 2] {
        [[self.tp, self.r#fn], [self.fp, self.tn]]
    }
}

fn check(scores: &[f64], labels: &[ClassLabel]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

fn check_both(labels: &[ClassLabel]) -> Result<(usize, usize), MetricsError> {
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    Ok((pos, neg))
}

pub fn confusion(
    scores: &[f64],
    labels: &[ClassLabel],
    threshold: f64,
) -> Result<Confusion, MetricsError> {
    check(scores, labels)?;
    Ok(confusion_unchecked(scores, labels, threshold))
}

fn confusion_unchecked(scores: &[f64], labels: &[ClassLabel], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, l) in scores.iter().zip(labels) {
        match (s >= threshold, l.is_positive()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.r#fn += 1,
        }
    }
    c
}

/// The Table-3-style metric row. `ppv`/`npv` are `None` when no sample was
/// predicted into that class; `auc` is `None` unless computed from scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub sensitivity: f64,
    pub specificity: f64,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub f1: f64,
    pub balanced_accuracy: f64,
    pub auc: Option<f64>,
}

pub const METRIC_NAMES: [&str; 7] =
    ["Sensitivity", "Specificity", "PPV", "NPV", "F1", "Balanced Accuracy", "AUC"];

impl MetricsRow {
    pub fn with_auc(mut self, auc: f64) -> Self {
        self.auc = Some(auc);
        self
    }

    /// Values in `METRIC_NAMES` order.
    pub fn values(&self) -> [Option<f64>; 7] {
        [
            Some(self.sensitivity),
            Some(self.specificity),
            self.ppv,
            self.npv,
            Some(self.f1),
            Some(self.balanced_accuracy),
            self.auc,
        ]
    }
}

pub fn metrics_from_confusion(c: &Confusion) -> Result<MetricsRow, MetricsError> {
    if c.positives() == 0 || c.negatives() == 0 {
        return Err(MetricsError::SingleClass);
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let sensitivity = c.tp as f64 / c.positives() as f64;
    let specificity = c.tn as f64 / c.negatives() as f64;
    Ok(MetricsRow {
        sensitivity,
        specificity,
        ppv: ratio(c.tp, c.tp + c.fp),
        npv: ratio(c.tn, c.tn + c.r#fn),
        f1: 2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.r#fn) as f64,
        balanced_accuracy: (sensitivity + specificity) / 2.0,
        auc: None,
    })
}

/// Balanced accuracy of the rule `score >= threshold`.
pub fn balanced_accuracy(
    scores: &[f64],
    labels: &[ClassLabel],
    threshold: f64,
) -> Result<f64, MetricsError> {
    let c = confusion(scores, labels, threshold)?;
    Ok(metrics_from_confusion(&c)?.balanced_accuracy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub tp: u64,
    pub fp: u64,
}

/// ROC from (0, 0) at threshold +inf to (1, 1) at the smallest score.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub positives: u64,
    pub negatives: u64,
}

impl RocCurve {
    pub fn xy(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.fpr, p.tpr)).collect()
    }

    /// Trapezoidal area, accumulated in integer units of 1/(2PN).
    pub fn auc(&self) -> f64 {
        let mut twice: u128 = 0;
        for w in self.points.windows(2) {
            let dx = (w[1].fp - w[0].fp) as u128;
            twice += dx * (w[0].tp + w[1].tp) as u128;
        }
        twice as f64 / (2.0 * self.positives as f64 * self.negatives as f64)
    }
}

pub fn roc_curve(scores: &[f64], labels: &[ClassLabel]) -> Result<RocCurve, MetricsError> {
    check(scores, labels)?;
    let (pos, neg) = check_both(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0, tp: 0, fp: 0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            tp,
            fp,
        });
    }
    Ok(RocCurve { points, positives: pos as u64, negatives: neg as u64 })
}

pub fn auc(scores: &[f64], labels: &[ClassLabel]) -> Result<f64, MetricsError> {
    Ok(roc_curve(scores, labels)?.auc())
}

/// Threshold maximising balanced accuracy. Candidates are the midpoints
/// between consecutive distinct scores plus two sentinels: the minimum
/// score (everything positive) and the next float above the maximum
/// (nothing positive). Ties resolve to the lower median of the tied
/// candidates in ascending threshold order.
pub fn best_threshold_bacc(
    scores: &[f64],
    labels: &[ClassLabel],
) -> Result<(f64, f64), MetricsError> {
    check(scores, labels)?;
    let (pos, neg) = check_both(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sweep ascending: at candidate k, everything strictly below is negative.
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    let bacc = |fn_: usize, tn: usize| {
        let sens = (pos - fn_) as f64 / pos as f64;
        let spec = tn as f64 / neg as f64;
        (sens + spec) / 2.0
    };
    let lo = scores[order[0]];
    candidates.push((lo, bacc(0, 0)));
    let (mut fn_, mut tn) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]].is_positive() {
                fn_ += 1;
            } else {
                tn += 1;
            }
            i += 1;
        }
        let t = if i < order.len() {
            let next = scores[order[i]];
            let mid = s + (next - s) / 2.0;
            // guard against the midpoint rounding onto `s`
            if mid > s { mid } else { next }
        } else {
            s.next_up()
        };
        candidates.push((t, bacc(fn_, tn)));
    }

    let best = candidates.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<&(f64, f64)> = candidates.iter().filter(|c| c.1 == best).collect();
    let pick = tied[(tied.len() - 1) / 2];
    Ok(*pick)
}

/// CSV with the metric names as header, one row per labelled model.
pub fn write_metrics_csv<W: Write>(rows: &[(String, MetricsRow)], writer: W) -> std::io::Result<()> {
    let mut w = report::csv_writer(writer, "metrics")?;
    let mut header = vec!["model"];
    header.extend(METRIC_NAMES);
    w.write_record(&header)?;
    for (name, row) in rows {
        let mut rec = vec![name.clone()];
        rec.extend(row.values().iter().map(|v| fmt_opt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()
}

pub fn write_roc_csv<W: Write>(roc: &RocCurve, writer: W) -> std::io::Result<()> {
    let mut w = report::csv_writer(writer, "roc")?;
    w.write_record(["threshold", "fpr", "tpr"])?;
    for p in &roc.points {
        w.write_record([fmt_f64(p.threshold), fmt_f64(p.fpr), fmt_f64(p.tpr)])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClassLabel::{Benign as B, Malignant as M};

    #[test]
    fn confusion_basic() {
        let c = confusion(&[0.9, 0.1], &[M, B], 0.5).unwrap();
        assert_eq!(c, Confusion { tp: 1, fp: 0, tn: 1, r#fn: 0 });
        let c = confusion(&[0.9, 0.1, 0.3], &[M, B, M], 0.0).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.r#fn), (2, 1, 0, 0));
        assert!(matches!(confusion(&[0.1], &[M, B], 0.5), Err(MetricsError::LengthMismatch { .. })));
    }

    #[test]
    fn boundary_is_inclusive() {
        let c = confusion(&[0.5], &[M], 0.5).unwrap();
        assert_eq!(c.tp, 1);
    }

    #[test]
    fn radiomics_lr_row() {
        let c = Confusion { tp: 12, r#fn: 8, tn: 17, fp: 3 };
        let m = metrics_from_confusion(&c).unwrap();
        assert_eq!(m.sensitivity, 0.6);
        assert_eq!(m.specificity, 0.85);
        assert_eq!(m.ppv, Some(0.8));
        assert!((m.npv.unwrap() - 17.0 / 25.0).abs() < 1e-15);
        assert!((m.f1 - 24.0 / 35.0).abs() < 1e-15);
        assert!((m.balanced_accuracy - 0.725).abs() < 1e-15);
    }

    #[test]
    fn chance_and_perfect() {
        let m = metrics_from_confusion(&Confusion { tp: 5, r#fn: 5, tn: 7, fp: 7 }).unwrap();
        assert_eq!(m.balanced_accuracy, 0.5);
        let m = metrics_from_confusion(&Confusion { tp: 5, r#fn: 0, tn: 7, fp: 0 }).unwrap();
        assert_eq!(m.values()[..6], [Some(1.0); 6]);
    }

    #[test]
    fn undefined_ratios_are_flagged() {
        let m = metrics_from_confusion(&Confusion { tp: 0, r#fn: 4, tn: 6, fp: 0 }).unwrap();
        assert_eq!(m.ppv, None);
        assert_eq!(m.f1, 0.0);
        assert!(metrics_from_confusion(&Confusion { tp: 0, r#fn: 0, tn: 3, fp: 1 }).is_err());
    }

    #[test]
    fn auc_pairwise_example() {
        let a = auc(&[0.35, 0.8, 0.1, 0.4], &[M, M, B, B]).unwrap();
        assert_eq!(a, 0.75);
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &[M, M, B, B]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[M, B]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.2], &[M, M]), Err(MetricsError::SingleClass));
    }

    #[test]
    fn roc_endpoints() {
        let r = roc_curve(&[0.35, 0.8, 0.1, 0.4], &[M, M, B, B]).unwrap();
        assert_eq!(r.xy().first(), Some(&(0.0, 0.0)));
        assert_eq!(r.xy().last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn best_threshold_single_gap() {
        let (t, b) = best_threshold_bacc(&[0.1, 0.2, 0.8, 0.9], &[B, B, M, M]).unwrap();
        assert_eq!(b, 1.0);
        assert!((t - 0.5).abs() < 1e-15);
    }

    #[test]
    fn best_threshold_uninformative() {
        let (t, b) = best_threshold_bacc(&[0.3; 4], &[B, M, B, M]).unwrap();
        assert_eq!(b, 0.5);
        assert_eq!(t, 0.3);
    }
}
