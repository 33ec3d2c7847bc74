//! Multiple random cross-validation: repeated stratified splits, per-repeat
//! model building and thresholding, feature ranking and elbow cut.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ClassLabel, DataError, FeatureTable};
use crate::forest::{self, ForestParams};
use crate::logreg;
use crate::metrics::{balanced_accuracy, best_threshold_bacc};
use crate::report::{self, fmt_f64};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("validation fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("class {label} has {count} samples; at least 2 are needed to split")]
    TooFewInClass { label: ClassLabel, count: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum ElbowError {
    #[error("elbow needs at least 3 ranked features, got {0}")]
    TooFew(usize),
    #[error("all ranking scores are equal; no elbow exists")]
    Flat,
    #[error("ranking contains non-finite scores")]
    NonFinite,
}

/// Row indices of a stratified split, each list in table order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Draws `round(fraction * n_c)` validation rows per class without
/// replacement, clamped so both sides keep at least one row of each class.
pub fn stratified_split_indices(
    table: &FeatureTable,
    validation_fraction: f64,
    seed: u64,
) -> Result<SplitIndices, SplitError> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(SplitError::InvalidFraction(validation_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_validation = vec![false; table.n_samples()];
    for label in [ClassLabel::Benign, ClassLabel::Malignant] {
        let members: Vec<usize> =
            (0..table.n_samples()).filter(|&i| table.labels()[i] == label).collect();
        let n_c = members.len();
        if n_c < 2 {
            return Err(SplitError::TooFewInClass { label, count: n_c });
        }
        let k = ((validation_fraction * n_c as f64).round() as usize).clamp(1, n_c - 1);
        for j in rand::seq::index::sample(&mut rng, n_c, k) {
            in_validation[members[j]] = true;
        }
    }
    let (validation, train): (Vec<usize>, Vec<usize>) =
        (0..table.n_samples()).partition(|&i| in_validation[i]);
    Ok(SplitIndices { train, validation })
}

pub fn stratified_split(
    table: &FeatureTable,
    validation_fraction: f64,
    seed: u64,
) -> Result<(FeatureTable, FeatureTable), SplitError> {
    let s = stratified_split_indices(table, validation_fraction, seed)?;
    Ok((table.select_rows(&s.train), table.select_rows(&s.validation)))
}

/// Independent seeds for repeat `r`: word 0 drives the split, word 1 the model.
pub fn repeat_seeds(base_seed: u64, repeat: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(repeat as u64);
    (rng.next_u64(), rng.next_u64())
}

/// Subset on which each repeat's classification threshold is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSubset {
    #[default]
    Train,
    Validation,
}

/// Weight of the feature added at 1-based position `i` of `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProportionalOrder {
    /// `(m - i + 1) / m`: the first-added feature weighs 1.
    #[default]
    Linear,
    /// Every selected feature weighs 1.
    Uniform,
}

impl ProportionalOrder {
    pub fn weight(self, position: usize, m: usize) -> f64 {
        match self {
            ProportionalOrder::Linear => (m - position + 1) as f64 / m as f64,
            ProportionalOrder::Uniform => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FoldDetail {
    Lr { selected_order: Vec<String> },
    Rf { params: ForestParams, importances: Vec<(String, f64)> },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub repeat_index: usize,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    pub bacc_train: f64,
    pub bacc_validation: f64,
    pub threshold: f64,
    pub detail: FoldDetail,
}

impl FoldOutcome {
    pub fn failed(&self) -> bool {
        matches!(self.detail, FoldDetail::Failed { .. })
    }

    fn failure(repeat_index: usize, train_ids: Vec<String>, validation_ids: Vec<String>, reason: String) -> Self {
        warn!("repeat {repeat_index} failed: {reason}");
        FoldOutcome {
            repeat_index,
            train_ids,
            validation_ids,
            bacc_train: 0.0,
            bacc_validation: 0.0,
            threshold: f64::NAN,
            detail: FoldDetail::Failed { reason },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrMrcvOptions {
    pub repeats: usize,
    pub validation_fraction: f64,
    pub base_seed: u64,
    pub delta_bic_stop: f64,
    pub threshold_subset: ThresholdSubset,
}

impl Default for LrMrcvOptions {
    fn default() -> Self {
        LrMrcvOptions {
            repeats: 100,
            validation_fraction: 0.3,
            base_seed: 0,
            delta_bic_stop: 2.0,
            threshold_subset: ThresholdSubset::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfGrid {
    pub mtry: Vec<usize>,
    pub ntree: Vec<usize>,
}

impl Default for RfGrid {
    fn default() -> Self {
        RfGrid { mtry: vec![5, 10, 15, 20, 25, 30], ntree: vec![100, 500, 1000, 2000] }
    }
}

impl RfGrid {
    /// Grid points, mtry-major.
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.mtry.iter().flat_map(|&m| self.ntree.iter().map(move |&t| (m, t))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfMrcvOptions {
    pub repeats: usize,
    pub validation_fraction: f64,
    pub base_seed: u64,
    pub grid: RfGrid,
    pub min_leaf: usize,
    pub class_weighting: bool,
    pub threshold_subset: ThresholdSubset,
}

impl Default for RfMrcvOptions {
    fn default() -> Self {
        RfMrcvOptions {
            repeats: 100,
            validation_fraction: 0.2,
            base_seed: 0,
            grid: RfGrid::default(),
            min_leaf: 1,
            class_weighting: true,
            threshold_subset: ThresholdSubset::Train,
        }
    }
}

struct Scored {
    threshold: f64,
    bacc_train: f64,
    bacc_validation: f64,
}

fn score_split(
    train: &FeatureTable,
    validation: &FeatureTable,
    p_train: &[f64],
    p_validation: &[f64],
    subset: ThresholdSubset,
) -> Result<Scored, String> {
    let (threshold, _) = match subset {
        ThresholdSubset::Train => best_threshold_bacc(p_train, train.labels()),
        ThresholdSubset::Validation => best_threshold_bacc(p_validation, validation.labels()),
    }
    .map_err(|e| e.to_string())?;
    Ok(Scored {
        threshold,
        bacc_train: balanced_accuracy(p_train, train.labels(), threshold).map_err(|e| e.to_string())?,
        bacc_validation: balanced_accuracy(p_validation, validation.labels(), threshold)
            .map_err(|e| e.to_string())?,
    })
}

fn ids(table: &FeatureTable, rows: &[usize]) -> Vec<String> {
    rows.iter().map(|&i| table.sample_ids()[i].clone()).collect()
}

fn check_candidates(table: &FeatureTable, candidates: &[String]) -> Result<(), DataError> {
    for c in candidates {
        if table.feature_index(c).is_none() {
            return Err(DataError::UnknownFeature(c.clone()));
        }
    }
    Ok(())
}

/// LR mode: split, forward-select on train, threshold, record BAccs and the
/// addition order. Repeats run in parallel; output is ordered by repeat.
pub fn run_mrcv_lr(
    table: &FeatureTable,
    candidates: &[String],
    opts: &LrMrcvOptions,
) -> Result<Vec<FoldOutcome>, crate::Error> {
    check_candidates(table, candidates)?;
    stratified_split_indices(table, opts.validation_fraction, 0)?;
    Ok((0..opts.repeats)
        .into_par_iter()
        .map(|r| {
            let (split_seed, _) = repeat_seeds(opts.base_seed, r);
            let s = stratified_split_indices(table, opts.validation_fraction, split_seed)
                .expect("split validated above");
            let (train_ids, validation_ids) = (ids(table, &s.train), ids(table, &s.validation));
            let train = table.select_rows(&s.train);
            let validation = table.select_rows(&s.validation);
            let run = || -> Result<(logreg::FittedLogReg, Scored), String> {
                let model = logreg::forward_select(&train, candidates, opts.delta_bic_stop)
                    .map_err(|e| e.to_string())?;
                let pt = logreg::predict_proba(&model, &train).map_err(|e| e.to_string())?;
                let pv = logreg::predict_proba(&model, &validation).map_err(|e| e.to_string())?;
                let scored = score_split(&train, &validation, &pt, &pv, opts.threshold_subset)?;
                Ok((model, scored))
            };
            match run() {
                Ok((model, sc)) => FoldOutcome {
                    repeat_index: r,
                    train_ids,
                    validation_ids,
                    bacc_train: sc.bacc_train,
                    bacc_validation: sc.bacc_validation,
                    threshold: sc.threshold,
                    detail: FoldDetail::Lr { selected_order: model.selected_order },
                },
                Err(e) => FoldOutcome::failure(r, train_ids, validation_ids, e),
            }
        })
        .collect())
}

/// RF mode: per repeat every grid point is fitted on train and the one with
/// the best validation BAcc (first in grid order on ties) is kept; its OOB
/// permutation importances are recorded.
pub fn run_mrcv_rf(
    table: &FeatureTable,
    candidates: &[String],
    opts: &RfMrcvOptions,
) -> Result<Vec<FoldOutcome>, crate::Error> {
    if opts.grid.points().is_empty() {
        return Err(crate::error::ModelError::InvalidParams("empty random forest grid".into()).into());
    }
    let table = table.select_features(candidates)?;
    stratified_split_indices(&table, opts.validation_fraction, 0)?;
    let p = table.n_features();
    let mut grid: Vec<(usize, usize)> = Vec::new();
    for (m, t) in opts.grid.points() {
        let m = if m > p {
            warn!("mtry {m} exceeds the {p} available features; using {p}");
            p
        } else {
            m
        };
        if !grid.contains(&(m, t)) {
            grid.push((m, t));
        }
    }

    Ok((0..opts.repeats)
        .into_par_iter()
        .map(|r| {
            let (split_seed, model_seed) = repeat_seeds(opts.base_seed, r);
            let s = stratified_split_indices(&table, opts.validation_fraction, split_seed)
                .expect("split validated above");
            let (train_ids, validation_ids) = (ids(&table, &s.train), ids(&table, &s.validation));
            let train = table.select_rows(&s.train);
            let validation = table.select_rows(&s.validation);
            let run = || -> Result<FoldOutcome, String> {
                let mut best: Option<(forest::Forest, Scored)> = None;
                for &(mtry, ntree) in &grid {
                    let params = ForestParams {
                        mtry,
                        ntree,
                        min_leaf: opts.min_leaf,
                        seed: model_seed,
                        class_weighting: opts.class_weighting,
                    };
                    let f = forest::fit_forest(&train, &params).map_err(|e| e.to_string())?;
                    let pt = forest::predict_proba(&f, &train).map_err(|e| e.to_string())?;
                    let pv = forest::predict_proba(&f, &validation).map_err(|e| e.to_string())?;
                    let sc = score_split(&train, &validation, &pt, &pv, opts.threshold_subset)?;
                    if best.as_ref().is_none_or(|(_, b)| sc.bacc_validation > b.bacc_validation) {
                        best = Some((f, sc));
                    }
                }
                let (f, sc) = best.expect("grid is non-empty");
                let imp = forest::oob_permutation_importance(&f, &train).map_err(|e| e.to_string())?;
                Ok(FoldOutcome {
                    repeat_index: r,
                    train_ids: train_ids.clone(),
                    validation_ids: validation_ids.clone(),
                    bacc_train: sc.bacc_train,
                    bacc_validation: sc.bacc_validation,
                    threshold: sc.threshold,
                    detail: FoldDetail::Rf {
                        params: f.params,
                        importances: imp.entries.into_iter().map(|e| (e.feature, e.normalized)).collect(),
                    },
                })
            };
            run().unwrap_or_else(|e| FoldOutcome::failure(r, train_ids.clone(), validation_ids.clone(), e))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRanking {
    /// Non-increasing by score; equal scores ordered by name.
    pub entries: Vec<(String, f64)>,
}

impl FeatureRanking {
    pub fn from_scores(scores: BTreeMap<String, f64>) -> Self {
        let mut entries: Vec<(String, f64)> = scores.into_iter().collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        FeatureRanking { entries }
    }

    pub fn features(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.0.clone()).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn score(&self, feature: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == feature).map(|e| e.1)
    }
}

fn by_repeat(outcomes: &[FoldOutcome]) -> Vec<&FoldOutcome> {
    let mut v: Vec<&FoldOutcome> = outcomes.iter().filter(|o| !o.failed()).collect();
    v.sort_by_key(|o| o.repeat_index);
    v
}

/// Sum over folds of proportional order times validation BAcc. Features in
/// `universe` that were never selected score 0.
pub fn rank_features_lr(outcomes: &[FoldOutcome], universe: &[String]) -> FeatureRanking {
    rank_features_lr_with(outcomes, universe, ProportionalOrder::Linear)
}

pub fn rank_features_lr_with(
    outcomes: &[FoldOutcome],
    universe: &[String],
    order: ProportionalOrder,
) -> FeatureRanking {
    let mut scores: BTreeMap<String, f64> = universe.iter().map(|f| (f.clone(), 0.0)).collect();
    for o in by_repeat(outcomes) {
        if let FoldDetail::Lr { selected_order } = &o.detail {
            let m = selected_order.len();
            for (i, f) in selected_order.iter().enumerate() {
                *scores.entry(f.clone()).or_insert(0.0) += order.weight(i + 1, m) * o.bacc_validation;
            }
        }
    }
    FeatureRanking::from_scores(scores)
}

/// Mean normalized importance over successful repeats; absent entries count as 0.
pub fn rank_features_rf(outcomes: &[FoldOutcome], universe: &[String]) -> FeatureRanking {
    let folds: Vec<&FoldOutcome> =
        by_repeat(outcomes).into_iter().filter(|o| matches!(o.detail, FoldDetail::Rf { .. })).collect();
    let mut scores: BTreeMap<String, f64> = universe.iter().map(|f| (f.clone(), 0.0)).collect();
    for o in &folds {
        if let FoldDetail::Rf { importances, .. } = &o.detail {
            for (f, v) in importances {
                *scores.entry(f.clone()).or_insert(0.0) += v;
            }
        }
    }
    if !folds.is_empty() {
        for v in scores.values_mut() {
            *v /= folds.len() as f64;
        }
    }
    FeatureRanking::from_scores(scores)
}

/// Number of leading features kept by the elbow rule.
///
/// With points `(k, s_k)` and the chord through the first and last, the
/// elbow is the point of largest distance to the chord (first on ties).
/// A point above the chord closes the kept prefix; a point below it is the
/// first feature past the drop and is excluded.
pub fn elbow_index(scores: &[f64]) -> Result<usize, ElbowError> {
    let k = scores.len();
    if k < 3 {
        return Err(ElbowError::TooFew(k));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ElbowError::NonFinite);
    }
    if scores.iter().all(|&s| s == scores[0]) {
        return Err(ElbowError::Flat);
    }
    let (first, last) = (scores[0], scores[k - 1]);
    let span = (k - 1) as f64;
    // vertical offset from the chord; proportional to perpendicular distance
    let offset = |i: usize| scores[i] - (first + (last - first) * i as f64 / span);
    let scale = scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let mut best = 0;
    for i in 1..k - 1 {
        if offset(i).abs() > offset(best).abs() {
            best = i;
        }
    }
    if offset(best).abs() <= 1e-12 * scale {
        warn!("ranking scores decay linearly; keeping only the top feature");
        return Ok(1);
    }
    Ok(if offset(best) > 0.0 { best + 1 } else { best.max(1) })
}

pub fn elbow_cut(ranking: &FeatureRanking) -> Result<Vec<String>, ElbowError> {
    let kept = elbow_index(&ranking.scores())?;
    Ok(ranking.entries[..kept].iter().map(|e| e.0.clone()).collect())
}

pub fn write_outcomes_csv<W: Write>(outcomes: &[FoldOutcome], writer: W) -> std::io::Result<()> {
    let mut w = report::csv_writer(writer, "fold_outcomes")?;
    w.write_record([
        "repeat",
        "n_train",
        "n_validation",
        "bacc_train",
        "bacc_validation",
        "threshold",
        "model",
        "detail",
    ])?;
    for o in outcomes {
        let (kind, detail) = match &o.detail {
            FoldDetail::Lr { selected_order } => ("lr", selected_order.join(";")),
            FoldDetail::Rf { params, .. } => ("rf", format!("mtry={};ntree={}", params.mtry, params.ntree)),
            FoldDetail::Failed { reason } => ("failed", reason.clone()),
        };
        w.write_record([
            o.repeat_index.to_string(),
            o.train_ids.len().to_string(),
            o.validation_ids.len().to_string(),
            fmt_f64(o.bacc_train),
            fmt_f64(o.bacc_validation),
            fmt_f64(o.threshold),
            kind.to_string(),
            detail,
        ])?;
    }
    w.flush()
}

pub fn write_ranking_csv<W: Write>(ranking: &FeatureRanking, kept: usize, writer: W) -> std::io::Result<()> {
    let mut w = report::csv_writer(writer, "feature_ranking")?;
    w.write_record(["rank", "feature", "score", "selected"])?;
    for (i, (f, s)) in ranking.entries.iter().enumerate() {
        w.write_record([(i + 1).to_string(), f.clone(), fmt_f64(*s), (i < kept).to_string()])?;
    }
    w.flush()
}
