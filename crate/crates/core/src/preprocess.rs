//! Benign-referenced robust scaling, missingness filtering, Spearman
//! correlation and redundancy pruning.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ClassLabel, DataError, FeatureTable};
use crate::rank::{midranks, pearson};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("no {label} reference samples{}", cohort_suffix(.cohort))]
    NoReference { label: ClassLabel, cohort: Option<String> },
    #[error("feature `{feature}` has fewer than 2 observed reference values{}", cohort_suffix(.cohort))]
    InsufficientReference { feature: String, cohort: Option<String> },
    #[error("feature `{0}` is not covered by the scaler")]
    FeatureNotScaled(String),
    #[error("no scaler fitted for cohort `{0}`")]
    UnknownCohort(String),
    #[error("every feature was removed by the missingness filter")]
    AllFeaturesDropped,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

fn cohort_suffix(c: &Option<String>) -> String {
    c.as_ref().map(|c| format!(" in cohort `{c}`")).unwrap_or_default()
}

/// Quantile by linear interpolation between order statistics
/// (`h = (n-1)p`, the "type 7" rule). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEntry {
    pub feature: String,
    pub median: f64,
    pub iqr: f64,
}

impl ScaleEntry {
    /// Zero-IQR features cannot be scaled.
    pub fn usable(&self) -> bool {
        self.iqr > 0.0
    }

    pub fn transform(&self, x: f64) -> f64 {
        (x - self.median) / self.iqr
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.iqr + self.median
    }
}

/// Per-feature median and IQR computed on reference-class rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustScaler {
    pub reference: String,
    /// `None` for a scaler fitted over all cohorts.
    pub cohort: Option<String>,
    pub features: Vec<ScaleEntry>,
}

impl RobustScaler {
    pub fn entry(&self, feature: &str) -> Option<&ScaleEntry> {
        self.features.iter().find(|e| e.feature == feature)
    }

    pub fn unusable(&self) -> impl Iterator<Item = &str> {
        self.features.iter().filter(|e| !e.usable()).map(|e| e.feature.as_str())
    }
}

/// One global scaler, or one scaler per cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerSet {
    pub scalers: Vec<RobustScaler>,
}

impl ScalerSet {
    pub fn per_cohort(&self) -> bool {
        self.scalers.iter().any(|s| s.cohort.is_some())
    }

    fn for_cohort(&self, cohort: &str) -> Result<&RobustScaler, PreprocessError> {
        if self.per_cohort() {
            self.scalers
                .iter()
                .find(|s| s.cohort.as_deref() == Some(cohort))
                .ok_or_else(|| PreprocessError::UnknownCohort(cohort.to_string()))
        } else {
            Ok(&self.scalers[0])
        }
    }

    /// Features flagged unusable in any member scaler.
    pub fn unusable_features(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .scalers
            .iter()
            .flat_map(|s| s.unusable().map(str::to_string))
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Fits median/IQR on rows labelled `reference`, within each cohort when
/// `per_cohort` is set.
pub fn fit_robust_scaler(
    table: &FeatureTable,
    reference: ClassLabel,
    per_cohort: bool,
) -> Result<ScalerSet, PreprocessError> {
    let groups: Vec<(Option<String>, Vec<usize>)> = if per_cohort {
        let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, c) in table.cohort().iter().enumerate() {
            by.entry(c.as_str()).or_default();
            if table.labels()[i] == reference {
                by.get_mut(c.as_str()).unwrap().push(i);
            }
        }
        by.into_iter().map(|(c, rows)| (Some(c.to_string()), rows)).collect()
    } else {
        let rows = (0..table.n_samples()).filter(|&i| table.labels()[i] == reference).collect();
        vec![(None, rows)]
    };

    let description = format!("{reference} samples{}", if per_cohort { " within cohort" } else { "" });
    let mut scalers = Vec::with_capacity(groups.len());
    for (cohort, rows) in groups {
        if rows.is_empty() {
            return Err(PreprocessError::NoReference { label: reference, cohort });
        }
        let mut features = Vec::with_capacity(table.n_features());
        for (j, name) in table.feature_names().iter().enumerate() {
            let mut v: Vec<f64> = rows.iter().filter_map(|&i| table.value(i, j)).collect();
            if v.len() < 2 {
                return Err(PreprocessError::InsufficientReference {
                    feature: name.clone(),
                    cohort: cohort.clone(),
                });
            }
            v.sort_by(f64::total_cmp);
            let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
            features.push(ScaleEntry {
                feature: name.clone(),
                median: quantile_sorted(&v, 0.5),
                iqr,
            });
        }
        scalers.push(RobustScaler { reference: description.clone(), cohort, features });
    }
    Ok(ScalerSet { scalers })
}

/// `(x - median) / IQR` elementwise, using each row's cohort scaler when the
/// set is per-cohort. Features with zero IQR are dropped from the output.
pub fn apply_scaler(scalers: &ScalerSet, table: &FeatureTable) -> Result<FeatureTable, PreprocessError> {
    let unusable = scalers.unusable_features();
    if !unusable.is_empty() {
        warn!("dropping {} zero-IQR feature(s): {}", unusable.len(), unusable.join(", "));
    }
    let kept: Vec<(usize, &String)> = table
        .feature_names()
        .iter()
        .enumerate()
        .filter(|(_, f)| !unusable.contains(f))
        .collect();
    for s in &scalers.scalers {
        for (_, f) in &kept {
            if s.entry(f).is_none() {
                return Err(PreprocessError::FeatureNotScaled((*f).clone()));
            }
        }
    }
    let mut values = Vec::with_capacity(table.n_samples() * kept.len());
    for i in 0..table.n_samples() {
        let scaler = scalers.for_cohort(&table.cohort()[i])?;
        for (j, f) in &kept {
            let entry = scaler.entry(f).expect("checked above");
            values.push(table.value(i, *j).map(|x| entry.transform(x)));
        }
    }
    Ok(table.with_values(kept.iter().map(|(_, f)| (*f).clone()).collect(), values)?)
}

/// Feature subset and imputation medians learned from a reference table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessFilter {
    pub max_missing_fraction: f64,
    pub kept: Vec<String>,
    pub medians: Vec<f64>,
    pub dropped: Vec<String>,
}

impl MissingnessFilter {
    pub fn fit(table: &FeatureTable, max_missing_fraction: f64) -> Result<Self, PreprocessError> {
        if !(0.0..=1.0).contains(&max_missing_fraction) {
            return Err(PreprocessError::InvalidParameter(format!(
                "max_missing_fraction {max_missing_fraction} outside [0, 1]"
            )));
        }
        let n = table.n_samples();
        let mut kept = Vec::new();
        let mut medians = Vec::new();
        let mut dropped = Vec::new();
        for (j, name) in table.feature_names().iter().enumerate() {
            let observed: Vec<f64> = table.column(j).into_iter().flatten().collect();
            let missing = if n == 0 { 0.0 } else { (n - observed.len()) as f64 / n as f64 };
            if missing > max_missing_fraction || observed.is_empty() {
                dropped.push(name.clone());
            } else {
                kept.push(name.clone());
                medians.push(median(&observed));
            }
        }
        if kept.is_empty() {
            return Err(PreprocessError::AllFeaturesDropped);
        }
        if !dropped.is_empty() {
            warn!("missingness filter dropped {} feature(s)", dropped.len());
        }
        Ok(MissingnessFilter { max_missing_fraction, kept, medians, dropped })
    }

    /// Restricts to the kept features and fills missing cells with the
    /// stored medians.
    pub fn apply(&self, table: &FeatureTable) -> Result<FeatureTable, PreprocessError> {
        let sub = table.select_features(&self.kept)?;
        let p = self.kept.len();
        let mut values = Vec::with_capacity(sub.n_samples() * p);
        for i in 0..sub.n_samples() {
            values.extend(sub.row(i).iter().zip(&self.medians).map(|(v, m)| Some(v.unwrap_or(*m))));
        }
        Ok(sub.with_values(self.kept.clone(), values)?)
    }
}

/// Drops features whose missing fraction exceeds the threshold and imputes
/// the remaining gaps with the feature's observed median.
pub fn filter_missingness(
    table: &FeatureTable,
    max_missing_fraction: f64,
) -> Result<FeatureTable, PreprocessError> {
    MissingnessFilter::fit(table, max_missing_fraction)?.apply(table)
}

/// Symmetric Spearman matrix. `undefined[i*p+j]` marks pairs whose rho could
/// not be computed (constant input or fewer than 3 complete rows); those are
/// stored as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub feature_names: Vec<String>,
    rho: Vec<f64>,
    undefined: Vec<bool>,
}

impl CorrelationMatrix {
    /// Builds a matrix from a row-major symmetric `rho`. Panics on shape or
    /// symmetry violations.
    pub fn from_dense(feature_names: Vec<String>, rho: Vec<f64>) -> Self {
        let p = feature_names.len();
        assert_eq!(rho.len(), p * p, "rho must be p x p");
        for i in 0..p {
            assert_eq!(rho[i * p + i], 1.0, "diagonal must be 1");
            for j in 0..p {
                assert_eq!(rho[i * p + j], rho[j * p + i], "rho must be symmetric");
            }
        }
        CorrelationMatrix { feature_names, rho, undefined: vec![false; p * p] }
    }

    pub fn len(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_names.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rho[i * self.len() + j]
    }

    pub fn is_undefined(&self, i: usize, j: usize) -> bool {
        self.undefined[i * self.len() + j]
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }
}

fn spearman_pair(x: &[Option<f64>], y: &[Option<f64>]) -> Option<f64> {
    let (a, b): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .unzip();
    if a.len() < 3 {
        return None;
    }
    pearson(&midranks(&a), &midranks(&b))
}

/// Pairwise-complete Spearman correlation via midranks.
pub fn spearman_matrix(table: &FeatureTable) -> CorrelationMatrix {
    let p = table.n_features();
    let columns: Vec<Vec<Option<f64>>> = (0..p).map(|j| table.column(j)).collect();
    let complete: Vec<Option<Vec<f64>>> = columns
        .iter()
        .map(|c| {
            let v: Option<Vec<f64>> = c.iter().copied().collect();
            v.map(|v| midranks(&v))
        })
        .collect();

    let rows: Vec<Vec<Option<f64>>> = (0..p)
        .into_par_iter()
        .map(|i| {
            (i + 1..p)
                .map(|j| match (&complete[i], &complete[j]) {
                    (Some(ri), Some(rj)) if ri.len() >= 3 => pearson(ri, rj),
                    _ => spearman_pair(&columns[i], &columns[j]),
                })
                .collect()
        })
        .collect();

    let mut rho = vec![0.0; p * p];
    let mut undefined = vec![false; p * p];
    for i in 0..p {
        rho[i * p + i] = 1.0;
        for (k, r) in rows[i].iter().enumerate() {
            let j = i + 1 + k;
            let (v, u) = match r {
                Some(v) => (*v, false),
                None => (0.0, true),
            };
            rho[i * p + j] = v;
            rho[j * p + i] = v;
            undefined[i * p + j] = u;
            undefined[j * p + i] = u;
        }
    }
    CorrelationMatrix { feature_names: table.feature_names().to_vec(), rho, undefined }
}

/// Greedy redundancy pruning. While some pair has `|rho| >= threshold`,
/// take the strongest such pair and remove whichever member has the larger
/// mean absolute correlation to the other remaining features; exact ties
/// remove the lexicographically later name. Features missing from `matrix`
/// are left alone.
pub fn drop_correlated(
    table: &FeatureTable,
    matrix: &CorrelationMatrix,
    threshold: f64,
) -> (FeatureTable, Vec<String>) {
    let mut alive: Vec<usize> = table
        .feature_names()
        .iter()
        .filter_map(|f| matrix.index(f))
        .collect();
    let name = |k: usize| matrix.feature_names[k].as_str();
    let mut removed = Vec::new();

    loop {
        let mut worst: Option<(f64, usize, usize)> = None;
        for (x, &i) in alive.iter().enumerate() {
            for &j in &alive[x + 1..] {
                let r = matrix.get(i, j).abs();
                if r < threshold {
                    continue;
                }
                let (a, b) = if name(i) <= name(j) { (i, j) } else { (j, i) };
                let better = match worst {
                    None => true,
                    Some((wr, wa, wb)) => {
                        r > wr || (r == wr && (name(a), name(b)) < (name(wa), name(wb)))
                    }
                };
                if better {
                    worst = Some((r, a, b));
                }
            }
        }
        let Some((_, a, b)) = worst else { break };
        let mean_abs = |k: usize| {
            let others: Vec<f64> =
                alive.iter().filter(|&&o| o != k).map(|&o| matrix.get(k, o).abs()).collect();
            others.iter().sum::<f64>() / others.len() as f64
        };
        let (ma, mb) = (mean_abs(a), mean_abs(b));
        // a sorts before b, so equality removes b
        let victim = if ma > mb { a } else { b };
        alive.retain(|&k| k != victim);
        removed.push(matrix.feature_names[victim].clone());
    }

    let keep: Vec<String> = table
        .feature_names()
        .iter()
        .filter(|f| !removed.contains(f))
        .cloned()
        .collect();
    let pruned = table.select_features(&keep).expect("subset of table features");
    (pruned, removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClassLabel::{Benign, Malignant};

    fn table(cols: &[(&str, Vec<Option<f64>>)], labels: Vec<ClassLabel>) -> FeatureTable {
        let n = labels.len();
        let p = cols.len();
        let mut values = vec![None; n * p];
        for (j, (_, c)) in cols.iter().enumerate() {
            for i in 0..n {
                values[i * p + j] = c[i];
            }
        }
        FeatureTable::new(
            (0..n).map(|i| format!("S{i}")).collect(),
            vec!["C".into(); n],
            labels,
            cols.iter().map(|(n, _)| n.to_string()).collect(),
            values,
        )
        .unwrap()
    }

    fn some(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().map(|&x| Some(x)).collect()
    }

    #[test]
    fn type7_quartiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.25), 2.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.75), 4.0);
        assert_eq!(quantile_sorted(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.75);
    }

    #[test]
    fn scaler_on_one_to_five() {
        let t = table(
            &[("f", some(&[1.0, 2.0, 3.0, 4.0, 5.0, 100.0]))],
            vec![Benign, Benign, Benign, Benign, Benign, Malignant],
        );
        let s = fit_robust_scaler(&t, Benign, false).unwrap();
        let e = &s.scalers[0].features[0];
        assert_eq!((e.median, e.iqr), (3.0, 2.0));
        assert_eq!(e.transform(3.0), 0.0);
        assert_eq!(e.transform(5.0), 1.0);
        let out = apply_scaler(&s, &t).unwrap();
        let benign: Vec<f64> = (0..5).map(|i| out.value(i, 0).unwrap()).collect();
        let mut sorted = benign.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(quantile_sorted(&sorted, 0.5), 0.0);
        assert_eq!(quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25), 1.0);
    }

    #[test]
    fn constant_feature_flagged_and_dropped() {
        let t = table(
            &[("c", some(&[2.0, 2.0, 2.0, 9.0])), ("v", some(&[1.0, 2.0, 3.0, 4.0]))],
            vec![Benign, Benign, Benign, Malignant],
        );
        let s = fit_robust_scaler(&t, Benign, false).unwrap();
        assert_eq!(s.unusable_features(), vec!["c".to_string()]);
        let out = apply_scaler(&s, &t).unwrap();
        assert_eq!(out.feature_names(), &["v".to_string()]);
    }

    #[test]
    fn missing_stays_missing() {
        let t = table(
            &[("f", vec![Some(1.0), Some(3.0), Some(5.0), None])],
            vec![Benign, Benign, Benign, Malignant],
        );
        let s = fit_robust_scaler(&t, Benign, false).unwrap();
        let out = apply_scaler(&s, &t).unwrap();
        assert_eq!(out.value(3, 0), None);
    }

    #[test]
    fn no_reference_rows_is_an_error() {
        let t = table(&[("f", some(&[1.0, 2.0]))], vec![Malignant, Malignant]);
        assert!(matches!(
            fit_robust_scaler(&t, Benign, false),
            Err(PreprocessError::NoReference { .. })
        ));
    }

    #[test]
    fn per_cohort_scalers() {
        let t = FeatureTable::from_columns(
            (0..6).map(|i| format!("S{i}")).collect(),
            ["A", "A", "A", "B", "B", "B"].iter().map(|s| s.to_string()).collect(),
            vec![Benign; 6],
            vec!["f".into()],
            &[vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0]],
        )
        .unwrap();
        let s = fit_robust_scaler(&t, Benign, true).unwrap();
        assert_eq!(s.scalers.len(), 2);
        let out = apply_scaler(&s, &t).unwrap();
        assert_eq!(out.value(1, 0), Some(0.0));
        assert_eq!(out.value(4, 0), Some(0.0));
        assert_eq!(out.value(5, 0), Some(1.0));
    }

    #[test]
    fn scaler_missing_feature_errors() {
        let t = table(&[("f", some(&[1.0, 2.0, 3.0]))], vec![Benign; 3]);
        let s = fit_robust_scaler(&t, Benign, false).unwrap();
        let other = table(&[("g", some(&[1.0, 2.0, 3.0]))], vec![Benign; 3]);
        assert!(matches!(apply_scaler(&s, &other), Err(PreprocessError::FeatureNotScaled(_))));
    }

    #[test]
    fn missingness_drop_and_impute() {
        let t = table(
            &[
                ("mostly_missing", vec![None, None, None, Some(1.0), Some(2.0)]),
                ("gap", vec![Some(1.0), None, Some(3.0), Some(2.0), Some(2.0)]),
            ],
            vec![Benign; 5],
        );
        let out = filter_missingness(&t, 0.5).unwrap();
        assert_eq!(out.feature_names(), &["gap".to_string()]);
        assert_eq!(out.value(1, 0), Some(2.0));

        let t = table(&[("f", vec![Some(1.0), None, Some(3.0)])], vec![Benign; 3]);
        let out = filter_missingness(&t, 0.5).unwrap();
        assert_eq!(out.column(0), some(&[1.0, 2.0, 3.0]));
    }

    #[test]
    fn missingness_threshold_one_keeps_all() {
        let t = table(
            &[("a", vec![None, None, Some(1.0)]), ("b", some(&[1.0, 2.0, 3.0]))],
            vec![Benign; 3],
        );
        assert_eq!(filter_missingness(&t, 1.0).unwrap().n_features(), 2);
    }

    #[test]
    fn missingness_all_dropped() {
        let t = table(&[("a", vec![None, None, Some(1.0)])], vec![Benign; 3]);
        assert!(matches!(filter_missingness(&t, 0.5), Err(PreprocessError::AllFeaturesDropped)));
    }

    #[test]
    fn spearman_examples() {
        let t = table(
            &[
                ("x", some(&[1.0, 2.0, 3.0])),
                ("y", some(&[2.0, 4.0, 6.0])),
                ("z", some(&[3.0, 2.0, 1.0])),
            ],
            vec![Benign; 3],
        );
        let m = spearman_matrix(&t);
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(0, 2), -1.0);
        assert_eq!(m.get(1, 1), 1.0);
    }

    #[test]
    fn spearman_with_midranks_matches_hand_value() {
        // x ranks: 1, 2.5, 2.5, 4; y ranks: 1, 3, 2, 4
        // dx = (-1.5, 0, 0, 1.5), dy = (-1.5, 0.5, -0.5, 1.5)
        // sxy = 4.5, sxx = 4.5, syy = 5 -> rho = 4.5 / sqrt(22.5) = 3/sqrt(10)
        let t = table(
            &[("x", some(&[1.0, 2.0, 2.0, 3.0])), ("y", some(&[1.0, 3.0, 2.0, 4.0]))],
            vec![Benign; 4],
        );
        let m = spearman_matrix(&t);
        assert!((m.get(0, 1) - 3.0 / 10f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn spearman_constant_flagged() {
        let t = table(
            &[("x", some(&[1.0, 1.0, 1.0])), ("y", some(&[1.0, 2.0, 3.0]))],
            vec![Benign; 3],
        );
        let m = spearman_matrix(&t);
        assert_eq!(m.get(0, 1), 0.0);
        assert!(m.is_undefined(0, 1));
        assert!(!m.is_undefined(0, 0));
    }

    #[test]
    fn spearman_pairwise_complete() {
        let t = table(
            &[
                ("x", vec![Some(1.0), None, Some(3.0), Some(4.0)]),
                ("y", vec![Some(2.0), Some(0.0), Some(5.0), Some(7.0)]),
            ],
            vec![Benign; 4],
        );
        assert_eq!(spearman_matrix(&t).get(0, 1), 1.0);
    }

    #[test]
    fn duplicated_column_drops_later_name() {
        let base = [0.3, 1.2, -0.4, 2.2, 0.9, -1.1];
        let t = table(
            &[
                ("f2", some(&base)),
                ("f1", some(&base)),
                ("g", some(&[1.0, -2.0, 0.5, 0.1, -0.3, 2.0])),
            ],
            vec![Benign; 6],
        );
        let m = spearman_matrix(&t);
        let (out, removed) = drop_correlated(&t, &m, 0.95);
        assert_eq!(removed, vec!["f2".to_string()]);
        assert_eq!(out.feature_names(), &["f1".to_string(), "g".to_string()]);
    }

    #[test]
    fn three_way_cluster_keeps_one() {
        // a, b, c mutually at 0.99; d weakly tied to a only.
        // pair (a,b) first: mean |rho| a = (0.99+0.99+0.2)/3 > b = (0.99+0.99)/3 -> a goes.
        // then (b,c) tie on mean -> later name c goes. b and d remain.
        let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        #[rustfmt::skip]
        let rho = vec![
            1.0, 0.99, 0.99, 0.2,
            0.99, 1.0, 0.99, 0.0,
            0.99, 0.99, 1.0, 0.0,
            0.2, 0.0, 0.0, 1.0,
        ];
        let m = CorrelationMatrix::from_dense(names.clone(), rho);
        let t = table(
            &names.iter().map(|n| (n.as_str(), some(&[1.0, 2.0, 3.0]))).collect::<Vec<_>>(),
            vec![Benign; 3],
        );
        let (out, removed) = drop_correlated(&t, &m, 0.95);
        assert_eq!(removed, vec!["a".to_string(), "c".to_string()]);
        assert_eq!(out.feature_names(), &["b".to_string(), "d".to_string()]);
    }

    #[test]
    fn uncorrelated_table_unchanged() {
        let t = table(
            &[("a", some(&[1.0, 2.0, 3.0, 4.0])), ("b", some(&[2.0, 1.0, 4.0, 3.0]))],
            vec![Benign; 4],
        );
        let m = spearman_matrix(&t);
        let (out, removed) = drop_correlated(&t, &m, 0.95);
        assert!(removed.is_empty());
        assert_eq!(out, t);
    }
}
