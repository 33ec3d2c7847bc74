//! Binary logistic regression fitted by damped Newton (IRLS), BIC scoring
//! and greedy forward selection.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureTable;
use crate::error::{ModelError, PredictError};

pub const MAX_ITERATIONS: usize = 100;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
/// Bound on |coefficient| on the standardized scale once separation is detected.
pub const SEPARATION_CAP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FittedLogReg {
    pub intercept: f64,
    /// Features in order of addition; parallel to `coefficients`.
    pub selected_order: Vec<String>,
    pub coefficients: Vec<f64>,
    pub log_likelihood: f64,
    pub bic: f64,
    pub n_train: usize,
    /// Set when the data were (quasi-)separable and coefficients were capped.
    pub separation: bool,
    pub iterations: usize,
}

impl FittedLogReg {
    pub fn n_params(&self) -> usize {
        1 + self.coefficients.len()
    }

    pub fn coefficient(&self, feature: &str) -> Option<f64> {
        self.selected_order
            .iter()
            .position(|f| f == feature)
            .map(|k| self.coefficients[k])
    }
}

pub fn bic(log_likelihood: f64, n_params: usize, n: usize) -> f64 {
    n_params as f64 * (n as f64).ln() - 2.0 * log_likelihood
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^eta) without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() }
}

fn bernoulli_ll(eta: &[f64], y: &[bool]) -> f64 {
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| if yi { -softplus(-e) } else { -softplus(e) })
        .sum()
}

/// Cholesky solve of a symmetric positive definite system (row-major `a`).
fn solve_spd(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= a[i * n + i].abs() * 1e-13 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * z[k]).sum();
        z[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (z[i] - s) / l[i * n + i];
    }
    Some(x)
}

struct Fit {
    intercept: f64,
    coefficients: Vec<f64>,
    log_likelihood: f64,
    separation: bool,
    iterations: usize,
}

/// Newton-Raphson on standardized columns; coefficients returned on the
/// original scale.
fn fit_columns(columns: &[&[f64]], y: &[bool]) -> Result<Fit, ModelError> {
    let n = y.len();
    let k = columns.len();
    let dim = k + 1;
    let mut center = Vec::with_capacity(k);
    let mut scale = Vec::with_capacity(k);
    for (j, col) in columns.iter().enumerate() {
        let m = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
        if sd.is_nan() || sd <= 0.0 {
            return Err(ModelError::Singular(format!("column {j} is constant")));
        }
        center.push(m);
        scale.push(sd);
    }
    // z[i * dim + j], j = 0 is the intercept column
    let mut z = vec![1.0; n * dim];
    for (j, col) in columns.iter().enumerate() {
        for i in 0..n {
            z[i * dim + j + 1] = (col[i] - center[j]) / scale[j];
        }
    }

    let rate = y.iter().filter(|&&v| v).count() as f64 / n as f64;
    let mut theta = vec![0.0; dim];
    theta[0] = (rate / (1.0 - rate)).ln();
    let linear = |theta: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| (0..dim).map(|j| z[i * dim + j] * theta[j]).sum())
            .collect()
    };
    let mut eta = linear(&theta);
    let mut ll = bernoulli_ll(&eta, y);
    let mut separation = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        let mut grad = vec![0.0; dim];
        let mut hess = vec![0.0; dim * dim];
        for i in 0..n {
            let p = sigmoid(eta[i]);
            let r = if y[i] { 1.0 } else { 0.0 } - p;
            let w = p * (1.0 - p);
            let row = &z[i * dim..(i + 1) * dim];
            for a in 0..dim {
                grad[a] += row[a] * r;
                for b in 0..=a {
                    hess[a * dim + b] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                hess[b * dim + a] = hess[a * dim + b];
            }
        }
        if grad.iter().all(|g| g.abs() < GRADIENT_TOLERANCE) {
            break;
        }
        iterations += 1;
        let Some(step) = solve_spd(&hess, &grad, dim) else {
            if iterations == 1 {
                return Err(ModelError::Singular("information matrix is not positive definite".into()));
            }
            // curvature collapsed after fitted probabilities saturated
            separation = true;
            break;
        };

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let cand_eta = linear(&cand);
            let cand_ll = bernoulli_ll(&cand_eta, y);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                theta = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if theta[1..].iter().any(|b| b.abs() > SEPARATION_CAP) {
            for b in &mut theta[1..] {
                *b = b.clamp(-SEPARATION_CAP, SEPARATION_CAP);
            }
            eta = linear(&theta);
            ll = bernoulli_ll(&eta, y);
            separation = true;
            break;
        }
    }
    if !separation
        && eta.iter().zip(y).all(|(&e, &yi)| (if yi { 1.0 } else { 0.0 } - sigmoid(e)).abs() < 1e-6)
    {
        // every row fitted perfectly: the likelihood has no finite maximizer
        separation = true;
    }
    if iterations == MAX_ITERATIONS {
        warn!("logistic fit stopped after {MAX_ITERATIONS} iterations without meeting the gradient tolerance");
    }

    let coefficients: Vec<f64> = (0..k).map(|j| theta[j + 1] / scale[j]).collect();
    let intercept = theta[0] - (0..k).map(|j| coefficients[j] * center[j]).sum::<f64>();
    Ok(Fit { intercept, coefficients, log_likelihood: ll, separation, iterations })
}

fn targets(table: &FeatureTable) -> Result<Vec<bool>, ModelError> {
    if !table.has_both_classes() {
        return Err(ModelError::SingleClass);
    }
    Ok(table.positives())
}

fn assemble(fit: Fit, features: Vec<String>, n: usize) -> FittedLogReg {
    let n_params = 1 + fit.coefficients.len();
    FittedLogReg {
        intercept: fit.intercept,
        selected_order: features,
        coefficients: fit.coefficients,
        log_likelihood: fit.log_likelihood,
        bic: bic(fit.log_likelihood, n_params, n),
        n_train: n,
        separation: fit.separation,
        iterations: fit.iterations,
    }
}

/// Maximum-likelihood fit on the named features (none = intercept only).
pub fn fit(table: &FeatureTable, features: &[String]) -> Result<FittedLogReg, ModelError> {
    let y = targets(table)?;
    let cols = table.dense_columns(features)?;
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let f = fit_columns(&refs, &y)?;
    if f.separation {
        warn!("separation detected; coefficients capped at |{SEPARATION_CAP}| on the standardized scale");
    }
    Ok(assemble(f, features.to_vec(), table.n_samples()))
}

fn linear_predictor(
    intercept: f64,
    coefficients: &[f64],
    columns: &[Vec<f64>],
    n: usize,
) -> Vec<f64> {
    (0..n)
        .map(|i| intercept + coefficients.iter().zip(columns).map(|(b, c)| b * c[i]).sum::<f64>())
        .collect()
}

pub fn predict_proba(model: &FittedLogReg, table: &FeatureTable) -> Result<Vec<f64>, PredictError> {
    let cols = table.dense_columns(&model.selected_order)?;
    Ok(linear_predictor(model.intercept, &model.coefficients, &cols, table.n_samples())
        .into_iter()
        .map(sigmoid)
        .collect())
}

/// Bernoulli log-likelihood of arbitrary parameters on `table`.
pub fn log_likelihood(
    table: &FeatureTable,
    features: &[String],
    intercept: f64,
    coefficients: &[f64],
) -> Result<f64, PredictError> {
    let cols = table.dense_columns(features)?;
    let eta = linear_predictor(intercept, coefficients, &cols, table.n_samples());
    Ok(bernoulli_ll(&eta, &table.positives()))
}

/// Analytic score vector `X^T (y - p)`, intercept first.
pub fn score_gradient(
    table: &FeatureTable,
    features: &[String],
    intercept: f64,
    coefficients: &[f64],
) -> Result<Vec<f64>, PredictError> {
    let cols = table.dense_columns(features)?;
    let n = table.n_samples();
    let eta = linear_predictor(intercept, coefficients, &cols, n);
    let y = table.positives();
    let resid: Vec<f64> = (0..n)
        .map(|i| if y[i] { 1.0 } else { 0.0 } - sigmoid(eta[i]))
        .collect();
    let mut g = vec![resid.iter().sum()];
    g.extend(cols.iter().map(|c| c.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>()));
    Ok(g)
}

/// Forward selection from the intercept-only model. Each step adds the
/// candidate giving the lowest BIC (ties by name); selection halts once the
/// best available BIC improvement over the current model is `<= delta_bic_stop`.
pub fn forward_select(
    table: &FeatureTable,
    candidates: &[String],
    delta_bic_stop: f64,
) -> Result<FittedLogReg, ModelError> {
    let y = targets(table)?;
    let n = table.n_samples();
    let mut pool: Vec<(String, Vec<f64>)> = Vec::new();
    for c in candidates {
        if pool.iter().any(|(name, _)| name == c) {
            continue;
        }
        let j = table
            .feature_index(c)
            .ok_or_else(|| crate::data::DataError::UnknownFeature(c.clone()))?;
        pool.push((c.clone(), table.dense_column(j)?));
    }

    let mut chosen: Vec<usize> = Vec::new();
    let mut current = assemble(fit_columns(&[], &y)?, Vec::new(), n);
    loop {
        let remaining: Vec<usize> = (0..pool.len()).filter(|k| !chosen.contains(k)).collect();
        if remaining.is_empty() {
            break;
        }
        let trials: Vec<(usize, Result<Fit, ModelError>)> = remaining
            .par_iter()
            .map(|&k| {
                let cols: Vec<&[f64]> = chosen
                    .iter()
                    .chain(std::iter::once(&k))
                    .map(|&c| pool[c].1.as_slice())
                    .collect();
                (k, fit_columns(&cols, &y))
            })
            .collect();

        let mut best: Option<(f64, usize, Fit)> = None;
        for (k, trial) in trials {
            match trial {
                Ok(f) => {
                    let b = bic(f.log_likelihood, chosen.len() + 2, n);
                    let better = match &best {
                        None => true,
                        Some((bb, bk, _)) => b < *bb || (b == *bb && pool[k].0 < pool[*bk].0),
                    };
                    if better {
                        best = Some((b, k, f));
                    }
                }
                Err(e) => warn!("skipping candidate `{}`: {e}", pool[k].0),
            }
        }
        let Some((best_bic, k, f)) = best else { break };
        if current.bic - best_bic <= delta_bic_stop {
            break;
        }
        chosen.push(k);
        let names = chosen.iter().map(|&c| pool[c].0.clone()).collect();
        current = assemble(f, names, n);
    }
    Ok(current)
}

/// Versioned JSON document for a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegDocument {
    pub format: String,
    pub version: u32,
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
    pub selected_order: Vec<String>,
    pub n_train: usize,
    pub log_likelihood: f64,
    pub bic: f64,
    pub separation: bool,
}

pub const DOCUMENT_FORMAT: &str = "fusionscreen-logreg";

impl From<&FittedLogReg> for LogRegDocument {
    fn from(m: &FittedLogReg) -> Self {
        LogRegDocument {
            format: DOCUMENT_FORMAT.into(),
            version: 1,
            intercept: m.intercept,
            coefficients: m.selected_order.iter().cloned().zip(m.coefficients.iter().copied()).collect(),
            selected_order: m.selected_order.clone(),
            n_train: m.n_train,
            log_likelihood: m.log_likelihood,
            bic: m.bic,
            separation: m.separation,
        }
    }
}

impl TryFrom<LogRegDocument> for FittedLogReg {
    type Error = ModelError;

    fn try_from(d: LogRegDocument) -> Result<Self, Self::Error> {
        if d.format != DOCUMENT_FORMAT || d.version != 1 {
            return Err(ModelError::InvalidParams(format!(
                "unsupported model document {} v{}",
                d.format, d.version
            )));
        }
        let coefficients = d
            .selected_order
            .iter()
            .map(|f| {
                d.coefficients
                    .get(f)
                    .copied()
                    .ok_or_else(|| ModelError::InvalidParams(format!("no coefficient for `{f}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if coefficients.len() != d.coefficients.len() {
            return Err(ModelError::InvalidParams("selection order and coefficient map disagree".into()));
        }
        Ok(FittedLogReg {
            intercept: d.intercept,
            selected_order: d.selected_order,
            coefficients,
            log_likelihood: d.log_likelihood,
            bic: d.bic,
            n_train: d.n_train,
            separation: d.separation,
            iterations: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClassLabel;

    fn table(cols: &[(&str, Vec<f64>)], y: &[bool]) -> FeatureTable {
        let n = y.len();
        FeatureTable::from_columns(
            (0..n).map(|i| format!("S{i}")).collect(),
            vec!["C".into(); n],
            y.iter().map(|&v| if v { ClassLabel::Malignant } else { ClassLabel::Benign }).collect(),
            cols.iter().map(|(n, _)| n.to_string()).collect(),
            &cols.iter().map(|(_, c)| c.clone()).collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn intercept_only_closed_form() {
        let y: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let t = table(&[], &y);
        let m = fit(&t, &[]).unwrap();
        assert!(m.intercept.abs() < 1e-12);
        assert!((m.log_likelihood - 100.0 * 0.5f64.ln()).abs() < 1e-9);
        assert!((m.bic - (100f64.ln() + 138.62943611198907)).abs() < 1e-9);
        assert!((m.bic - 143.2346).abs() < 1e-4);
    }

    #[test]
    fn label_copy_feature_separates() {
        let y: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let x: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        let t = table(&[("leak", x)], &y);
        let m = fit(&t, &["leak".to_string()]).unwrap();
        assert!(m.separation);
    }

    #[test]
    fn constant_column_is_singular() {
        let y: Vec<bool> = (0..10).map(|i| i < 5).collect();
        let t = table(&[("c", vec![1.0; 10])], &y);
        assert!(matches!(fit(&t, &["c".to_string()]), Err(ModelError::Singular(_))));
    }

    #[test]
    fn single_class_rejected() {
        let t = table(&[("x", vec![1.0, 2.0])], &[true, true]);
        assert!(matches!(fit(&t, &[]), Err(ModelError::SingleClass)));
    }

    #[test]
    fn predictions() {
        let t = table(&[("x", vec![-1.0, 0.0, 2.0])], &[false, true, true]);
        let flat = FittedLogReg {
            intercept: 0.0,
            selected_order: vec!["x".into()],
            coefficients: vec![0.0],
            log_likelihood: 0.0,
            bic: 0.0,
            n_train: 0,
            separation: false,
            iterations: 0,
        };
        assert_eq!(predict_proba(&flat, &t).unwrap(), vec![0.5; 3]);
        let m = FittedLogReg { intercept: 3f64.ln(), selected_order: vec![], coefficients: vec![], ..flat.clone() };
        for p in predict_proba(&m, &t).unwrap() {
            assert!((p - 0.75).abs() < 1e-15);
        }
        let m = FittedLogReg { coefficients: vec![0.7], ..flat };
        let p = predict_proba(&m, &t).unwrap();
        assert!(p[0] < p[1] && p[1] < p[2]);
    }

    #[test]
    fn predict_needs_features() {
        let t = table(&[("x", vec![1.0])], &[true]);
        let m = FittedLogReg {
            intercept: 0.0,
            selected_order: vec!["y".into()],
            coefficients: vec![1.0],
            log_likelihood: 0.0,
            bic: 0.0,
            n_train: 0,
            separation: false,
            iterations: 0,
        };
        assert!(matches!(predict_proba(&m, &t), Err(PredictError::MissingFeature(_))));
    }

    #[test]
    fn infinite_stop_returns_intercept_only() {
        let y: Vec<bool> = (0..30).map(|i| i % 2 == 0).collect();
        let x: Vec<f64> = (0..30).map(|i| if i % 2 == 0 { i as f64 } else { -(i as f64) }).collect();
        let t = table(&[("x", x)], &y);
        let m = forward_select(&t, &["x".to_string()], f64::INFINITY).unwrap();
        assert!(m.selected_order.is_empty());
    }

    #[test]
    fn document_round_trip() {
        let y: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let x: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64).collect();
        let t = table(&[("x", x)], &y);
        let m = fit(&t, &["x".to_string()]).unwrap();
        let text = serde_json::to_string(&LogRegDocument::from(&m)).unwrap();
        let back: FittedLogReg = serde_json::from_str::<LogRegDocument>(&text).unwrap().try_into().unwrap();
        assert_eq!(back.coefficients, m.coefficients);
        assert_eq!(back.intercept, m.intercept);
        assert_eq!(back.bic, m.bic);
    }
}
