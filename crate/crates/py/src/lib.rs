//! Python bindings. Labels cross the boundary as the strings `"benign"` and
//! `"malignant"`; tables are built from column lists or loaded from CSV.

use std::collections::BTreeMap;

use fusionscreen::data::{self, ClassLabel, Schema};
use fusionscreen::{forest, fusion, logreg, metrics, mrcv, synth, univariate};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_labels(labels: &[String]) -> PyResult<Vec<ClassLabel>> {
    labels.iter().map(|l| l.parse::<ClassLabel>().map_err(err)).collect()
}

#[pyclass(name = "FeatureTable", module = "pyfusionscreen", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyFeatureTable {
    inner: data::FeatureTable,
}

#[pymethods]
impl PyFeatureTable {
    /// Builds a complete table; `columns[j]` holds feature `j` for every sample.
    #[new]
    #[pyo3(signature = (sample_ids, labels, feature_names, columns, cohort=None))]
    fn new(
        sample_ids: Vec<String>,
        labels: Vec<String>,
        feature_names: Vec<String>,
        columns: Vec<Vec<f64>>,
        cohort: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let n = sample_ids.len();
        let cohort = cohort.unwrap_or_else(|| vec!["all".to_string(); n]);
        let inner = data::FeatureTable::from_columns(sample_ids, cohort, parse_labels(&labels)?, feature_names, &columns)
            .map_err(err)?;
        Ok(PyFeatureTable { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, id_column="id", cohort_column="cohort", label_column="label"))]
    fn load(path: &str, id_column: &str, cohort_column: &str, label_column: &str) -> PyResult<Self> {
        let schema = Schema {
            id_column: id_column.into(),
            cohort_column: cohort_column.into(),
            label_column: label_column.into(),
            patient_column: None,
        };
        Ok(PyFeatureTable { inner: data::load_feature_table(path, &schema).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        data::save_feature_table(&self.inner, &Schema::default(), path).map_err(err)
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    #[getter]
    fn sample_ids(&self) -> Vec<String> {
        self.inner.sample_ids().to_vec()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names().to_vec()
    }

    #[getter]
    fn labels(&self) -> Vec<&'static str> {
        self.inner.labels().iter().map(|l| l.as_str()).collect()
    }

    /// Column values with `None` for missing cells.
    fn column(&self, name: &str) -> PyResult<Vec<Option<f64>>> {
        let j = self.inner.feature_index(name).ok_or_else(|| err(format!("unknown feature `{name}`")))?;
        Ok(self.inner.column(j))
    }

    fn select_features(&self, names: Vec<String>) -> PyResult<Self> {
        Ok(PyFeatureTable { inner: self.inner.select_features(&names).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("FeatureTable({} samples x {} features)", self.inner.n_samples(), self.inner.n_features())
    }
}

#[pyclass(name = "LogReg", module = "pyfusionscreen", frozen)]
pub struct PyLogReg {
    inner: logreg::FittedLogReg,
}

#[pymethods]
impl PyLogReg {
    #[getter]
    fn intercept(&self) -> f64 {
        self.inner.intercept
    }

    #[getter]
    fn coefficients(&self) -> BTreeMap<String, f64> {
        self.inner.selected_order.iter().cloned().zip(self.inner.coefficients.iter().copied()).collect()
    }

    #[getter]
    fn selected_order(&self) -> Vec<String> {
        self.inner.selected_order.clone()
    }

    #[getter]
    fn log_likelihood(&self) -> f64 {
        self.inner.log_likelihood
    }

    #[getter]
    fn bic(&self) -> f64 {
        self.inner.bic
    }

    #[getter]
    fn separation(&self) -> bool {
        self.inner.separation
    }

    fn predict_proba(&self, table: &PyFeatureTable) -> PyResult<Vec<f64>> {
        logreg::predict_proba(&self.inner, &table.inner).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&logreg::LogRegDocument::from(&self.inner)).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let doc: logreg::LogRegDocument = serde_json::from_str(text).map_err(err)?;
        Ok(PyLogReg { inner: doc.try_into().map_err(err)? })
    }
}

#[pyfunction]
fn fit_logreg(table: &PyFeatureTable, features: Vec<String>) -> PyResult<PyLogReg> {
    Ok(PyLogReg { inner: logreg::fit(&table.inner, &features).map_err(err)? })
}

#[pyfunction]
#[pyo3(signature = (table, candidates, delta_bic_stop=2.0))]
fn forward_select(table: &PyFeatureTable, candidates: Vec<String>, delta_bic_stop: f64) -> PyResult<PyLogReg> {
    Ok(PyLogReg { inner: logreg::forward_select(&table.inner, &candidates, delta_bic_stop).map_err(err)? })
}

#[pyclass(name = "Forest", module = "pyfusionscreen", frozen)]
pub struct PyForest {
    inner: forest::Forest,
}

#[pymethods]
impl PyForest {
    #[getter]
    fn ntree(&self) -> usize {
        self.inner.trees.len()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    fn predict_proba(&self, table: &PyFeatureTable) -> PyResult<Vec<f64>> {
        forest::predict_proba(&self.inner, &table.inner).map_err(err)
    }

    /// `(feature, mean_decrease, std_error, normalized)` per feature.
    fn oob_importance(&self, table: &PyFeatureTable) -> PyResult<Vec<(String, f64, f64, f64)>> {
        let r = forest::oob_permutation_importance(&self.inner, &table.inner).map_err(err)?;
        Ok(r.entries.into_iter().map(|e| (e.feature, e.mean_decrease, e.std_error, e.normalized)).collect())
    }
}

#[pyfunction]
#[pyo3(signature = (table, mtry, ntree, seed, min_leaf=1, class_weighting=true))]
fn fit_forest(
    table: &PyFeatureTable,
    mtry: usize,
    ntree: usize,
    seed: u64,
    min_leaf: usize,
    class_weighting: bool,
) -> PyResult<PyForest> {
    let params = forest::ForestParams { mtry, ntree, min_leaf, seed, class_weighting };
    Ok(PyForest { inner: forest::fit_forest(&table.inner, &params).map_err(err)? })
}

/// `(U, p_value, method)` for group `a` against group `b`.
#[pyfunction]
fn mann_whitney(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, &'static str)> {
    let r = univariate::mann_whitney(&a, &b).map_err(err)?;
    let method = match r.method {
        univariate::PValueMethod::Exact => "exact",
        univariate::PValueMethod::Approximate => "approximate",
    };
    Ok((r.u, r.p_value, method))
}

#[pyfunction]
fn shapiro_wilk(sample: Vec<f64>) -> PyResult<(f64, f64)> {
    univariate::shapiro_wilk(&sample).map_err(err)
}

#[pyfunction]
fn rank_biserial(malignant: Vec<f64>, benign: Vec<f64>) -> PyResult<f64> {
    univariate::rank_biserial(&malignant, &benign).map_err(err)
}

#[pyfunction]
fn bh_fdr(p_values: Vec<f64>) -> PyResult<Vec<f64>> {
    univariate::bh_fdr(&p_values).map_err(err)
}

type StatsRow = BTreeMap<&'static str, Option<f64>>;

/// (ranking, kept features, mean validation balanced accuracy)
type MrcvSummary = (Vec<(String, f64)>, Vec<String>, f64);

/// `(feature, stats)` per feature; untestable statistics are `None`.
#[pyfunction]
#[pyo3(signature = (table, alpha=0.05))]
fn univariate_screen(
    table: &PyFeatureTable,
    alpha: f64,
) -> PyResult<Vec<(String, StatsRow)>> {
    let r = univariate::univariate_screen(&table.inner, alpha).map_err(err)?;
    Ok(r.results
        .iter()
        .map(|u| {
            let stats = BTreeMap::from([
                ("normality_p_benign", u.normality_p_benign),
                ("normality_p_malignant", u.normality_p_malignant),
                ("rg", u.rg),
                ("p_value", u.p_value),
                ("fdr", u.fdr),
            ]);
            (u.feature.clone(), stats)
        })
        .collect())
}

#[pyfunction]
#[pyo3(name = "metrics_from_confusion")]
fn py_metrics_from_confusion(tp: u64, fp: u64, tn: u64, fn_: u64) -> PyResult<BTreeMap<&'static str, Option<f64>>> {
    let c = metrics::Confusion { tp, fp, tn, r#fn: fn_ };
    let row = metrics::metrics_from_confusion(&c).map_err(err)?;
    Ok(metrics::METRIC_NAMES.into_iter().zip(row.values()).collect())
}

#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<String>) -> PyResult<f64> {
    metrics::auc(&scores, &parse_labels(&labels)?).map_err(err)
}

/// `(threshold, balanced_accuracy)` maximizing BAcc under `score >= threshold`.
#[pyfunction]
fn best_threshold_bacc(scores: Vec<f64>, labels: Vec<String>) -> PyResult<(f64, f64)> {
    metrics::best_threshold_bacc(&scores, &parse_labels(&labels)?).map_err(err)
}

#[pyfunction]
fn roc_curve(scores: Vec<f64>, labels: Vec<String>) -> PyResult<Vec<(f64, f64)>> {
    Ok(metrics::roc_curve(&scores, &parse_labels(&labels)?).map_err(err)?.xy())
}

#[pyfunction]
fn fuse_pair(p1: f64, p2: f64, rule: &str) -> PyResult<f64> {
    let rule: fusion::FusionRule = rule.parse().map_err(err)?;
    fusion::fuse_pair(p1, p2, rule).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (n_benign, n_malignant, n_features, planted, seed))]
fn synth_table(
    n_benign: usize,
    n_malignant: usize,
    n_features: usize,
    planted: Vec<(usize, f64)>,
    seed: u64,
) -> PyResult<PyFeatureTable> {
    let spec = synth::SynthSpec::new(n_benign, n_malignant, n_features, seed).with_planted(planted);
    Ok(PyFeatureTable { inner: synth::generate(&spec).map_err(err)? })
}

/// Repeated LR cross-validation; returns `(ranking, elbow_features, mean_validation_bacc)`.
#[pyfunction]
#[pyo3(signature = (table, candidates, repeats=100, validation_fraction=0.3, seed=0))]
fn mrcv_lr(
    table: &PyFeatureTable,
    candidates: Vec<String>,
    repeats: usize,
    validation_fraction: f64,
    seed: u64,
) -> PyResult<MrcvSummary> {
    let opts = mrcv::LrMrcvOptions { repeats, validation_fraction, base_seed: seed, ..Default::default() };
    let outcomes = mrcv::run_mrcv_lr(&table.inner, &candidates, &opts).map_err(err)?;
    let ranking = mrcv::rank_features_lr(&outcomes, &candidates);
    let kept = mrcv::elbow_cut(&ranking).unwrap_or_default();
    let ok: Vec<f64> = outcomes.iter().filter(|o| !o.failed()).map(|o| o.bacc_validation).collect();
    let mean = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 };
    Ok((ranking.entries, kept, mean))
}

#[pymodule]
fn pyfusionscreen(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFeatureTable>()?;
    m.add_class::<PyLogReg>()?;
    m.add_class::<PyForest>()?;
    m.add_function(wrap_pyfunction!(fit_logreg, m)?)?;
    m.add_function(wrap_pyfunction!(forward_select, m)?)?;
    m.add_function(wrap_pyfunction!(fit_forest, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney, m)?)?;
    m.add_function(wrap_pyfunction!(shapiro_wilk, m)?)?;
    m.add_function(wrap_pyfunction!(rank_biserial, m)?)?;
    m.add_function(wrap_pyfunction!(bh_fdr, m)?)?;
    m.add_function(wrap_pyfunction!(univariate_screen, m)?)?;
    m.add_function(wrap_pyfunction!(py_metrics_from_confusion, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(best_threshold_bacc, m)?)?;
    m.add_function(wrap_pyfunction!(roc_curve, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_pair, m)?)?;
    m.add_function(wrap_pyfunction!(synth_table, m)?)?;
    m.add_function(wrap_pyfunction!(mrcv_lr, m)?)?;
    Ok(())
}
