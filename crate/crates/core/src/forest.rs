//! Random forest of CART trees with balanced class weighting, out-of-bag
//! prediction and permutation importance normalized by its standard error.

use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureTable;
use crate::error::{ModelError, PredictError};
use crate::report::{self, fmt_f64};

const IMPORTANCE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub mtry: usize,
    pub ntree: usize,
    pub min_leaf: usize,
    pub seed: u64,
    pub class_weighting: bool,
}

impl ForestParams {
    pub fn new(mtry: usize, ntree: usize, seed: u64) -> Self {
        ForestParams { mtry, ntree, min_leaf: 1, seed, class_weighting: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize, gain: f64 },
    Leaf { positive: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    /// Training rows absent from this tree's bootstrap, ascending.
    pub oob: Vec<usize>,
}

impl Tree {
    fn leaf_value(&self, get: impl Fn(usize) -> f64) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { positive } => return positive,
                Node::Split { feature, threshold, left, right, .. } => {
                    k = if get(feature) <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.leaf_value(|f| x[f])
    }

    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub params: ForestParams,
    pub feature_names: Vec<String>,
    /// Weights for (benign, malignant).
    pub class_weights: [f64; 2],
    pub n_train: usize,
    pub trees: Vec<Tree>,
}

struct Grower<'a> {
    cols: &'a [Vec<f64>],
    y: &'a [bool],
    weights: [f64; 2],
    mtry: usize,
    min_leaf: usize,
}

fn gini(wp: f64, wn: f64) -> f64 {
    let w = wp + wn;
    if w <= 0.0 {
        return 0.0;
    }
    let p = wp / w;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grower<'_> {
    fn weight(&self, i: usize) -> f64 {
        self.weights[self.y[i] as usize]
    }

    fn class_weights(&self, rows: &[usize]) -> (f64, f64) {
        rows.iter().fold((0.0, 0.0), |(p, n), &i| {
            if self.y[i] { (p + self.weight(i), n) } else { (p, n + self.weight(i)) }
        })
    }

    fn best_split(&self, rows: &[usize], features: &[usize], wp: f64, wn: f64) -> Option<BestSplit> {
        let parent = (wp + wn) * gini(wp, wn);
        let mut best: Option<BestSplit> = None;
        let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for &f in features {
            let col = &self.cols[f];
            keyed.clear();
            keyed.extend(rows.iter().map(|&i| (col[i], i)));
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut lp, mut ln) = (0.0, 0.0);
            for k in 0..keyed.len() - 1 {
                let i = keyed[k].1;
                if self.y[i] { lp += self.weight(i) } else { ln += self.weight(i) }
                let (x, next) = (keyed[k].0, keyed[k + 1].0);
                if x == next || k + 1 < self.min_leaf || keyed.len() - k - 1 < self.min_leaf {
                    continue;
                }
                let (rp, rn) = (wp - lp, wn - ln);
                let gain = parent - (lp + ln) * gini(lp, ln) - (rp + rn) * gini(rp, rn);
                if gain > 1e-12 * parent.max(f64::MIN_POSITIVE) && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = x + (next - x) / 2.0;
                    let threshold = if mid < next { mid } else { x };
                    best = Some(BestSplit { feature: f, threshold, gain });
                }
            }
        }
        best
    }

    fn grow(&self, bootstrap: Vec<usize>, rng: &mut ChaCha8Rng) -> Vec<Node> {
        let n_features = self.cols.len();
        let mut nodes: Vec<Node> = Vec::new();
        // (slot, rows) pairs awaiting expansion; slot already reserved in `nodes`
        let mut stack: Vec<(usize, Vec<usize>)> = vec![(0, bootstrap)];
        nodes.push(Node::Leaf { positive: 0.0 });
        let mut pool: Vec<usize> = (0..n_features).collect();
        while let Some((slot, rows)) = stack.pop() {
            let (wp, wn) = self.class_weights(&rows);
            let leaf = Node::Leaf { positive: if wp + wn > 0.0 { wp / (wp + wn) } else { 0.5 } };
            if wp == 0.0 || wn == 0.0 || rows.len() < 2 * self.min_leaf {
                nodes[slot] = leaf;
                continue;
            }
            let (chosen, _) = pool.partial_shuffle(rng, self.mtry);
            let mut features = chosen.to_vec();
            features.sort_unstable();
            let Some(split) = self.best_split(&rows, &features, wp, wn) else {
                nodes[slot] = leaf;
                continue;
            };
            let col = &self.cols[split.feature];
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| col[i] <= split.threshold);
            let left = nodes.len();
            nodes.push(Node::Leaf { positive: 0.0 });
            let right = nodes.len();
            nodes.push(Node::Leaf { positive: 0.0 });
            nodes[slot] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
                gain: split.gain,
            };
            stack.push((right, r));
            stack.push((left, l));
        }
        nodes
    }
}

pub fn class_weights(y: &[bool], weighting: bool) -> [f64; 2] {
    if !weighting {
        return [1.0, 1.0];
    }
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&v| v).count() as f64;
    [n / (2.0 * (n - pos)), n / (2.0 * pos)]
}

fn tree_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fits a forest on every feature of `table`. Tree `t` draws from its own
/// ChaCha stream `t` under `params.seed`, so the result does not depend on
/// the worker count.
pub fn fit_forest(table: &FeatureTable, params: &ForestParams) -> Result<Forest, ModelError> {
    let p = table.n_features();
    if params.ntree == 0 || params.min_leaf == 0 || params.mtry == 0 || params.mtry > p {
        return Err(ModelError::InvalidParams(format!(
            "mtry={} ntree={} min_leaf={} with {p} features",
            params.mtry, params.ntree, params.min_leaf
        )));
    }
    if !table.has_both_classes() {
        return Err(ModelError::SingleClass);
    }
    let cols = table.dense_columns(table.feature_names())?;
    let y = table.positives();
    let n = y.len();
    let weights = class_weights(&y, params.class_weighting);
    let grower = Grower { cols: &cols, y: &y, weights, mtry: params.mtry, min_leaf: params.min_leaf };

    let trees = (0..params.ntree)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t as u64);
            let mut in_bag = vec![false; n];
            let bootstrap: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    in_bag[i] = true;
                    i
                })
                .collect();
            let oob = (0..n).filter(|&i| !in_bag[i]).collect();
            Tree { nodes: grower.grow(bootstrap, &mut rng), oob }
        })
        .collect();
    Ok(Forest {
        params: *params,
        feature_names: table.feature_names().to_vec(),
        class_weights: weights,
        n_train: n,
        trees,
    })
}

fn rows_of(forest: &Forest, table: &FeatureTable) -> Result<Vec<Vec<f64>>, PredictError> {
    let cols = table.dense_columns(&forest.feature_names)?;
    Ok((0..table.n_samples())
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect())
}

impl Forest {
    pub fn per_tree_proba(&self, table: &FeatureTable) -> Result<Vec<Vec<f64>>, PredictError> {
        let rows = rows_of(self, table)?;
        Ok(self.trees.iter().map(|t| rows.iter().map(|x| t.predict_row(x)).collect()).collect())
    }
}

/// Mean of the per-tree leaf proportions, summed in tree order.
pub fn predict_proba(forest: &Forest, table: &FeatureTable) -> Result<Vec<f64>, PredictError> {
    let rows = rows_of(forest, table)?;
    let k = forest.trees.len() as f64;
    Ok(rows
        .par_iter()
        .map(|x| forest.trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / k)
        .collect())
}

/// Out-of-bag probability per training row (`None` if a row was in every bootstrap).
pub fn oob_proba(forest: &Forest, table: &FeatureTable) -> Result<Vec<Option<f64>>, PredictError> {
    let rows = rows_of(forest, table)?;
    let mut sum = vec![0.0; rows.len()];
    let mut count = vec![0usize; rows.len()];
    for t in &forest.trees {
        for &i in &t.oob {
            sum[i] += t.predict_row(&rows[i]);
            count[i] += 1;
        }
    }
    Ok(sum.into_iter().zip(count).map(|(s, c)| (c > 0).then(|| s / c as f64)).collect())
}

/// Reorders `rows` in place; used to permute one column within a tree's OOB rows.
pub trait Permuter: Sync {
    fn permute(&self, tree: usize, feature: usize, rows: &mut [usize]);
}

/// Uniform shuffles from a ChaCha stream per tree, keyed on the forest seed.
pub struct SeededShuffle {
    pub seed: u64,
}

impl Permuter for SeededShuffle {
    fn permute(&self, tree: usize, feature: usize, rows: &mut [usize]) {
        let mut rng = tree_rng(self.seed ^ IMPORTANCE_SALT, tree as u64);
        rng.set_word_pos(feature as u128 * (1 << 20));
        rows.shuffle(&mut rng);
    }
}

pub struct IdentityPermutation;

impl Permuter for IdentityPermutation {
    fn permute(&self, _: usize, _: usize, _: &mut [usize]) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceEntry {
    pub feature: String,
    pub mean_decrease: f64,
    pub std_error: f64,
    /// mean / SE; 0 when both vanish, signed infinity when only SE does.
    pub normalized: f64,
}

impl ImportanceEntry {
    pub fn is_saturated(&self) -> bool {
        self.normalized.is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub entries: Vec<ImportanceEntry>,
    pub trees_used: usize,
}

impl ImportanceReport {
    pub fn get(&self, feature: &str) -> Option<&ImportanceEntry> {
        self.entries.iter().find(|e| e.feature == feature)
    }

    /// Feature with the highest normalized importance; ties by name.
    pub fn top(&self) -> Option<&ImportanceEntry> {
        self.entries.iter().min_by(|a, b| {
            b.normalized.total_cmp(&a.normalized).then_with(|| a.feature.cmp(&b.feature))
        })
    }
}

pub fn oob_permutation_importance(forest: &Forest, table: &FeatureTable) -> Result<ImportanceReport, PredictError> {
    oob_permutation_importance_with(forest, table, &SeededShuffle { seed: forest.params.seed })
}

/// Per tree: unweighted OOB accuracy minus the accuracy after permuting one
/// column among that tree's OOB rows.
pub fn oob_permutation_importance_with(
    forest: &Forest,
    table: &FeatureTable,
    permuter: &dyn Permuter,
) -> Result<ImportanceReport, PredictError> {
    let rows = rows_of(forest, table)?;
    let y = table.positives();
    let p = forest.feature_names.len();
    let empty = forest.trees.iter().filter(|t| t.oob.is_empty()).count();
    if empty > 0 {
        warn!("{empty} trees have no out-of-bag rows and are skipped in importance");
    }

    let per_tree: Vec<Vec<f64>> = forest
        .trees
        .par_iter()
        .enumerate()
        .filter(|(_, t)| !t.oob.is_empty())
        .map(|(ti, t)| {
            let correct = |pred: f64, i: usize| ((pred >= 0.5) == y[i]) as usize;
            let m = t.oob.len() as f64;
            let base = t.oob.iter().map(|&i| correct(t.predict_row(&rows[i]), i)).sum::<usize>();
            let mut used = vec![false; p];
            t.split_features().for_each(|f| used[f] = true);
            (0..p)
                .map(|f| {
                    if !used[f] {
                        return 0.0;
                    }
                    let mut donors = t.oob.clone();
                    permuter.permute(ti, f, &mut donors);
                    let hits = t
                        .oob
                        .iter()
                        .zip(&donors)
                        .map(|(&i, &d)| {
                            let pred = t.leaf_value(|g| if g == f { rows[d][f] } else { rows[i][g] });
                            correct(pred, i)
                        })
                        .sum::<usize>();
                    (base as f64 - hits as f64) / m
                })
                .collect()
        })
        .collect();

    let k = per_tree.len();
    let entries = (0..p)
        .map(|f| {
            let mean = if k == 0 { 0.0 } else { per_tree.iter().map(|d| d[f]).sum::<f64>() / k as f64 };
            let se = if k < 2 {
                0.0
            } else {
                let ss = per_tree.iter().map(|d| (d[f] - mean).powi(2)).sum::<f64>();
                (ss / (k - 1) as f64).sqrt() / (k as f64).sqrt()
            };
            let normalized = if se > 0.0 {
                mean / se
            } else if mean == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(mean)
            };
            ImportanceEntry { feature: forest.feature_names[f].clone(), mean_decrease: mean, std_error: se, normalized }
        })
        .collect();
    Ok(ImportanceReport { entries, trees_used: k })
}

pub fn write_importance_csv<W: Write>(report: &ImportanceReport, writer: W) -> std::io::Result<()> {
    let mut w = report::csv_writer(writer, "importance")?;
    w.write_record(["feature", "mean", "se", "normalized"])?;
    for e in &report.entries {
        w.write_record([
            e.feature.clone(),
            fmt_f64(e.mean_decrease),
            fmt_f64(e.std_error),
            fmt_f64(e.normalized),
        ])?;
    }
    w.flush()
}

/// Versioned JSON document wrapping a forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestDocument {
    pub format: String,
    pub version: u32,
    pub forest: Forest,
}

pub const DOCUMENT_FORMAT: &str = "fusionscreen-forest";

impl From<&Forest> for ForestDocument {
    fn from(f: &Forest) -> Self {
        ForestDocument { format: DOCUMENT_FORMAT.into(), version: 1, forest: f.clone() }
    }
}

impl TryFrom<ForestDocument> for Forest {
    type Error = ModelError;

    fn try_from(d: ForestDocument) -> Result<Self, Self::Error> {
        if d.format != DOCUMENT_FORMAT || d.version != 1 {
            return Err(ModelError::InvalidParams(format!("unsupported model document {} v{}", d.format, d.version)));
        }
        Ok(d.forest)
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
    fn single_leaf_predicts_weighted_prior() {
        let y: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let t = table(&[("x", x)], &y);
        let params = ForestParams { min_leaf: 20, ..ForestParams::new(1, 1, 3) };
        let f = fit_forest(&t, &params).unwrap();
        assert_eq!(f.trees[0].nodes.len(), 1);
        let Node::Leaf { positive } = f.trees[0].nodes[0] else { panic!() };
        assert!((0.0..=1.0).contains(&positive));
    }

    #[test]
    fn separable_feature_fits_training_data() {
        let y: Vec<bool> = (0..60).map(|i| i % 3 == 0).collect();
        let x: Vec<f64> = y.iter().enumerate().map(|(i, &v)| if v { 10.0 + i as f64 } else { i as f64 * 0.1 }).collect();
        let t = table(&[("x", x)], &y);
        let f = fit_forest(&t, &ForestParams::new(1, 100, 1)).unwrap();
        let p = predict_proba(&f, &t).unwrap();
        assert!(p.iter().zip(&y).all(|(&s, &v)| (s >= 0.5) == v));
    }

    #[test]
    fn unused_feature_has_zero_importance() {
        let y: Vec<bool> = (0..40).map(|i| i < 20).collect();
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let t = table(&[("x", x), ("const", vec![1.0; 40])], &y);
        let f = fit_forest(&t, &ForestParams::new(2, 50, 5)).unwrap();
        let imp = oob_permutation_importance(&f, &t).unwrap();
        let c = imp.get("const").unwrap();
        assert_eq!((c.mean_decrease, c.normalized), (0.0, 0.0));
    }

    #[test]
    fn rejects_bad_params() {
        let t = table(&[("x", vec![0.0, 1.0])], &[true, false]);
        assert!(fit_forest(&t, &ForestParams::new(2, 1, 0)).is_err());
        let t = table(&[("x", vec![0.0, 1.0])], &[true, true]);
        assert!(matches!(fit_forest(&t, &ForestParams::new(1, 1, 0)), Err(ModelError::SingleClass)));
    }

    #[test]
    fn balanced_weights() {
        let y = [true, false, false, false];
        assert_eq!(class_weights(&y, true), [4.0 / 6.0, 2.0]);
        assert_eq!(class_weights(&y, false), [1.0, 1.0]);
    }
}
