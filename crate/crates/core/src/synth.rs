//! Seeded synthetic feature tables with planted class shifts, block
//! correlation and optional two-modality layouts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ClassLabel, FeatureTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_benign: usize,
    pub n_malignant: usize,
    pub n_features: usize,
    /// (feature index, malignant shift in SD units)
    pub planted: Vec<(usize, f64)>,
    /// Consecutive blocks from feature 0: (size, within-block correlation).
    #[serde(default)]
    pub correlation_blocks: Vec<(usize, f64)>,
    #[serde(default = "one")]
    pub common_fraction: f64,
    /// Pair mode only: how much of each modality's shift is withheld from the
    /// malignant subgroup the other modality sees best (0 = none, 1 = all).
    #[serde(default)]
    pub complementarity: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl SynthSpec {
    pub fn new(n_benign: usize, n_malignant: usize, n_features: usize, seed: u64) -> Self {
        SynthSpec {
            n_benign,
            n_malignant,
            n_features,
            planted: Vec::new(),
            correlation_blocks: Vec::new(),
            common_fraction: 1.0,
            complementarity: 0.0,
            seed,
        }
    }

    pub fn with_planted(mut self, planted: Vec<(usize, f64)>) -> Self {
        self.planted = planted;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Some((i, _)) = self.planted.iter().find(|(i, _)| *i >= self.n_features) {
            return Err(format!("planted index {i} out of range for {} features", self.n_features));
        }
        if !(0.0..=1.0).contains(&self.common_fraction) {
            return Err(format!("common_fraction {} outside [0, 1]", self.common_fraction));
        }
        if !(0.0..=1.0).contains(&self.complementarity) {
            return Err(format!("complementarity {} outside [0, 1]", self.complementarity));
        }
        let covered: usize = self.correlation_blocks.iter().map(|b| b.0).sum();
        if covered > self.n_features {
            return Err("correlation blocks cover more features than exist".into());
        }
        if let Some((_, rho)) = self.correlation_blocks.iter().find(|(_, r)| !(0.0..=1.0).contains(r)) {
            return Err(format!("block correlation {rho} outside [0, 1]"));
        }
        Ok(())
    }
}

pub fn feature_name(prefix: &str, j: usize, n: usize) -> String {
    let width = n.max(1).to_string().len();
    format!("{prefix}{:0width$}", j + 1)
}

fn patient_id(i: usize, n: usize) -> String {
    let width = n.max(1).to_string().len();
    format!("P{:0width$}", i + 1)
}

/// Draws rows for `patients` (global indices). `subgroup_gain[i]` scales the
/// planted shift of malignant patient `i`.
fn draw(
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    patients: &[usize],
    gain: impl Fn(usize) -> f64,
) -> FeatureTable {
    let n_total = spec.n_benign + spec.n_malignant;
    let p = spec.n_features;
    let labels: Vec<ClassLabel> = patients
        .iter()
        .map(|&i| if i < spec.n_benign { ClassLabel::Benign } else { ClassLabel::Malignant })
        .collect();
    let mut columns = vec![vec![0.0; patients.len()]; p];
    for (r, &i) in patients.iter().enumerate() {
        let mut j = 0;
        for &(size, rho) in &spec.correlation_blocks {
            let latent: f64 = rng.sample(StandardNormal);
            for col in columns.iter_mut().skip(j).take(size) {
                let e: f64 = rng.sample(StandardNormal);
                col[r] = rho.sqrt() * latent + (1.0 - rho).sqrt() * e;
            }
            j += size;
        }
        for col in columns.iter_mut().skip(j) {
            col[r] = rng.sample(StandardNormal);
        }
        if labels[r].is_positive() {
            for &(f, shift) in &spec.planted {
                columns[f][r] += shift * gain(i);
            }
        }
    }
    FeatureTable::from_columns(
        patients.iter().map(|&i| patient_id(i, n_total)).collect(),
        vec!["synthetic".to_string(); patients.len()],
        labels,
        (0..p).map(|j| feature_name(prefix, j, p)).collect(),
        &columns,
    )
    .expect("generated shape is consistent")
}

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

/// Single-modality table: benign rows first, then malignant; features `f1..fp`.
pub fn generate(spec: &SynthSpec) -> Result<FeatureTable, String> {
    spec.validate()?;
    let patients: Vec<usize> = (0..spec.n_benign + spec.n_malignant).collect();
    Ok(draw(spec, &mut stream(spec.seed, 0), "f", &patients, |_| 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub a: FeatureTable,
    pub b: FeatureTable,
    /// Patients present in both tables, in id order.
    pub common_ids: Vec<String>,
}

/// Two modalities over one patient population. Per class,
/// `round(common_fraction * n_c)` patients appear in both tables and the
/// rest alternate between A-only and B-only. Malignant patients fall into
/// two subgroups by parity; with `complementarity > 0` modality A's shift is
/// attenuated on the odd subgroup and B's on the even one.
pub fn generate_pair(spec: &SynthSpec) -> Result<SynthPair, String> {
    spec.validate()?;
    let mut in_a = Vec::new();
    let mut in_b = Vec::new();
    let mut common_ids = Vec::new();
    let n_total = spec.n_benign + spec.n_malignant;
    for (start, n_c) in [(0, spec.n_benign), (spec.n_benign, spec.n_malignant)] {
        let shared = (spec.common_fraction * n_c as f64).round() as usize;
        for k in 0..n_c {
            let i = start + k;
            if k < shared {
                in_a.push(i);
                in_b.push(i);
                common_ids.push(patient_id(i, n_total));
            } else if (k - shared).is_multiple_of(2) {
                in_a.push(i);
            } else {
                in_b.push(i);
            }
        }
    }
    let c = spec.complementarity;
    let nb = spec.n_benign;
    let a = draw(spec, &mut stream(spec.seed, 1), "a", &in_a, |i| if (i - nb).is_multiple_of(2) { 1.0 } else { 1.0 - c });
    let b = draw(spec, &mut stream(spec.seed, 2), "b", &in_b, |i| if (i - nb).is_multiple_of(2) { 1.0 - c } else { 1.0 });
    Ok(SynthPair { a, b, common_ids })
}

/// Stratified choice of `per_class` test ids of each class among `ids`.
pub fn choose_test_ids(table: &FeatureTable, ids: &[String], per_class: usize, seed: u64) -> Vec<String> {
    let mut rng = stream(seed, 3);
    let mut out = Vec::new();
    for label in [ClassLabel::Benign, ClassLabel::Malignant] {
        let pool: Vec<&String> = table
            .sample_ids()
            .iter()
            .zip(table.labels())
            .filter(|(id, l)| **l == label && ids.contains(id))
            .map(|(id, _)| id)
            .collect();
        let k = per_class.min(pool.len());
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), k).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|j| pool[j].clone()));
    }
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let s = SynthSpec::new(10, 10, 5, 7).with_planted(vec![(0, 2.0)]);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let other = SynthSpec { seed: 8, ..s.clone() };
        assert_ne!(generate(&s).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn invalid_planted_index() {
        let s = SynthSpec::new(10, 10, 5, 7).with_planted(vec![(5, 2.0)]);
        assert!(generate(&s).is_err());
    }

    #[test]
    fn pair_layout() {
        let s = SynthSpec { common_fraction: 0.5, ..SynthSpec::new(10, 6, 3, 1) };
        let p = generate_pair(&s).unwrap();
        assert_eq!(p.common_ids.len(), 5 + 3);
        assert_eq!(p.a.n_samples() + p.b.n_samples(), 16 + 8);
        for id in &p.common_ids {
            assert!(p.a.sample_ids().contains(id) && p.b.sample_ids().contains(id));
        }
        assert_eq!(p.a.feature_names()[0], "a1");
    }

    #[test]
    fn block_correlation_is_visible() {
        let s = SynthSpec { correlation_blocks: vec![(2, 0.9)], ..SynthSpec::new(500, 500, 3, 2) };
        let t = generate(&s).unwrap();
        let x = t.dense_column(0).unwrap();
        let y = t.dense_column(1).unwrap();
        let z = t.dense_column(2).unwrap();
        assert!(crate::rank::pearson(&x, &y).unwrap() > 0.85);
        assert!(crate::rank::pearson(&x, &z).unwrap().abs() < 0.1);
    }
}
