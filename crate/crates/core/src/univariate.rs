//! Univariate screening: Shapiro-Wilk normality, Mann-Whitney U,
//! rank-biserial effect size and Benjamini-Hochberg adjustment.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{ClassLabel, FeatureTable};
use crate::normal;
use crate::rank::midranks_with_ties;
use crate::report::{self, fmt_opt};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {required} observations, got {found}")]
    TooFewObservations { required: usize, found: usize },
    #[error("sample size {0} exceeds the supported maximum of 5000")]
    TooManyObservations(usize),
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("empty group")]
    EmptyGroup,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("p-value {0} outside (0, 1]")]
    InvalidPValue(f64),
    #[error("table must contain both classes")]
    SingleClass,
}

fn check_finite(x: &[f64]) -> Result<(), StatsError> {
    if x.iter().all(|v| v.is_finite()) { Ok(()) } else { Err(StatsError::NonFinite) }
}

// ---------------------------------------------------------------------------
// Shapiro-Wilk (Royston's coefficient and p-value approximations)
// ---------------------------------------------------------------------------

const SW_C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
const SW_C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const SW_C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
const SW_C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const SW_C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const SW_C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const SW_G: [f64; 2] = [-2.273, 0.459];

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Half-vector of Shapiro-Wilk weights `a_1 >= a_2 >= ... >= 0` for sample size n.
fn sw_coefficients(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let an25 = n as f64 + 0.25;
    let m: Vec<f64> = (1..=half)
        .map(|i| normal::quantile((i as f64 - 0.375) / an25))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / (n as f64).sqrt();
    let a1 = poly(&SW_C1, rsn) - m[0] / ssumm2;

    let mut a = vec![0.0; half];
    a[0] = a1;
    let (first, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&SW_C2, rsn);
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
            / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
            .sqrt();
        a[1] = a2;
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
        (1, fac)
    };
    for i in first..half {
        a[i] = -m[i] / fac;
    }
    a
}

/// Returns `(W, p)`. Supports 3 <= n <= 5000.
pub fn shapiro_wilk(sample: &[f64]) -> Result<(f64, f64), StatsError> {
    let n = sample.len();
    if n < 3 {
        return Err(StatsError::TooFewObservations { required: 3, found: n });
    }
    if n > 5000 {
        return Err(StatsError::TooManyObservations(n));
    }
    check_finite(sample)?;
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    for v in &mut x {
        *v /= range;
    }

    let half = sw_coefficients(n);
    // antisymmetric full weight vector; sums to zero and has unit norm
    let mut a = vec![0.0; n];
    for (i, &w) in half.iter().enumerate() {
        a[i] = -w;
        a[n - 1 - i] = w;
    }
    let xbar = x.iter().sum::<f64>() / n as f64;
    let abar = a.iter().sum::<f64>() / n as f64;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (&ai, &xi) in a.iter().zip(&x) {
        let (da, dx) = (ai - abar, xi - xbar);
        ssa += da * da;
        ssx += dx * dx;
        sax += da * dx;
    }
    let ssassx = (ssa * ssx).sqrt();
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = (1.0 - w1).clamp(0.0, 1.0);

    if n == 3 {
        // exact for n = 3
        const PI6: f64 = 6.0 / std::f64::consts::PI;
        const STQR: f64 = std::f64::consts::FRAC_PI_3;
        let p = (PI6 * (w.sqrt().asin() - STQR)).clamp(0.0, 1.0);
        return Ok((w, p));
    }

    let an = n as f64;
    let lw = (1.0 - w).ln();
    let (y, mean, sd) = if n <= 11 {
        let gamma = poly(&SW_G, an);
        if lw >= gamma {
            return Ok((w, 1e-99));
        }
        (-(gamma - lw).ln(), poly(&SW_C3, an), poly(&SW_C4, an).exp())
    } else {
        let lx = an.ln();
        (lw, poly(&SW_C5, lx), poly(&SW_C6, lx).exp())
    };
    Ok((w, normal::sf((y - mean) / sd)))
}

// ---------------------------------------------------------------------------
// Mann-Whitney U
// ---------------------------------------------------------------------------

/// Combined sizes up to this value use the exact null distribution when tie-free.
pub const EXACT_MAX_TOTAL: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValueMethod {
    Exact,
    /// Normal approximation with tie-corrected variance, continuity
    /// correction and a fourth-cumulant (Edgeworth) adjustment of z.
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first group: pairs with a > b, ties counted as one half.
    pub u: f64,
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Counts of each U value for group sizes (m, n) under the null, tie-free.
fn u_distribution(m: usize, n: usize) -> Vec<u64> {
    // f[j][u] for current m' (rolled) over n' = j
    let max_u = m * n;
    let mut prev: Vec<Vec<u64>> = (0..=n)
        .map(|_| {
            let mut v = vec![0u64; max_u + 1];
            v[0] = 1;
            v
        })
        .collect();
    for mm in 1..=m {
        let mut cur: Vec<Vec<u64>> = vec![vec![0u64; max_u + 1]; n + 1];
        cur[0][0] = 1;
        for nn in 1..=n {
            for u in 0..=mm * nn {
                // largest element belongs to the first group (adds nn) or to the second
                let from_a = if u >= nn { prev[nn][u - nn] } else { 0 };
                cur[nn][u] = from_a + cur[nn - 1][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

fn exact_two_sided(u: f64, m: usize, n: usize) -> f64 {
    let dist = u_distribution(m, n);
    let total: u64 = dist.iter().sum();
    let k = u.round() as usize;
    let le: u64 = dist[..=k].iter().sum();
    let ge: u64 = dist[k..].iter().sum();
    (2.0 * le.min(ge) as f64 / total as f64).min(1.0)
}

fn approximate_two_sided(u: f64, m: usize, n: usize, ties: &[usize]) -> f64 {
    let (mf, nf) = (m as f64, n as f64);
    let big_n = mf + nf;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    let var = if big_n > 1.0 {
        mf * nf / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)))
    } else {
        0.0
    };
    let d = (u - mf * nf / 2.0).abs();
    if var <= 0.0 || d <= 0.5 {
        return 1.0;
    }
    let z = (d - 0.5) / var.sqrt();
    let excess_kurtosis =
        -1.2 * (mf * mf + nf * nf + mf * nf + mf + nf) / (mf * nf * (big_n + 1.0));
    let z_adj = z - excess_kurtosis / 24.0 * (z * z * z - 3.0 * z);
    (2.0 * normal::sf(z_adj)).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Two-sided Mann-Whitney test of `a` against `b`. Midranks for ties;
/// exact p when the pooled sample has at most 12 values and no ties.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptyGroup);
    }
    check_finite(a)?;
    check_finite(b)?;
    let (m, n) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks_with_ties(&pooled);
    let rank_sum: f64 = ranks[..m].iter().sum();
    let u = rank_sum - (m * (m + 1)) as f64 / 2.0;
    let (p_value, method) = if m + n <= EXACT_MAX_TOTAL && ties.is_empty() {
        (exact_two_sided(u, m, n), PValueMethod::Exact)
    } else {
        (approximate_two_sided(u, m, n, &ties), PValueMethod::Approximate)
    };
    Ok(MannWhitney { u, p_value, method })
}

/// `(2 U - n_a n_b) / (n_a n_b)` with `a` the malignant group, so positive
/// values mean higher values in malignant samples. The numerator is exact,
/// which makes swapping the groups flip the sign exactly.
pub fn rank_biserial(malignant: &[f64], benign: &[f64]) -> Result<f64, StatsError> {
    let mw = mann_whitney(malignant, benign)?;
    let pairs = (malignant.len() * benign.len()) as f64;
    Ok((2.0 * mw.u - pairs) / pairs)
}

/// Benjamini-Hochberg step-up adjustment, returned in input order.
pub fn bh_fdr(p: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(&bad) = p.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
        return Err(StatsError::InvalidPValue(bad));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]).then(i.cmp(&j)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0_f64;
    for (pos, &i) in order.iter().enumerate().rev() {
        let rank = (pos + 1) as f64;
        running = running.min(m as f64 * p[i] / rank);
        adjusted[i] = running;
    }
    Ok(adjusted)
}

// ---------------------------------------------------------------------------
// Screen
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateResult {
    pub feature: String,
    pub normality_p_benign: Option<f64>,
    pub normality_p_malignant: Option<f64>,
    pub rg: Option<f64>,
    pub p_value: Option<f64>,
    pub fdr: Option<f64>,
    /// Set when the feature could not be tested; such rows are excluded
    /// from the FDR family.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenReport {
    pub alpha: f64,
    pub results: Vec<UnivariateResult>,
    pub significant: usize,
    /// Significant with rg > 0 (higher in malignant).
    pub up: usize,
    pub down: usize,
}

/// Runs the battery on every feature. Missing cells are skipped per feature.
pub fn univariate_screen(table: &FeatureTable, alpha: f64) -> Result<ScreenReport, StatsError> {
    if !table.has_both_classes() {
        return Err(StatsError::SingleClass);
    }
    let labels = table.labels();
    let mut results: Vec<UnivariateResult> = (0..table.n_features())
        .into_par_iter()
        .map(|j| {
            let mut mal = Vec::new();
            let mut ben = Vec::new();
            for (i, v) in table.column(j).into_iter().enumerate() {
                if let Some(v) = v {
                    match labels[i] {
                        ClassLabel::Malignant => mal.push(v),
                        ClassLabel::Benign => ben.push(v),
                    }
                }
            }
            let mut res = UnivariateResult {
                feature: table.feature_names()[j].clone(),
                normality_p_benign: shapiro_wilk(&ben).ok().map(|r| r.1),
                normality_p_malignant: shapiro_wilk(&mal).ok().map(|r| r.1),
                rg: None,
                p_value: None,
                fdr: None,
                error: None,
            };
            match mann_whitney(&mal, &ben) {
                Ok(mw) => {
                    res.p_value = Some(mw.p_value);
                    res.rg = Some(2.0 * mw.u / (mal.len() * ben.len()) as f64 - 1.0);
                }
                Err(e) => res.error = Some(e.to_string()),
            }
            res
        })
        .collect();

    let tested: Vec<usize> = (0..results.len()).filter(|&k| results[k].p_value.is_some()).collect();
    let ps: Vec<f64> = tested.iter().map(|&k| results[k].p_value.unwrap()).collect();
    let adjusted = bh_fdr(&ps)?;
    for (&k, q) in tested.iter().zip(adjusted) {
        results[k].fdr = Some(q);
    }
    let (mut significant, mut up, mut down) = (0, 0, 0);
    for r in &results {
        if let (Some(q), Some(rg)) = (r.fdr, r.rg) {
            if q < alpha {
                significant += 1;
                if rg > 0.0 {
                    up += 1;
                } else if rg < 0.0 {
                    down += 1;
                }
            }
        }
    }
    Ok(ScreenReport { alpha, results, significant, up, down })
}

pub const SCREEN_HEADER: [&str; 6] =
    ["Feature", "Normality benign", "Normality malignant", "Rg effect size", "P-value", "FDR"];

/// Screen report CSV, rows ordered by ascending p-value (untestable rows last).
/// The Rg column is oriented so that positive means higher in malignant.
pub fn write_screen_csv<W: Write>(report: &ScreenReport, writer: W) -> std::io::Result<()> {
    let mut w = report::csv_writer(writer, "univariate_screen")?;
    w.write_record(SCREEN_HEADER)?;
    let mut rows: Vec<&UnivariateResult> = report.results.iter().collect();
    rows.sort_by(|a, b| match (a.p_value, b.p_value) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    for r in rows {
        w.write_record([
            r.feature.clone(),
            fmt_opt(r.normality_p_benign),
            fmt_opt(r.normality_p_malignant),
            fmt_opt(r.rg),
            fmt_opt(r.p_value),
            fmt_opt(r.fdr),
        ])?;
    }
    w.flush()
}
