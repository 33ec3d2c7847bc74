//! Standard normal helpers.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn standard() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

pub fn cdf(z: f64) -> f64 {
    standard().cdf(z)
}

/// Upper tail `1 - cdf(z)` without cancellation.
pub fn sf(z: f64) -> f64 {
    standard().sf(z)
}

pub fn pdf(z: f64) -> f64 {
    standard().pdf(z)
}

pub fn quantile(p: f64) -> f64 {
    standard().inverse_cdf(p)
}
