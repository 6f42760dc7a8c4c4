//! Workload analysis: empirical CCDFs, continuous power-law fitting by
//! maximum likelihood, seeded sampling, and cumulative cost-share curves.
//!
//! The fit uses a fixed, caller-supplied `xmin` (no automatic tail
//! selection): `alpha = 1 + n_tail / sum(ln(x_i / xmin))` over the samples
//! at or above `xmin`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("empty input")]
    EmptyInput,
    #[error("values must be positive (found {0})")]
    NonPositiveValue(f64),
    #[error("insufficient tail: need at least 2 samples strictly above xmin, found {0}")]
    InsufficientTail(usize),
    #[error("degenerate tail: all tail samples equal xmin, alpha diverges")]
    DegenerateTail,
    #[error("invalid alpha {0}: must be > 1")]
    InvalidAlpha(f64),
    #[error("costs are required for a cost-share curve")]
    MissingCosts,
    #[error("costs length {costs} does not match values length {values}")]
    LengthMismatch { values: usize, costs: usize },
}

/// A batch of positive observations (query seconds, bytes scanned, ...)
/// with optional aligned costs.
#[derive(Debug, Clone)]
pub struct WorkloadSample {
    pub values: Vec<f64>,
    pub costs: Option<Vec<f64>>,
}

impl WorkloadSample {
    pub fn new(values: Vec<f64>, costs: Option<Vec<f64>>) -> Result<WorkloadSample, WorkloadError> {
        if values.is_empty() {
            return Err(WorkloadError::EmptyInput);
        }
        for &v in &values {
            if !(v > 0.0) {
                return Err(WorkloadError::NonPositiveValue(v));
            }
        }
        if let Some(costs) = &costs {
            if costs.len() != values.len() {
                return Err(WorkloadError::LengthMismatch {
                    values: values.len(),
                    costs: costs.len(),
                });
            }
        }
        Ok(WorkloadSample { values, costs })
    }
}

/// Maximum-likelihood fit of the continuous power-law tail.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub xmin: f64,
    pub n_tail: usize,
}

/// Empirical CCDF: one point per distinct value, `P(X >= x)`. The first
/// point (the minimum) is exactly 1.0 and the sequence never increases.
pub fn empirical_ccdf(values: &[f64]) -> Result<Vec<(f64, f64)>, WorkloadError> {
    if values.is_empty() {
        return Err(WorkloadError::EmptyInput);
    }
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        if out.last().map(|(x, _)| *x) == Some(v) {
            continue;
        }
        // all samples at index >= i are >= v
        out.push((v, (sorted.len() - i) as f64 / n));
    }
    Ok(out)
}

/// Continuous MLE over the tail at or above `xmin`.
pub fn fit_power_law(sample: &WorkloadSample, xmin: f64) -> Result<PowerLawFit, WorkloadError> {
    if !(xmin > 0.0) {
        return Err(WorkloadError::NonPositiveValue(xmin));
    }
    let strictly_above = sample.values.iter().filter(|&&v| v > xmin).count();
    if strictly_above < 2 {
        return Err(WorkloadError::InsufficientTail(strictly_above));
    }
    let tail: Vec<f64> = sample.values.iter().copied().filter(|&v| v >= xmin).collect();
    let log_sum: f64 = tail.iter().map(|&v| (v / xmin).ln()).sum();
    if log_sum <= 0.0 {
        return Err(WorkloadError::DegenerateTail);
    }
    Ok(PowerLawFit {
        alpha: 1.0 + tail.len() as f64 / log_sum,
        xmin,
        n_tail: tail.len(),
    })
}

/// Inverse-CDF transform for the continuous power law: `u = 0` maps to
/// exactly `xmin`, and larger `u` climbs the tail.
pub fn power_law_inverse_cdf(u: f64, alpha: f64, xmin: f64) -> f64 {
    xmin * (1.0 - u).powf(-1.0 / (alpha - 1.0))
}

/// Draw `n` samples from the power law with a seeded generator; the same
/// seed always yields the same sequence.
pub fn sample_power_law(
    alpha: f64,
    xmin: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, WorkloadError> {
    if !(alpha > 1.0) {
        return Err(WorkloadError::InvalidAlpha(alpha));
    }
    if !(xmin > 0.0) {
        return Err(WorkloadError::NonPositiveValue(xmin));
    }
    if n == 0 {
        return Err(WorkloadError::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| power_law_inverse_cdf(rng.random::<f64>(), alpha, xmin))
        .collect())
}

/// Cumulative cost share by value percentile: point k is
/// `(100 k / n, sum of costs of the k smallest-value queries / total)`.
/// Ends at exactly (100, 1.0).
pub fn cost_share_curve(sample: &WorkloadSample) -> Result<Vec<(f64, f64)>, WorkloadError> {
    let costs = sample.costs.as_ref().ok_or(WorkloadError::MissingCosts)?;
    let n = sample.values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sample.values[a].total_cmp(&sample.values[b]));
    let total: f64 = costs.iter().sum();
    let mut running = 0.0;
    let mut out = Vec::with_capacity(n);
    for (k, &i) in order.iter().enumerate() {
        running += costs[i];
        let share = if k + 1 == n { 1.0 } else { running / total };
        out.push((100.0 * (k + 1) as f64 / n as f64, share));
    }
    Ok(out)
}

/// Cost share at percentile `p` (the `ceil(p*n/100)` smallest queries).
pub fn cost_share_at(curve: &[(f64, f64)], p: f64) -> f64 {
    let n = curve.len();
    let k = ((p * n as f64) / 100.0).ceil() as usize;
    let k = k.clamp(1, n);
    curve[k - 1].1
}

/// Least-squares slope of the CCDF on log-log axes; a power law with
/// exponent alpha shows up as slope `1 - alpha`.
pub fn loglog_slope(ccdf: &[(f64, f64)]) -> Result<f64, WorkloadError> {
    if ccdf.len() < 2 {
        return Err(WorkloadError::EmptyInput);
    }
    let pts: Vec<(f64, f64)> = ccdf
        .iter()
        .filter(|(x, p)| *x > 0.0 && *p > 0.0)
        .map(|(x, p)| (x.ln(), p.ln()))
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|(x, _)| x).sum();
    let sy: f64 = pts.iter().map(|(_, y)| y).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom == 0.0 {
        return Err(WorkloadError::DegenerateTail);
    }
    Ok((n * sxy - sx * sy) / denom)
}
