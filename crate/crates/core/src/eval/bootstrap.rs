//! Percentile bootstrap over exams.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::flatten;
use crate::error::MetricError;
use crate::rng::{rng_for, TAG_BOOTSTRAP};

/// Redraws allowed per iteration when the statistic is undefined on a
/// resample (e.g. every drawn exam has the same value).
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Statistic values on `iterations` resamples. Exams (rows) are drawn with
/// replacement and the statistic is evaluated on the pooled rows.
/// Iteration `i` uses its own stream, so the parallel result equals the
/// serial one.
pub fn bootstrap_distribution<F>(
    statistic: F,
    measured: &[Vec<f64>],
    predicted: &[Vec<f64>],
    iterations: usize,
    seed: u64,
) -> Result<Vec<f64>, MetricError>
where
    F: Fn(&[f64], &[f64]) -> Result<f64, MetricError> + Sync,
{
    if iterations == 0 {
        return Err(MetricError::BootstrapConfig);
    }
    if measured.len() != predicted.len() {
        return Err(MetricError::LengthMismatch { op: "bootstrap", measured: measured.len(), predicted: predicted.len() });
    }
    if measured.is_empty() {
        return Err(MetricError::TooFew { op: "bootstrap", min: 1, got: 0 });
    }
    let n = measured.len();
    (0..iterations)
        .into_par_iter()
        .map(|i| {
            for attempt in 0..=MAX_REDRAWS {
                let mut rng = rng_for(&[TAG_BOOTSTRAP, seed, i as u64, attempt as u64]);
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let m: Vec<f64> = flatten(&idx.iter().map(|&j| measured[j].clone()).collect::<Vec<_>>());
                let p: Vec<f64> = flatten(&idx.iter().map(|&j| predicted[j].clone()).collect::<Vec<_>>());
                match statistic(&m, &p) {
                    Ok(v) => return Ok(v),
                    Err(MetricError::ZeroVariance(_)) | Err(MetricError::TooFew { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(MetricError::DegenerateResample(MAX_REDRAWS))
        })
        .collect()
}

/// Percentile interval at `(1 - level) / 2` and `1 - (1 - level) / 2`.
pub fn percentile_interval(values: &[f64], level: f64) -> Result<Interval, MetricError> {
    if !(level > 0.0 && level < 1.0) || values.is_empty() {
        return Err(MetricError::BootstrapConfig);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    Ok(Interval { low: quantile_sorted(&sorted, a), high: quantile_sorted(&sorted, 1.0 - a) })
}

pub fn bootstrap_ci<F>(
    statistic: F,
    measured: &[Vec<f64>],
    predicted: &[Vec<f64>],
    iterations: usize,
    level: f64,
    seed: u64,
) -> Result<Interval, MetricError>
where
    F: Fn(&[f64], &[f64]) -> Result<f64, MetricError> + Sync,
{
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricError::BootstrapConfig);
    }
    let values = bootstrap_distribution(statistic, measured, predicted, iterations, seed)?;
    percentile_interval(&values, level)
}
