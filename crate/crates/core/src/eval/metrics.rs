//! Agreement statistics between measured and predicted values.

use crate::error::MetricError;

fn check_pair(op: &'static str, measured: &[f64], predicted: &[f64], min: usize) -> Result<(), MetricError> {
    if measured.len() != predicted.len() {
        return Err(MetricError::LengthMismatch { op, measured: measured.len(), predicted: predicted.len() });
    }
    if measured.len() < min {
        return Err(MetricError::TooFew { op, min, got: measured.len() });
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2(measured: &[f64], predicted: &[f64]) -> Result<f64, MetricError> {
    check_pair("r2", measured, predicted, 2)?;
    let m = mean(measured);
    let ss_tot: f64 = measured.iter().map(|y| (y - m) * (y - m)).sum();
    if ss_tot == 0.0 {
        return Err(MetricError::ZeroVariance("r2"));
    }
    let ss_res: f64 = measured.iter().zip(predicted).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Sample Pearson correlation.
pub fn pearson_r(measured: &[f64], predicted: &[f64]) -> Result<f64, MetricError> {
    check_pair("pearson_r", measured, predicted, 2)?;
    let mx = mean(measured);
    let my = mean(predicted);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in measured.iter().zip(predicted) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ZeroVariance("pearson_r"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn mae(measured: &[f64], predicted: &[f64]) -> Result<f64, MetricError> {
    check_pair("mae", measured, predicted, 1)?;
    Ok(measured.iter().zip(predicted).map(|(y, p)| (y - p).abs()).sum::<f64>() / measured.len() as f64)
}

pub fn mse(measured: &[f64], predicted: &[f64]) -> Result<f64, MetricError> {
    check_pair("mse", measured, predicted, 1)?;
    Ok(measured.iter().zip(predicted).map(|(y, p)| (y - p) * (y - p)).sum::<f64>() / measured.len() as f64)
}

/// MAE of the constant predictor equal to the mean of `measured`.
pub fn baseline_mae(measured: &[f64]) -> Result<f64, MetricError> {
    if measured.is_empty() {
        return Err(MetricError::TooFew { op: "baseline_mae", min: 1, got: 0 });
    }
    let m = mean(measured);
    Ok(measured.iter().map(|y| (y - m).abs()).sum::<f64>() / measured.len() as f64)
}

/// Row-major flattening of a per-exam matrix, for pooled statistics.
pub fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flat_map(|r| r.iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_cases() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        assert_eq!(r2(&y, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!((r2(&y, &[1.0, 2.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(r2(&[1.0, 1.0], &[0.0, 2.0]), Err(MetricError::ZeroVariance(_))));
        assert!(matches!(r2(&[1.0], &[1.0]), Err(MetricError::TooFew { .. })));
    }

    #[test]
    fn pearson_cases() {
        let y = [1.0, 2.0, 4.0, 7.0];
        let affine: Vec<f64> = y.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson_r(&y, &affine).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((pearson_r(&y, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson_r(&[1.0, 2.0, 4.0], &[2.0, 1.0, 5.0]).unwrap() - 0.8386).abs() < 1e-4);
        assert!(pearson_r(&y, &[1.0; 4]).is_err());
    }

    #[test]
    fn mae_cases() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(mae(&[2.0, 0.0], &[3.0, 1.0]).unwrap(), 1.0);
        assert!(mae(&[], &[]).is_err());
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(MetricError::LengthMismatch { .. })));
    }

    #[test]
    fn baseline_cases() {
        assert_eq!(baseline_mae(&[0.0, 10.0]).unwrap(), 5.0);
        assert_eq!(baseline_mae(&[3.0, 3.0, 3.0]).unwrap(), 0.0);
        assert!(baseline_mae(&[]).is_err());
    }
}
