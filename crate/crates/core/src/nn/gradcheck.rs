//! Finite-difference verification of the analytic gradients.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{random_tensor, ModelSpec, Network, SeparableBlockSpec};
use super::ops::{self, Mode};
use super::tensor::Tensor;
use crate::error::TensorError;

/// Denominator floor of the relative error, so near-zero gradient entries
/// are compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Central-difference step for a weight of magnitude `w`.
pub fn fd_step(w: f64) -> f64 {
    1e-6 * w.abs().max(1.0)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
    pub max_abs_analytic: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub loss: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err < self.tolerance)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>7} {:>12} {:>12}", "parameter", "entries", "max_rel_err", "max|grad|")?;
        for p in &self.params {
            writeln!(f, "{:<28} {:>7} {:>12.3e} {:>12.3e}", p.name, p.entries, p.max_rel_err, p.max_abs_analytic)?;
        }
        write!(
            f,
            "loss {:.6e}; max relative error {:.3e} (tolerance {:.0e}): {}",
            self.loss,
            self.max_rel_err(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Largest relative error between `analytic` and central differences of
/// `f` around `x`.
pub fn check_tensor<F>(mut f: F, x: &[f64], analytic: &[f64]) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut xs = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        xs[i] = x[i] + h;
        let up = f(&xs);
        xs[i] = x[i] - h;
        let down = f(&xs);
        xs[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * h)));
    }
    worst
}

fn batch_loss(net: &Network<f64>, input: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64, TensorError> {
    let pred = net.forward(input, Mode::Train)?;
    Ok(ops::mse_loss(&pred, target)?.0)
}

/// Compares every parameter's analytic MSE gradient with central
/// differences. Batch-norm runs in train mode so its batch-statistics path
/// is exercised.
pub fn gradient_check(
    net: &Network<f64>,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    tolerance: f64,
) -> Result<GradCheckReport, TensorError> {
    let trace = net.forward_trace(input, Mode::Train)?;
    let (loss, g_out) = ops::mse_loss(trace.output(), target)?;
    let grads = net.backward(&trace, &g_out)?;
    let mut probe = net.clone();
    let mut params = Vec::new();
    for (k, name) in net.param_names().iter().enumerate() {
        let x = net.params()[k].data().to_vec();
        let analytic = grads[k].data();
        let mut failure = None;
        let max_rel_err = check_tensor(
            |w| {
                probe.params_mut()[k].data_mut().copy_from_slice(w);
                batch_loss(&probe, input, target).unwrap_or_else(|e| {
                    failure = Some(e);
                    f64::NAN
                })
            },
            &x,
            analytic,
        );
        probe.params_mut()[k].data_mut().copy_from_slice(&x);
        if let Some(e) = failure {
            return Err(e);
        }
        params.push(ParamCheck {
            name: name.clone(),
            entries: x.len(),
            max_rel_err,
            max_abs_analytic: analytic.iter().fold(0.0, |m, v| m.max(v.abs())),
        });
    }
    Ok(GradCheckReport { params, tolerance, loss })
}

/// The two-block model used by the `gradcheck` command: 8x8 input, stem of
/// 4 channels, blocks 4 -> 8 with pooling and projections.
pub fn tiny_spec(out_channels: usize) -> ModelSpec {
    ModelSpec {
        in_channels: 1,
        input_width: 8,
        input_height: 8,
        stem_channels: 4,
        blocks: vec![
            SeparableBlockSpec { channels: 4, pool: true, residual: true },
            SeparableBlockSpec { channels: 8, pool: true, residual: true },
        ],
        out_channels,
    }
}

/// Gradient check of the tiny model on a random batch of two.
pub fn run_default_check(seed: u64) -> Result<GradCheckReport, TensorError> {
    let spec = tiny_spec(52);
    let net = Network::<f64>::init(&spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = random_tensor(&[2, 1, 8, 8], 1.0, &mut rng);
    let target = random_tensor(&[2, 52], 1.0, &mut rng);
    gradient_check(&net, &input, &target, DEFAULT_TOLERANCE)
}
