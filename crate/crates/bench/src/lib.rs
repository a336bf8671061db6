//! Shared fixtures for the kernel benchmarks.

use octvf_core::nn::model::random_tensor;
use octvf_core::nn::Tensor;
use octvf_core::rng::rng_for;

pub fn tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    random_tensor(shape, 1.0, &mut rng_for(&[0xBE, seed]))
}

/// Measured/predicted rows shaped like a test partition of 52-point fields.
pub fn fields(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let t = random_tensor::<f64, _>(&[2, n, 52], 1.0, &mut rng_for(&[0xBF, seed]));
    let d = t.data();
    let row = |k: usize, i: usize| d[(k * n + i) * 52..(k * n + i + 1) * 52].iter().map(|v| 25.0 + 8.0 * v).collect();
    ((0..n).map(|i| row(0, i)).collect(), (0..n).map(|i| row(1, i)).collect())
}
