//! Rate, distortion and cognition measurements.

mod bd;
pub mod diagnostics;
pub mod plot;
mod sweep;

pub use bd::{bd_metric, bd_quality, bd_rate, BdFit, BdMetric, Curve};
pub use sweep::{finetune_probe, sweep_surface, Corner, RdcPoint, SweepInputs, TradeoffSurface, SURFACE_HEADER};

use crate::tensor::Tensor;

/// Bits per pixel, `bits / (h · w)`.
pub fn bpp(total_bits: u64, height: usize, width: usize) -> f64 {
    total_bits as f64 / (height * width) as f64
}

/// `10·log₁₀(1 / MSE)` with unit peak; `+∞` for identical inputs.
pub fn psnr(x: &Tensor, x_hat: &Tensor) -> f64 {
    assert_eq!(x.shape(), x_hat.shape(), "psnr shape mismatch");
    let mse = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}
