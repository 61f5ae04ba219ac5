//! Two-stage optimisation of the codec.

mod forward;
mod loops;

pub use forward::{aux_pass, aux_pass_with_gain, primary_pass, primary_pass_with_gains, streamless_pass, AuxPass, PrimaryPass};
pub use loops::{
    anchor_rates, train_stage1, train_stage2, train_warmup, write_csv, Stage1Config, Stage1LogRow, Stage2Config, Stage2LogRow,
    DIVERGENCE_FACTOR, DIVERGENCE_PATIENCE,
};

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Binder, Var};
use crate::codec::{CodecModel, ParamGroup};
use crate::cognition::CognitionProxy;
use crate::error::{RdcError, Result};
use crate::gain::QuantMode;
use crate::tensor::Tensor;

/// Distortions are measured on the 8-bit scale: `D = 255² · MSE`.
pub const DISTORTION_SCALE: f64 = 255.0 * 255.0;

/// `(1/M) Σ 𝕀(x̂ᵢ < 0 ∨ x̂ᵢ > 1) (x̂ᵢ - xᵢ)²` over all `M` elements.
pub fn local_mse(x: &Tensor, x_hat: &Tensor) -> f64 {
    assert_eq!(x.shape(), x_hat.shape());
    let sum: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .filter(|(_, &h)| !(0.0..=1.0).contains(&h))
        .map(|(a, h)| (h - a) * (h - a))
        .sum();
    sum / x.len() as f64
}

/// Graph form of [`local_mse`]; the indicator is piecewise constant.
pub fn local_mse_var<'g>(x: &Tensor, x_hat: Var<'g>) -> Var<'g> {
    let mask = x_hat.value().map(|h| if (0.0..=1.0).contains(&h) { 0.0 } else { 1.0 });
    let target = x_hat.graph().constant(x.clone());
    x_hat.sub(target).square().mul_const(&mask).mean()
}

/// Per-term values of the first-stage loss; rates in bits per pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Stage1Terms {
    pub rate_y: f64,
    pub rate_z: f64,
    pub contrastive: f64,
    pub local: f64,
    pub total: f64,
}

/// Per-term values of the rate-distortion warm-up loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RdTerms {
    pub rate_y: f64,
    pub rate_z: f64,
    pub mse: f64,
    pub total: f64,
}

/// Per-term values of the second-stage loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Stage2Terms {
    pub rate_s: f64,
    pub mse: f64,
    pub total: f64,
}

fn finite(term: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(RdcError::NonFinite { term })
    }
}

/// Inputs of one first-stage loss evaluation besides the image batch.
pub struct Stage1Inputs<'a> {
    pub proxy: &'a CognitionProxy,
    /// Momentum-encoder keys of augmented originals, `[B, d]`.
    pub keys: &'a Tensor,
    /// Queued negatives, `[K, d]`.
    pub negatives: &'a Tensor,
    pub anchor: usize,
    pub lambda_n: f64,
    pub lambda_local: f64,
    pub distortion_scale: f64,
}

/// `R(ŷ) + R(ẑ) + λ_n·InfoNCE(E(x̂₁)) + λ_local·D_local`.
pub fn stage1_loss<'g>(
    model: &CodecModel,
    b: &Binder<'g, '_>,
    x: &Tensor,
    inputs: &Stage1Inputs<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<(Var<'g>, Stage1Terms)> {
    let (bsz, _, h, w) = x.dims4();
    let pixels = (bsz * h * w) as f64;
    let g = b.graph();
    let pass = primary_pass(model, b, g.constant(x.clone()), inputs.anchor, QuantMode::Noise, Some(rng))?;
    let rate_y = pass.bits_y.scale(1.0 / pixels);
    let rate_z = pass.bits_z.scale(1.0 / pixels);
    let q = inputs.proxy.query(g, pass.x_hat);
    let contrastive = q.info_nce(inputs.keys, inputs.negatives, inputs.proxy.config.tau);
    let local = local_mse_var(x, pass.x_hat);
    let terms = Stage1Terms {
        rate_y: finite("rate_y", rate_y.value().item())?,
        rate_z: finite("rate_z", rate_z.value().item())?,
        contrastive: finite("contrastive", contrastive.value().item())?,
        local: finite("local_mse", local.value().item())?,
        total: 0.0,
    };
    let total = rate_y
        .add(rate_z)
        .add(contrastive.scale(inputs.lambda_n))
        .add(local.scale(inputs.lambda_local * inputs.distortion_scale));
    let terms = Stage1Terms {
        total: finite("total", total.value().item())?,
        ..terms
    };
    Ok((total, terms))
}

/// `R(ŷ) + R(ẑ) + λ·D(x, x̂₁)`.
pub fn rd_loss<'g>(
    model: &CodecModel,
    b: &Binder<'g, '_>,
    x: &Tensor,
    anchor: usize,
    lambda: f64,
    distortion_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Var<'g>, RdTerms)> {
    let (bsz, _, h, w) = x.dims4();
    let pixels = (bsz * h * w) as f64;
    let g = b.graph();
    let pass = primary_pass(model, b, g.constant(x.clone()), anchor, QuantMode::Noise, Some(rng))?;
    let rate_y = pass.bits_y.scale(1.0 / pixels);
    let rate_z = pass.bits_z.scale(1.0 / pixels);
    let mse = pass.x_hat.sub(g.constant(x.clone())).square().mean();
    let total = rate_y.add(rate_z).add(mse.scale(lambda * distortion_scale));
    let terms = RdTerms {
        rate_y: finite("rate_y", rate_y.value().item())?,
        rate_z: finite("rate_z", rate_z.value().item())?,
        mse: finite("mse", mse.value().item())?,
        total: finite("total", total.value().item())?,
    };
    Ok((total, terms))
}

/// `R(ŝ) + λ_m·D(x, x̂₂)` with the primary branch frozen and rounded.
/// Without a scalable stream the residual comes from `ŷ` and `R(ŝ) = 0`.
#[allow(clippy::too_many_arguments)]
pub fn stage2_loss<'g>(
    model: &CodecModel,
    b: &Binder<'g, '_>,
    x: &Tensor,
    primary_anchor: usize,
    aux_anchor: usize,
    lambda_m: f64,
    distortion_scale: f64,
    scalable_stream: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Var<'g>, Stage2Terms)> {
    let (bsz, _, h, w) = x.dims4();
    let pixels = (bsz * h * w) as f64;
    let g = b.graph();
    let primary = primary_pass(model, b, g.constant(x.clone()), primary_anchor, QuantMode::Round, None)?;
    let aux = if scalable_stream {
        aux_pass(model, b, &primary, aux_anchor, QuantMode::Noise, Some(rng))?
    } else {
        streamless_pass(model, b, &primary)
    };
    let rate_s = aux.bits_s.scale(1.0 / pixels);
    let mse = aux.x_hat2.sub(g.constant(x.clone())).square().mean();
    let total = rate_s.add(mse.scale(lambda_m * distortion_scale));
    let terms = Stage2Terms {
        rate_s: finite("rate_s", rate_s.value().item())?,
        mse: finite("mse", mse.value().item())?,
        total: finite("total", total.value().item())?,
    };
    Ok((total, terms))
}

/// Fails if any parameter outside `allowed` received a gradient.
pub fn check_frozen(grads: &BTreeMap<String, Tensor>, allowed: impl Fn(ParamGroup) -> bool) -> Result<()> {
    for name in grads.keys() {
        match ParamGroup::of(name) {
            Some(group) if allowed(group) => {}
            _ => return Err(RdcError::Invariant(format!("gradient reached frozen parameter {name}"))),
        }
    }
    Ok(())
}

/// Parameters updated by the second stage.
pub fn stage2_group(group: ParamGroup) -> bool {
    matches!(group, ParamGroup::Auxiliary | ParamGroup::AuxPrior | ParamGroup::AuxGain)
}
