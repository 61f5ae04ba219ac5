use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Binder, Var};
use crate::codec::CodecModel;
use crate::error::{RdcError, Result};
use crate::gain::{GainKind, QuantMode};
use crate::tensor::Tensor;

/// Graph values of one pass through the primary branch.
pub struct PrimaryPass<'g> {
    pub y: Var<'g>,
    /// `Q(y·G_y)/G_y`.
    pub y_hat: Var<'g>,
    pub z_hat: Var<'g>,
    pub mu: Var<'g>,
    pub sigma: Var<'g>,
    /// Total bits of the main latent.
    pub bits_y: Var<'g>,
    /// Total bits of the hyper-latent.
    pub bits_z: Var<'g>,
    /// Unclipped `x̂₁`.
    pub x_hat: Var<'g>,
    pub priors: [Var<'g>; 3],
}

/// Graph values of one pass through the auxiliary branch.
pub struct AuxPass<'g> {
    pub s_hat: Var<'g>,
    pub bits_s: Var<'g>,
    pub err_hat: Var<'g>,
    pub y2_hat: Var<'g>,
    pub residual: Var<'g>,
    /// Unclipped `x̂₂ = x̂₁ + r`.
    pub x_hat2: Var<'g>,
}

/// Adds uniform noise (tracked) or rounds (untracked) a gain-scaled value.
fn quantize_var<'g>(scaled: Var<'g>, mode: QuantMode, rng: Option<&mut ChaCha8Rng>) -> Result<Var<'g>> {
    let g = scaled.graph();
    let value = scaled.value();
    match mode {
        QuantMode::Round => Ok(g.constant(value.map(f64::round))),
        QuantMode::Noise => {
            let rng = rng.ok_or_else(|| RdcError::Config("noise quantisation needs a generator".into()))?;
            let noise: Vec<f64> = (0..value.len()).map(|_| rng.gen_range(-0.5..0.5)).collect();
            Ok(scaled.add(g.constant(Tensor::new(value.shape(), noise))))
        }
    }
}

fn anchor_gain<'g>(b: &Binder<'g, '_>, kind: GainKind, anchor: usize) -> Var<'g> {
    b.get(&kind.param_name(anchor)).exp()
}

/// Primary pass at one gain anchor.
pub fn primary_pass<'g>(
    model: &CodecModel,
    b: &Binder<'g, '_>,
    x: Var<'g>,
    anchor: usize,
    mode: QuantMode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<PrimaryPass<'g>> {
    let gy = anchor_gain(b, GainKind::Latent, anchor);
    let gz = anchor_gain(b, GainKind::Hyper, anchor);
    primary_pass_with_gains(model, b, x, gy, gz, mode, rng)
}

/// Primary pass with explicit latent and hyper gains.
pub fn primary_pass_with_gains<'g>(
    model: &CodecModel,
    b: &Binder<'g, '_>,
    x: Var<'g>,
    gy: Var<'g>,
    gz: Var<'g>,
    mode: QuantMode,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<PrimaryPass<'g>> {
    let t = model.transforms();
    let y = t.analysis(b, x);
    let ys = y.mul_channel(gy);
    let z = t.hyper_analysis(b, ys);
    let zq = quantize_var(z.mul_channel(gz), mode, rng.as_deref_mut())?;
    let bits_z = model.hyper_prior().bits(b, zq).sum();
    let z_hat = zq.div_channel(gz);
    let (mu, sigma) = t.hyper_synthesis(b, z_hat);
    let yq = quantize_var(ys, mode, rng)?;
    let bits_y = yq.gaussian_bits(mu.mul_channel(gy), sigma.mul_channel(gy)).sum();
    let y_hat = yq.div_channel(gy);
    let (x_hat, priors) = t.synthesis(b, y_hat);
    Ok(PrimaryPass {
        y,
        y_hat,
        z_hat,
        mu,
        sigma,
        bits_y,
        bits_z,
        x_hat,
        priors,
    })
}

/// Auxiliary pass at one auxiliary gain anchor, on top of `primary`.
pub fn aux_pass<'g>(
    model: &CodecModel,
    b: &Binder<'g, '_>,
    primary: &PrimaryPass<'g>,
    anchor: usize,
    mode: QuantMode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<AuxPass<'g>> {
    let gs = anchor_gain(b, GainKind::Auxiliary, anchor);
    aux_pass_with_gain(model, b, primary, gs, mode, rng)
}

pub fn aux_pass_with_gain<'g>(
    model: &CodecModel,
    b: &Binder<'g, '_>,
    primary: &PrimaryPass<'g>,
    gs: Var<'g>,
    mode: QuantMode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<AuxPass<'g>> {
    let a = model.auxiliary();
    let err = primary.y.sub(primary.y_hat);
    let s = a.scalable_encode(b, err);
    let sq = quantize_var(s.mul_channel(gs), mode, rng)?;
    let bits_s = model.aux_prior().bits(b, sq).sum();
    let s_hat = sq.div_channel(gs);
    let err_hat = a.scalable_decode(b, s_hat);
    let y2_hat = primary.y_hat.add(err_hat);
    let residual = a.residual(b, y2_hat, primary.priors);
    let x_hat2 = primary.x_hat.add(residual);
    Ok(AuxPass {
        s_hat,
        bits_s,
        err_hat,
        y2_hat,
        residual,
        x_hat2,
    })
}

/// Residual reconstruction from `ŷ` alone, without a scalable stream.
pub fn streamless_pass<'g>(model: &CodecModel, b: &Binder<'g, '_>, primary: &PrimaryPass<'g>) -> AuxPass<'g> {
    let g = b.graph();
    let residual = model.auxiliary().residual(b, primary.y_hat, primary.priors);
    let err_shape = primary.y_hat.value().shape().to_vec();
    AuxPass {
        s_hat: g.constant(Tensor::zeros(&[0])),
        bits_s: g.constant(Tensor::scalar(0.0)),
        err_hat: g.constant(Tensor::zeros(&err_shape)),
        y2_hat: primary.y_hat,
        residual,
        x_hat2: primary.x_hat.add(residual),
    }
}
