//! Learned per-channel gain units for variable-rate coding.
//!
//! Gains are stored as logarithms (`gain.{y,z,s}.{anchor}`) so every entry
//! stays strictly positive. A quality knob `alpha` in `[0, 1]` is spread
//! uniformly over the `N - 1` intervals between anchors; between anchors the
//! gain is the geometric interpolation `G_n^l * G_{n+1}^(1-l)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::ParamMap;
use crate::error::{RdcError, Result};
use crate::tensor::Tensor;

/// λ_n used for each primary anchor, lowest rate first.
pub const PRIMARY_LAMBDAS: [f64; 6] = [0.0625, 0.125, 0.25, 0.5, 1.0, 2.0];
/// Rate-distortion weights of the warm-up phase.
pub const WARMUP_LAMBDAS: [f64; 6] = [0.0018, 0.0035, 0.0067, 0.013, 0.025, 0.0483];
/// λ_m used for each auxiliary anchor, lowest rate first.
pub const AUXILIARY_LAMBDAS: [f64; 6] = [0.00018, 0.00036, 0.00072, 0.001, 0.0015, 0.002];

/// Full scale of the 16-bit fixed-point quality encoding.
pub const ALPHA_FIXED_SCALE: u32 = 65535;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GainKind {
    /// Main latent `y`.
    Latent,
    /// Hyper latent `z`.
    Hyper,
    /// Scalable-stream latent `s`.
    Auxiliary,
}

impl GainKind {
    pub fn prefix(self) -> &'static str {
        match self {
            GainKind::Latent => "gain.y",
            GainKind::Hyper => "gain.z",
            GainKind::Auxiliary => "gain.s",
        }
    }

    pub fn param_name(self, anchor: usize) -> String {
        format!("{}.{anchor}", self.prefix())
    }
}

/// Position between two adjacent anchors: weight `l` on `lower`, `1 - l` on
/// `lower + 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorBlend {
    pub lower: usize,
    pub l: f64,
}

impl AnchorBlend {
    pub fn exact(anchor: usize) -> Self {
        Self { lower: anchor, l: 1.0 }
    }

    /// The anchor this blend lands on exactly, if any.
    pub fn as_anchor(&self) -> Option<usize> {
        if self.l == 1.0 {
            Some(self.lower)
        } else if self.l == 0.0 {
            Some(self.lower + 1)
        } else {
            None
        }
    }
}

pub fn check_unit(name: &'static str, value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(RdcError::Range { name, value })
    }
}

/// Quality knobs for one compression call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QualityPoint {
    pub alpha_fx: u16,
    pub alpha_s_fx: Option<u16>,
}

impl QualityPoint {
    pub fn new(alpha: f64, alpha_s: Option<f64>) -> Result<Self> {
        Ok(Self {
            alpha_fx: alpha_to_fixed(alpha)?,
            alpha_s_fx: alpha_s.map(alpha_to_fixed).transpose()?,
        })
    }

    pub fn anchor(anchor: usize, anchors: usize) -> Self {
        Self {
            alpha_fx: anchor_to_fixed(anchor, anchors),
            alpha_s_fx: None,
        }
    }

    pub fn alpha(&self) -> f64 {
        fixed_to_alpha(self.alpha_fx)
    }

    pub fn alpha_s(&self) -> Option<f64> {
        self.alpha_s_fx.map(fixed_to_alpha)
    }
}

/// `round(alpha * 65535)`.
pub fn alpha_to_fixed(alpha: f64) -> Result<u16> {
    check_unit("alpha", alpha)?;
    Ok((alpha * ALPHA_FIXED_SCALE as f64).round() as u16)
}

pub fn fixed_to_alpha(fx: u16) -> f64 {
    fx as f64 / ALPHA_FIXED_SCALE as f64
}

/// Fixed-point alpha of an anchor; exact whenever `anchors - 1` divides 65535
/// (true for the default six anchors).
pub fn anchor_to_fixed(anchor: usize, anchors: usize) -> u16 {
    ((anchor as u64 * ALPHA_FIXED_SCALE as u64 + (anchors as u64 - 1) / 2) / (anchors as u64 - 1)) as u16
}

/// Blend for a real-valued alpha.
pub fn blend_for_alpha(alpha: f64, anchors: usize) -> Result<AnchorBlend> {
    check_unit("alpha", alpha)?;
    if anchors == 1 {
        return Ok(AnchorBlend::exact(0));
    }
    let t = alpha * (anchors - 1) as f64;
    let lower = (t.floor() as usize).min(anchors - 2);
    Ok(AnchorBlend {
        lower,
        l: 1.0 - (t - lower as f64),
    })
}

/// Blend for a fixed-point alpha, computed in integer arithmetic so encoder
/// and decoder agree bit for bit and anchors are hit exactly.
pub fn blend_for_fixed(fx: u16, anchors: usize) -> AnchorBlend {
    if anchors == 1 {
        return AnchorBlend::exact(0);
    }
    let scaled = fx as u64 * (anchors as u64 - 1);
    let full = ALPHA_FIXED_SCALE as u64;
    let lower = ((scaled / full) as usize).min(anchors - 2);
    let rem = scaled - lower as u64 * full;
    if rem == 0 {
        AnchorBlend::exact(lower)
    } else if rem == full {
        AnchorBlend { lower, l: 0.0 }
    } else {
        AnchorBlend {
            lower,
            l: 1.0 - rem as f64 / full as f64,
        }
    }
}

/// One family of gain vectors (`y`, `z` or `s`) across all anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct GainSet {
    pub kind: GainKind,
    /// Natural-log gains, one `[C]` tensor per anchor.
    pub log_gains: Vec<Tensor>,
    pub anchor_lambdas: Vec<f64>,
}

impl GainSet {
    /// All gains start at 1.
    pub fn init(params: &mut ParamMap, kind: GainKind, channels: usize, anchors: usize) {
        for n in 0..anchors {
            params.insert(kind.param_name(n), Tensor::zeros(&[channels]));
        }
    }

    pub fn from_params(params: &ParamMap, kind: GainKind, anchor_lambdas: &[f64]) -> Result<Self> {
        let log_gains = (0..anchor_lambdas.len())
            .map(|n| {
                params
                    .get(&kind.param_name(n))
                    .cloned()
                    .ok_or_else(|| RdcError::Config(format!("missing {}", kind.param_name(n))))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind,
            log_gains,
            anchor_lambdas: anchor_lambdas.to_vec(),
        })
    }

    pub fn anchors(&self) -> usize {
        self.log_gains.len()
    }

    pub fn channels(&self) -> usize {
        self.log_gains[0].len()
    }

    pub fn anchor(&self, n: usize) -> Vec<f64> {
        self.log_gains[n].data().iter().map(|v| v.exp()).collect()
    }

    pub fn gain_for(&self, blend: AnchorBlend) -> Vec<f64> {
        if let Some(n) = blend.as_anchor() {
            return self.anchor(n);
        }
        let (lo, hi) = (&self.log_gains[blend.lower], &self.log_gains[blend.lower + 1]);
        lo.data()
            .iter()
            .zip(hi.data())
            .map(|(a, b)| (blend.l * a + (1.0 - blend.l) * b).exp())
            .collect()
    }

    pub fn gain_at(&self, alpha: f64) -> Result<Vec<f64>> {
        Ok(self.gain_for(blend_for_alpha(alpha, self.anchors())?))
    }

    pub fn gain_at_fixed(&self, fx: u16) -> Vec<f64> {
        self.gain_for(blend_for_fixed(fx, self.anchors()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    /// Additive uniform noise in `[-½, ½)`, the training-time proxy.
    Noise,
    /// Round half away from zero.
    Round,
}

/// `Q(v * G) / G` per channel of a `[B, C, ...]` tensor.
pub fn quantize(v: &Tensor, gain: &[f64], mode: QuantMode, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
    let c = v.shape()[1];
    if gain.len() != c {
        return Err(RdcError::Config(format!("gain length {} for {c} channels", gain.len())));
    }
    if let Some(bad) = gain.iter().find(|g| !(**g > 0.0)) {
        return Err(RdcError::Invariant(format!("non-positive gain entry {bad}")));
    }
    let inner: usize = v.shape()[2..].iter().product();
    let mut out = v.clone();
    let mut rng = rng;
    for chunk in out.data_mut().chunks_mut(c * inner) {
        for (ch, plane) in chunk.chunks_mut(inner).enumerate() {
            let g = gain[ch];
            for x in plane {
                let scaled = *x * g;
                let q = match mode {
                    QuantMode::Round => scaled.round(),
                    QuantMode::Noise => {
                        let rng = rng
                            .as_deref_mut()
                            .ok_or_else(|| RdcError::Config("noise quantisation needs a generator".into()))?;
                        scaled + rng.gen_range(-0.5..0.5)
                    }
                };
                *x = q / g;
            }
        }
    }
    Ok(out)
}

/// Integer symbols `round(v * G)` of a `[B, C, ...]` tensor.
pub fn quantize_symbols(v: &Tensor, gain: &[f64]) -> Vec<i64> {
    let c = v.shape()[1];
    let inner: usize = v.shape()[2..].iter().product();
    let mut out = Vec::with_capacity(v.len());
    for chunk in v.data().chunks(c * inner) {
        for (ch, plane) in chunk.chunks(inner).enumerate() {
            out.extend(plane.iter().map(|x| (x * gain[ch]).round() as i64));
        }
    }
    out
}

/// Inverse of [`quantize_symbols`]: `q / G`.
pub fn dequantize_symbols(symbols: &[i64], shape: &[usize], gain: &[f64]) -> Tensor {
    let c = shape[1];
    let inner: usize = shape[2..].iter().product();
    let mut data = Vec::with_capacity(symbols.len());
    for chunk in symbols.chunks(c * inner) {
        for (ch, plane) in chunk.chunks(inner).enumerate() {
            data.extend(plane.iter().map(|&q| q as f64 / gain[ch]));
        }
    }
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn set(vectors: &[[f64; 2]]) -> GainSet {
        GainSet {
            kind: GainKind::Latent,
            log_gains: vectors.iter().map(|v| Tensor::new(&[2], v.iter().map(|g| g.ln()).collect())).collect(),
            anchor_lambdas: vec![1.0; vectors.len()],
        }
    }

    #[test]
    fn anchors_are_returned_exactly() {
        let g = set(&[[1.5, 0.7], [2.0, 3.0], [9.0, 0.1]]);
        assert_eq!(g.gain_at(0.0).unwrap(), g.anchor(0));
        assert_eq!(g.gain_at(0.5).unwrap(), g.anchor(1));
        assert_eq!(g.gain_at(1.0).unwrap(), g.anchor(2));
        assert_eq!(g.gain_at_fixed(0), g.anchor(0));
        assert_eq!(g.gain_at_fixed(u16::MAX), g.anchor(2));
    }

    #[test]
    fn midpoint_is_geometric_mean() {
        let g = set(&[[2.0, 2.0], [8.0, 8.0]]);
        for v in g.gain_at(0.5).unwrap() {
            assert!((v - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn six_anchor_fixed_point_is_exact() {
        for n in 0..6 {
            let fx = anchor_to_fixed(n, 6);
            assert_eq!(fx as u32, 13107 * n as u32);
            assert_eq!(blend_for_fixed(fx, 6).as_anchor(), Some(n));
        }
    }

    #[test]
    fn alpha_out_of_range_is_rejected() {
        let g = set(&[[1.0, 1.0], [2.0, 2.0]]);
        assert!(matches!(g.gain_at(1.5), Err(RdcError::Range { .. })));
        assert!(matches!(g.gain_at(-0.1), Err(RdcError::Range { .. })));
    }

    #[test]
    fn interpolation_is_continuous() {
        let g = set(&[[1.0, 0.5], [3.0, 4.0], [0.2, 9.0], [5.0, 5.0]]);
        // Left and right limits at each interior anchor meet the anchor value.
        for n in 1..3 {
            let a = n as f64 / 3.0;
            let at = g.gain_at(a).unwrap();
            for side in [a - 1e-9, a + 1e-9] {
                for (x, y) in g.gain_at(side).unwrap().iter().zip(&at) {
                    assert!(((x - y) / y).abs() < 1e-6);
                }
            }
        }
        // On a 1000-point grid consecutive steps stay within the Lipschitz bound.
        let slope = (0..3)
            .flat_map(|n| {
                let (a, b) = (&g.log_gains[n], &g.log_gains[n + 1]);
                a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
            * 3.0;
        let mut prev = g.gain_at(0.0).unwrap();
        for i in 1..=1000 {
            let cur = g.gain_at(i as f64 / 1000.0).unwrap();
            for (x, y) in cur.iter().zip(&prev) {
                assert!((x.ln() - y.ln()).abs() <= slope / 1000.0 + 1e-12);
            }
            prev = cur;
        }
    }

    #[test]
    fn rounding_examples() {
        let v = Tensor::new(&[1, 1, 1, 1], vec![1.3]);
        let q = quantize(&v, &[2.0], QuantMode::Round, None).unwrap();
        assert_eq!(q.data()[0], 1.5);
        let q = quantize(&v, &[0.5], QuantMode::Round, None).unwrap();
        assert_eq!(q.data()[0], 2.0);
        let half = Tensor::new(&[1, 1, 1, 2], vec![0.5, -0.5]);
        assert_eq!(quantize(&half, &[1.0], QuantMode::Round, None).unwrap().data(), &[1.0, -1.0]);
    }

    #[test]
    fn non_positive_gain_is_an_invariant_violation() {
        let v = Tensor::new(&[1, 2, 1, 1], vec![1.0, 1.0]);
        assert!(matches!(
            quantize(&v, &[1.0, 0.0], QuantMode::Round, None),
            Err(RdcError::Invariant(_))
        ));
    }

    proptest! {
        #[test]
        fn round_error_bounded_by_half_bin(values in prop::collection::vec(-50.0f64..50.0, 4), g in 0.05f64..20.0) {
            let v = Tensor::new(&[1, 1, 2, 2], values);
            let q = quantize(&v, &[g], QuantMode::Round, None).unwrap();
            for (a, b) in q.data().iter().zip(v.data()) {
                prop_assert!((a - b).abs() <= 0.5 / g + 1e-12);
            }
            let unit = quantize(&v, &[1.0], QuantMode::Round, None).unwrap();
            for (a, b) in unit.data().iter().zip(v.data()) {
                prop_assert_eq!(*a, b.round());
            }
        }

        #[test]
        fn noise_stays_within_half_bin(values in prop::collection::vec(-50.0f64..50.0, 4), g in 0.05f64..20.0, seed in 0u64..1000) {
            let v = Tensor::new(&[1, 1, 2, 2], values);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = quantize(&v, &[g], QuantMode::Noise, Some(&mut rng)).unwrap();
            for (a, b) in q.data().iter().zip(v.data()) {
                prop_assert!((a * g - b * g).abs() <= 0.5 + 1e-9);
            }
        }

        #[test]
        fn fixed_point_alpha_round_trips(alpha in 0.0f64..=1.0) {
            let fx = alpha_to_fixed(alpha).unwrap();
            prop_assert!((fixed_to_alpha(fx) - alpha).abs() <= 0.5 / 65535.0 + 1e-15);
        }
    }
}
