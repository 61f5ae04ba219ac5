use super::alphabet::SymbolAlphabet;
use crate::autodiff::{discretized_gaussian_mass, LIKELIHOOD_FLOOR};

/// Lower clamp applied to predicted scales.
pub const SIGMA_MIN: f64 = 0.11;
/// Two-sided probability mass left outside a coding alphabet.
pub const TAIL_MASS: f64 = 1e-6;
/// `Φ⁻¹(1 - TAIL_MASS / 2)`.
const TAIL_Z: f64 = 4.891_638_475_699_4;
const MAX_HALF_WIDTH: i64 = 2048;

/// Discretised Gaussian conditional `p(ŷ | ẑ)`, evaluated on the integer grid
/// of the gain-scaled latent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianConditional {
    pub sigma_min: f64,
}

impl Default for GaussianConditional {
    fn default() -> Self {
        Self { sigma_min: SIGMA_MIN }
    }
}

impl GaussianConditional {
    /// Probability of the unit bin around `v` under N(`mu`, `sigma`²), floored.
    pub fn likelihood(&self, v: f64, mu: f64, sigma: f64) -> f64 {
        discretized_gaussian_mass(v, mu, sigma).max(LIKELIHOOD_FLOOR)
    }

    pub fn bits(&self, v: f64, mu: f64, sigma: f64) -> f64 {
        -self.likelihood(v, mu, sigma).log2()
    }

    /// Coding alphabet centred on `round(mu)` wide enough to leave at most
    /// [`TAIL_MASS`] outside, for a scaled mean and scale.
    pub fn alphabet(&self, mu: f64, sigma: f64) -> SymbolAlphabet {
        let centre = mu.round() as i64;
        let half = ((TAIL_Z * sigma).ceil() as i64 + 1).clamp(1, MAX_HALF_WIDTH);
        let lo = centre - half;
        let pmf: Vec<f64> = (lo..=centre + half)
            .map(|q| discretized_gaussian_mass(q as f64, mu, sigma))
            .collect();
        let escape = (1.0 - pmf.iter().sum::<f64>()).max(0.0);
        SymbolAlphabet::from_pmf(lo, &pmf, escape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::normal_cdf;
    use crate::entropy::range_coder::{RangeDecoder, RangeEncoder};

    /// Simpson quadrature of the standard normal density; oracle for Φ.
    fn integrate_pdf(a: f64, b: f64) -> f64 {
        let n = 2000;
        let h = (b - a) / n as f64;
        let f = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn zero_symbol_unit_scale() {
        let g = GaussianConditional::default();
        let p = g.likelihood(0.0, 0.0, 1.0);
        let oracle = integrate_pdf(-0.5, 0.5);
        assert!((p - oracle).abs() < 1e-12);
        assert!((p - 0.382_924_922_548_026).abs() < 1e-12);
        assert!((g.bits(0.0, 0.0, 1.0) - 1.384_866_534_290_990).abs() < 1e-9);
    }

    #[test]
    fn symmetric_symbols_have_equal_mass() {
        let g = GaussianConditional::default();
        for k in 1..6 {
            let (a, b) = (g.likelihood(k as f64, 0.0, 1.7), g.likelihood(-k as f64, 0.0, 1.7));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mass_sums_to_one() {
        for &(mu, sigma) in &[(0.0, 1.0), (0.3, 0.11), (-2.4, 4.0)] {
            let total: f64 = (-30..=30).map(|q| discretized_gaussian_mass(q as f64, mu, sigma)).sum();
            assert!((total - 1.0).abs() < 1e-6, "mu {mu} sigma {sigma}: {total}");
        }
    }

    #[test]
    fn mass_is_largest_at_mean() {
        for &(mu, sigma) in &[(0.0f64, 0.5), (2.2, 1.3), (-0.49, 3.0), (7.5, 0.2)] {
            let best = mu.round();
            let peak = discretized_gaussian_mass(best, mu, sigma);
            for q in -20..=20 {
                assert!(discretized_gaussian_mass(q as f64, mu, sigma) <= peak);
            }
        }
    }

    #[test]
    fn mass_matches_cdf_difference() {
        let (mu, sigma) = (0.7, 2.3);
        for q in -5..5 {
            let q = q as f64;
            let direct = normal_cdf((q + 0.5 - mu) / sigma) - normal_cdf((q - 0.5 - mu) / sigma);
            assert!((discretized_gaussian_mass(q, mu, sigma) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn alphabet_round_trips_outliers() {
        let g = GaussianConditional::default();
        let a = g.alphabet(3.4, 0.8);
        let values = [3, 4, 2, 40, -17, 3];
        let mut enc = RangeEncoder::new();
        for v in values {
            a.encode(&mut enc, v);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes, 0).unwrap();
        for v in values {
            assert_eq!(a.decode(&mut dec).unwrap(), v);
        }
    }
}
