//! Per-channel learned density for latents with no side information.
//!
//! Each channel owns a small monotone scalar network `f_c` with widths
//! `1 -> 3 -> 3 -> 1`; its CDF is `sigmoid(f_c(x))`. Monotonicity comes from
//! softplus-positive matrices and `tanh` gates bounded below by `-1`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::alphabet::SymbolAlphabet;
use super::gaussian::TAIL_MASS;
use crate::autodiff::{sigmoid, softplus, Binder, ParamMap, Var, LIKELIHOOD_FLOOR};
use crate::tensor::Tensor;

const WIDTHS: [usize; 4] = [1, 3, 3, 1];
const INIT_SCALE: f64 = 10.0;
const MAX_HALF_WIDTH: i64 = 2048;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorizedPrior {
    pub prefix: String,
    pub channels: usize,
}

/// Extracted weights of one channel's scalar network.
#[derive(Clone, Debug)]
pub struct ChannelDensity {
    /// `matrices[k][o][i]`, already passed through softplus.
    matrices: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    /// Gate strengths, already passed through tanh.
    factors: Vec<Vec<f64>>,
}

impl ChannelDensity {
    pub fn logit(&self, x: f64) -> f64 {
        let mut h = vec![x];
        let layers = self.matrices.len();
        for k in 0..layers {
            let mut next: Vec<f64> = self.matrices[k]
                .iter()
                .zip(&self.biases[k])
                .map(|(row, b)| row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + b)
                .collect();
            if k + 1 < layers {
                for (v, a) in next.iter_mut().zip(&self.factors[k]) {
                    *v += a * v.tanh();
                }
            }
            h = next;
        }
        h[0]
    }

    pub fn cdf(&self, x: f64) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Mass of the unit bin centred on `x`.
    pub fn mass(&self, x: f64) -> f64 {
        let (u, l) = (self.logit(x + 0.5), self.logit(x - 0.5));
        let sign = if u + l > 0.0 { -1.0 } else { 1.0 };
        (sigmoid(sign * u) - sigmoid(sign * l)).abs()
    }

    pub fn bits(&self, x: f64) -> f64 {
        -self.mass(x).max(LIKELIHOOD_FLOOR).log2()
    }

    /// Smallest `x` (to 1e-9) with `cdf(x) >= p`.
    fn quantile(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = (-1.0, 1.0);
        while self.cdf(lo) > p && lo > -1e7 {
            lo *= 2.0;
        }
        while self.cdf(hi) < p && hi < 1e7 {
            hi *= 2.0;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-9 {
                break;
            }
        }
        hi
    }

    /// Alphabet spanning the central `1 - TAIL_MASS` of the density.
    pub fn alphabet(&self) -> SymbolAlphabet {
        let lo = (self.quantile(TAIL_MASS / 2.0).floor() as i64).max(-MAX_HALF_WIDTH);
        let hi = (self.quantile(1.0 - TAIL_MASS / 2.0).ceil() as i64).min(MAX_HALF_WIDTH).max(lo);
        let pmf: Vec<f64> = (lo..=hi).map(|q| self.mass(q as f64)).collect();
        let escape = (1.0 - pmf.iter().sum::<f64>()).max(0.0);
        SymbolAlphabet::from_pmf(lo, &pmf, escape)
    }
}

impl FactorizedPrior {
    pub fn new(prefix: impl Into<String>, channels: usize) -> Self {
        Self {
            prefix: prefix.into(),
            channels,
        }
    }

    fn matrix_name(&self, k: usize, o: usize, i: usize) -> String {
        format!("{}.matrix{k}.{o}.{i}", self.prefix)
    }

    fn bias_name(&self, k: usize, o: usize) -> String {
        format!("{}.bias{k}.{o}", self.prefix)
    }

    fn factor_name(&self, k: usize, o: usize) -> String {
        format!("{}.factor{k}.{o}", self.prefix)
    }

    pub fn param_count(&self) -> usize {
        let mut per_channel = 0;
        for k in 0..WIDTHS.len() - 1 {
            per_channel += WIDTHS[k] * WIDTHS[k + 1] + WIDTHS[k + 1];
            if k + 2 < WIDTHS.len() {
                per_channel += WIDTHS[k + 1];
            }
        }
        per_channel * self.channels
    }

    pub fn init(&self, params: &mut ParamMap, rng: &mut ChaCha8Rng) {
        let layers = WIDTHS.len() - 1;
        let scale = INIT_SCALE.powf(1.0 / layers as f64);
        let c = self.channels;
        for k in 0..layers {
            let init = (1.0 / scale / WIDTHS[k + 1] as f64).exp_m1().ln();
            for o in 0..WIDTHS[k + 1] {
                for i in 0..WIDTHS[k] {
                    params.insert(self.matrix_name(k, o, i), Tensor::full(&[c], init));
                }
                let bias = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
                params.insert(self.bias_name(k, o), Tensor::new(&[c], bias));
                if k + 1 < layers {
                    params.insert(self.factor_name(k, o), Tensor::zeros(&[c]));
                }
            }
        }
    }

    /// Logits `f_c(x)` for every element of a `[B, C, H, W]` variable.
    pub fn logits<'g>(&self, b: &Binder<'g, '_>, x: Var<'g>) -> Var<'g> {
        let layers = WIDTHS.len() - 1;
        let mut h = vec![x];
        for k in 0..layers {
            let mut next = Vec::with_capacity(WIDTHS[k + 1]);
            for o in 0..WIDTHS[k + 1] {
                let mut acc: Option<Var<'g>> = None;
                for (i, hi) in h.iter().enumerate() {
                    let w = b.get(&self.matrix_name(k, o, i)).softplus();
                    let term = hi.mul_channel(w);
                    acc = Some(match acc {
                        Some(a) => a.add(term),
                        None => term,
                    });
                }
                let mut v = acc.expect("non-empty layer").add_channel(b.get(&self.bias_name(k, o)));
                if k + 1 < layers {
                    let gate = b.get(&self.factor_name(k, o)).tanh();
                    v = v.add(v.tanh().mul_channel(gate));
                }
                next.push(v);
            }
            h = next;
        }
        h[0]
    }

    /// Elementwise bits of integer-grid values `x` (`[B, C, H, W]`).
    pub fn bits<'g>(&self, b: &Binder<'g, '_>, x: Var<'g>) -> Var<'g> {
        let upper = self.logits(b, x.add_scalar(0.5));
        let lower = self.logits(b, x.add_scalar(-0.5));
        upper.logistic_bin_bits(lower)
    }

    pub fn channel(&self, params: &ParamMap, c: usize) -> ChannelDensity {
        let layers = WIDTHS.len() - 1;
        let get = |name: String| params.get(&name).unwrap_or_else(|| panic!("missing {name}")).data()[c];
        let mut matrices = Vec::new();
        let mut biases = Vec::new();
        let mut factors = Vec::new();
        for k in 0..layers {
            matrices.push(
                (0..WIDTHS[k + 1])
                    .map(|o| (0..WIDTHS[k]).map(|i| softplus(get(self.matrix_name(k, o, i)))).collect())
                    .collect(),
            );
            biases.push((0..WIDTHS[k + 1]).map(|o| get(self.bias_name(k, o))).collect());
            if k + 1 < layers {
                factors.push((0..WIDTHS[k + 1]).map(|o| get(self.factor_name(k, o)).tanh()).collect());
            }
        }
        ChannelDensity {
            matrices,
            biases,
            factors,
        }
    }

    pub fn channels(&self, params: &ParamMap) -> Vec<ChannelDensity> {
        (0..self.channels).map(|c| self.channel(params, c)).collect()
    }

    /// One coding alphabet per channel, derived only from the parameters.
    pub fn alphabets(&self, params: &ParamMap) -> Vec<SymbolAlphabet> {
        self.channels(params).iter().map(ChannelDensity::alphabet).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use rand::SeedableRng;

    fn trained_like() -> (FactorizedPrior, ParamMap) {
        let prior = FactorizedPrior::new("prior.t", 3);
        let mut params = ParamMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        prior.init(&mut params, &mut rng);
        // Perturb every parameter so the gates are active.
        for t in params.values_mut() {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.8..0.8);
            }
        }
        (prior, params)
    }

    #[test]
    fn cdf_is_monotone_with_unit_limits() {
        let (prior, params) = trained_like();
        for d in prior.channels(&params) {
            let mut prev = 0.0;
            for i in -400..=400 {
                let c = d.cdf(i as f64 * 0.25);
                assert!(c >= prev);
                prev = c;
            }
            assert!(d.cdf(-1e6) < 1e-6);
            assert!(d.cdf(1e6) > 1.0 - 1e-6);
        }
    }

    #[test]
    fn graph_and_scalar_paths_agree() {
        let (prior, params) = trained_like();
        let x = Tensor::new(&[1, 3, 1, 2], vec![-2.0, 0.0, 1.0, 3.0, 0.0, -7.0]);
        let g = Graph::new();
        let b = Binder::frozen(&g, &params);
        let bits = prior.bits(&b, g.constant(x.clone())).value();
        let dens = prior.channels(&params);
        for (i, (&v, &got)) in x.data().iter().zip(bits.data()).enumerate() {
            let want = dens[i / 2].bits(v);
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn alphabet_mass_covers_all_but_tail() {
        let (prior, params) = trained_like();
        for d in prior.channels(&params) {
            let a = d.alphabet();
            let inside: f64 = (a.lo..=a.hi).map(|q| d.mass(q as f64)).sum();
            assert!(inside > 1.0 - 2e-6, "{inside}");
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let (prior, params) = trained_like();
        let x = Tensor::new(&[2, 3, 1, 1], vec![-1.0, 0.0, 2.0, 1.0, -3.0, 0.0]);
        let loss = |p: &ParamMap| {
            let g = Graph::new();
            let b = Binder::frozen(&g, p);
            prior.bits(&b, g.constant(x.clone())).sum().value().item()
        };
        let g = Graph::new();
        let b = Binder::new(&g, &params, |_| true);
        let out = prior.bits(&b, g.constant(x.clone())).sum();
        let grads = b.collect(&g.backward(out));
        for name in ["prior.t.matrix1.2.0", "prior.t.bias0.1", "prior.t.factor1.0", "prior.t.bias2.0"] {
            for c in 0..3 {
                let h = 1e-6;
                let mut plus = params.clone();
                plus.get_mut(name).unwrap().data_mut()[c] += h;
                let mut minus = params.clone();
                minus.get_mut(name).unwrap().data_mut()[c] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let analytic = grads[name].data()[c];
                assert!(
                    (numeric - analytic).abs() <= 1e-5 * numeric.abs().max(analytic.abs()) + 1e-9,
                    "{name}[{c}]: {analytic} vs {numeric}"
                );
            }
        }
    }
}
