use rand_chacha::ChaCha8Rng;

use super::CodecConfig;
use crate::autodiff::{Binder, ParamMap, Var};
use crate::nn::{ConvLayer, LEAKY_SLOPE};
use crate::tensor::Tensor;

/// Bias of the final synthesis layer; outputs start at mid-grey.
pub const SYNTHESIS_BIAS_INIT: f64 = 0.5;
/// Initial raw scale prediction, above the clamp.
const SCALE_BIAS_INIT: f64 = 1.0;

/// Analysis `g_a`, synthesis `g_s` and the hyper pair `h_a` / `h_s`.
#[derive(Clone, Debug)]
pub struct TransformStack {
    pub g_a: Vec<ConvLayer>,
    pub g_s: Vec<ConvLayer>,
    pub h_a: Vec<ConvLayer>,
    pub h_s: Vec<ConvLayer>,
    latent_channels: usize,
    sigma_min: f64,
}

fn chain<'g>(layers: &[ConvLayer], b: &Binder<'g, '_>, mut x: Var<'g>) -> Var<'g> {
    for (i, layer) in layers.iter().enumerate() {
        x = layer.forward(b, x);
        if i + 1 < layers.len() {
            x = x.leaky_relu(LEAKY_SLOPE);
        }
    }
    x
}

impl TransformStack {
    pub fn new(cfg: &CodecConfig) -> Self {
        let (n, cy, cz) = (cfg.hidden, cfg.latent_channels, cfg.hyper_channels);
        Self {
            g_a: vec![
                ConvLayer::down("g_a.0", 3, n, 5, 2),
                ConvLayer::down("g_a.1", n, n, 5, 2),
                ConvLayer::down("g_a.2", n, n, 5, 2),
                ConvLayer::down("g_a.3", n, cy, 5, 2),
            ],
            g_s: vec![
                ConvLayer::up("g_s.0", cy, n, 5, 2),
                ConvLayer::up("g_s.1", n, n, 5, 2),
                ConvLayer::up("g_s.2", n, n, 5, 2),
                ConvLayer::up("g_s.3", n, 3, 5, 2),
            ],
            h_a: vec![
                ConvLayer::down("h_a.0", cy, n, 3, 1),
                ConvLayer::down("h_a.1", n, n, 5, 2),
                ConvLayer::down("h_a.2", n, cz, 5, 2),
            ],
            h_s: vec![
                ConvLayer::up("h_s.0", cz, n, 5, 2),
                ConvLayer::up("h_s.1", n, n, 5, 2),
                ConvLayer::down("h_s.2", n, 2 * cy, 3, 1),
            ],
            latent_channels: cy,
            sigma_min: cfg.sigma_min,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.g_a.iter().chain(&self.g_s).chain(&self.h_a).chain(&self.h_s)
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(ConvLayer::param_count).sum()
    }

    pub fn init(&self, params: &mut ParamMap, rng: &mut ChaCha8Rng) {
        for layer in self.layers() {
            layer.init(params, rng, false);
        }
        let last = self.g_s.last().expect("g_s layers");
        last.init(params, rng, true);
        params.insert(last.bias_name(), Tensor::full(&[3], SYNTHESIS_BIAS_INIT));

        let head = self.h_s.last().expect("h_s layers");
        let w = params.get_mut(&head.weight_name()).expect("h_s head");
        w.data_mut().iter_mut().for_each(|v| *v *= 0.1);
        let cy = self.latent_channels;
        let mut bias = vec![0.0; 2 * cy];
        bias[cy..].fill(SCALE_BIAS_INIT);
        params.insert(head.bias_name(), Tensor::new(&[2 * cy], bias));
    }

    /// `y = g_a(x)`.
    pub fn analysis<'g>(&self, b: &Binder<'g, '_>, x: Var<'g>) -> Var<'g> {
        chain(&self.g_a, b, x)
    }

    /// `z = h_a(y)`; callers pass the gain-scaled latent.
    pub fn hyper_analysis<'g>(&self, b: &Binder<'g, '_>, y: Var<'g>) -> Var<'g> {
        chain(&self.h_a, b, y)
    }

    /// `x̂ = g_s(ŷ)` plus the activations after the first three upsampling
    /// stages, at 1/8, 1/4 and 1/2 of the output size.
    pub fn synthesis<'g>(&self, b: &Binder<'g, '_>, y_hat: Var<'g>) -> (Var<'g>, [Var<'g>; 3]) {
        let mut x = y_hat;
        let mut priors = Vec::with_capacity(3);
        for (i, layer) in self.g_s.iter().enumerate() {
            x = layer.forward(b, x);
            if i + 1 < self.g_s.len() {
                x = x.leaky_relu(LEAKY_SLOPE);
                priors.push(x);
            }
        }
        (x, [priors[0], priors[1], priors[2]])
    }

    /// `(μ, σ) = h_s(ẑ)` with `σ` clamped below at `sigma_min`.
    pub fn hyper_synthesis<'g>(&self, b: &Binder<'g, '_>, z_hat: Var<'g>) -> (Var<'g>, Var<'g>) {
        let params = chain(&self.h_s, b, z_hat);
        let cy = self.latent_channels;
        let mu = params.slice_channels(0, cy);
        let sigma = params.slice_channels(cy, cy).max_scalar(self.sigma_min);
        (mu, sigma)
    }
}
