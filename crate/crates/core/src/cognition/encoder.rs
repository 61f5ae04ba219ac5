use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Binder, ParamMap, Var};
use crate::nn::{ConvLayer, LinearLayer, LEAKY_SLOPE};

/// Small convolutional backbone with global pooling and a projection head
/// emitting unit vectors.
#[derive(Clone, Debug)]
pub struct ContrastiveEncoder {
    pub convs: Vec<ConvLayer>,
    pub head: [LinearLayer; 2],
}

impl ContrastiveEncoder {
    pub fn new(widths: &[usize], hidden: usize, dim: usize) -> Self {
        let mut convs = Vec::new();
        let mut prev = 3;
        for (i, &w) in widths.iter().enumerate() {
            convs.push(ConvLayer::down(format!("enc.conv{i}"), prev, w, 3, 2));
            prev = w;
        }
        Self {
            convs,
            head: [
                LinearLayer::new("enc.fc0", prev, hidden),
                LinearLayer::new("enc.fc1", hidden, dim),
            ],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.head[0].in_features
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(ConvLayer::param_count).sum::<usize>()
            + self.head.iter().map(LinearLayer::param_count).sum::<usize>()
    }

    pub fn init(&self, params: &mut ParamMap, rng: &mut ChaCha8Rng) {
        for c in &self.convs {
            c.init(params, rng, false);
        }
        for l in &self.head {
            l.init(params, rng);
        }
    }

    /// Pooled backbone features `[B, F]`.
    pub fn features<'g>(&self, b: &Binder<'g, '_>, x: Var<'g>) -> Var<'g> {
        let mut h = x;
        for c in &self.convs {
            h = c.forward(b, h).leaky_relu(LEAKY_SLOPE);
        }
        h.global_avg_pool()
    }

    /// Unit-norm embeddings `[B, d]` projected from pooled features.
    pub fn project<'g>(&self, b: &Binder<'g, '_>, features: Var<'g>) -> Var<'g> {
        let h = self.head[0].forward(b, features).leaky_relu(LEAKY_SLOPE);
        self.head[1].forward(b, h).l2_normalize_rows()
    }

    pub fn embed<'g>(&self, b: &Binder<'g, '_>, x: Var<'g>) -> Var<'g> {
        let f = self.features(b, x);
        self.project(b, f)
    }
}
