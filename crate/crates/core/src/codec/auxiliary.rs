use rand_chacha::ChaCha8Rng;

use super::CodecConfig;
use crate::autodiff::{Binder, ParamMap, Var};
use crate::nn::{ConvLayer, LEAKY_SLOPE};

/// Scalable transform (three-layer encoder/decoder for the quantisation error)
/// and the residual reconstruction network fed by decoder priors.
#[derive(Clone, Debug)]
pub struct AuxiliaryStack {
    pub encoder: Vec<ConvLayer>,
    pub decoder: Vec<ConvLayer>,
    /// Point-wise channel reduction of `ŷ₂`.
    pub residual_in: ConvLayer,
    /// Four ×2 transposed convolutions; the last emits 3 channels.
    pub residual_up: Vec<ConvLayer>,
    /// Point-wise projections of `f1`, `f2`, `f3`.
    pub side: Vec<ConvLayer>,
}

impl AuxiliaryStack {
    pub fn new(cfg: &CodecConfig) -> Self {
        let (cy, cs, w, r, n) = (
            cfg.latent_channels,
            cfg.aux_channels,
            cfg.aux_hidden,
            cfg.residual_width,
            cfg.hidden,
        );
        Self {
            encoder: vec![
                ConvLayer::down("aux.enc.0", cy, w, 1, 1),
                ConvLayer::down("aux.enc.1", w, w, 3, 1),
                ConvLayer::down("aux.enc.2", w, cs, 1, 1),
            ],
            decoder: vec![
                ConvLayer::down("aux.dec.0", cs, w, 1, 1),
                ConvLayer::down("aux.dec.1", w, w, 3, 1),
                ConvLayer::down("aux.dec.2", w, cy, 1, 1),
            ],
            residual_in: ConvLayer::down("aux.res.in", cy, r, 1, 1),
            residual_up: vec![
                ConvLayer::up("aux.res.up0", r, r, 3, 2),
                ConvLayer::up("aux.res.up1", r, r, 3, 2),
                ConvLayer::up("aux.res.up2", r, r, 3, 2),
                ConvLayer::up("aux.res.up3", r, 3, 3, 2),
            ],
            side: (0..3).map(|i| ConvLayer::down(format!("aux.res.side{i}"), n, r, 1, 1)).collect(),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .chain(std::iter::once(&self.residual_in))
            .chain(&self.residual_up)
            .chain(&self.side)
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(ConvLayer::param_count).sum()
    }

    /// Final layers of the decoder and the residual net start at zero, so
    /// `err_hat = 0` and `r = 0` before training.
    pub fn init(&self, params: &mut ParamMap, rng: &mut ChaCha8Rng) {
        for layer in self.layers() {
            layer.init(params, rng, false);
        }
        self.decoder.last().expect("decoder layers").init(params, rng, true);
        self.residual_up.last().expect("residual layers").init(params, rng, true);
    }

    pub fn scalable_encode<'g>(&self, b: &Binder<'g, '_>, err: Var<'g>) -> Var<'g> {
        let mut x = err;
        for (i, layer) in self.encoder.iter().enumerate() {
            x = layer.forward(b, x);
            if i + 1 < self.encoder.len() {
                x = x.leaky_relu(LEAKY_SLOPE);
            }
        }
        x
    }

    pub fn scalable_decode<'g>(&self, b: &Binder<'g, '_>, s_hat: Var<'g>) -> Var<'g> {
        let mut x = s_hat;
        for (i, layer) in self.decoder.iter().enumerate() {
            x = layer.forward(b, x);
            if i + 1 < self.decoder.len() {
                x = x.leaky_relu(LEAKY_SLOPE);
            }
        }
        x
    }

    /// Residual `r` from `ŷ₂` and the synthesis priors `f1..f3`.
    pub fn residual<'g>(&self, b: &Binder<'g, '_>, y2_hat: Var<'g>, priors: [Var<'g>; 3]) -> Var<'g> {
        let mut h = self.residual_in.forward(b, y2_hat).leaky_relu(LEAKY_SLOPE);
        for (i, prior) in priors.into_iter().enumerate() {
            h = self.residual_up[i]
                .forward(b, h)
                .add(self.side[i].forward(b, prior))
                .leaky_relu(LEAKY_SLOPE);
        }
        self.residual_up[3].forward(b, h)
    }
}
