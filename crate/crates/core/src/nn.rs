//! Convolution layers, initialisation and the Adam optimiser.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Binder, ParamMap, Var};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    /// Strided convolution; downsamples by `stride`.
    Down,
    /// Transposed convolution; upsamples by `stride`.
    Up,
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub name: String,
    pub kind: ConvKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvLayer {
    pub fn down(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            name: name.into(),
            kind: ConvKind::Down,
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }

    pub fn up(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            name: name.into(),
            kind: ConvKind::Up,
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    fn weight_shape(&self) -> [usize; 4] {
        let k = self.kernel;
        match self.kind {
            ConvKind::Down => [self.out_channels, self.in_channels, k, k],
            ConvKind::Up => [self.in_channels, self.out_channels, k, k],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.out_channels
    }

    /// He-uniform weights and zero bias; `zero` zeroes the weights too.
    pub fn init(&self, params: &mut ParamMap, rng: &mut ChaCha8Rng, zero: bool) {
        let shape = self.weight_shape();
        let n: usize = shape.iter().product();
        let fan_in = match self.kind {
            ConvKind::Down => self.in_channels * self.kernel * self.kernel,
            ConvKind::Up => (self.in_channels * self.kernel * self.kernel / (self.stride * self.stride)).max(1),
        };
        let bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in as f64)).sqrt();
        let data = if zero {
            vec![0.0; n]
        } else {
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        params.insert(self.weight_name(), Tensor::new(&shape, data));
        params.insert(self.bias_name(), Tensor::zeros(&[self.out_channels]));
    }

    pub fn forward<'g>(&self, b: &Binder<'g, '_>, x: Var<'g>) -> Var<'g> {
        let (w, bias) = (b.get(&self.weight_name()), b.get(&self.bias_name()));
        match self.kind {
            ConvKind::Down => x.conv2d(w, bias, self.stride, self.pad()),
            ConvKind::Up => x.conv_transpose2d(w, bias, self.stride, self.pad()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
}

impl LinearLayer {
    pub fn new(name: impl Into<String>, in_features: usize, out_features: usize) -> Self {
        Self {
            name: name.into(),
            in_features,
            out_features,
        }
    }

    pub fn param_count(&self) -> usize {
        (self.in_features + 1) * self.out_features
    }

    pub fn init(&self, params: &mut ParamMap, rng: &mut ChaCha8Rng) {
        let bound = (6.0 / self.in_features as f64).sqrt();
        let n = self.in_features * self.out_features;
        params.insert(
            format!("{}.weight", self.name),
            Tensor::new(
                &[self.out_features, self.in_features],
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
            ),
        );
        params.insert(format!("{}.bias", self.name), Tensor::zeros(&[self.out_features]));
    }

    pub fn forward<'g>(&self, b: &Binder<'g, '_>, x: Var<'g>) -> Var<'g> {
        x.linear(b.get(&format!("{}.weight", self.name)), b.get(&format!("{}.bias", self.name)))
    }
}

/// Adam with bias correction and a constant learning rate.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    /// `(prefix, multiplier)` pairs applied to the learning rate.
    scales: Vec<(String, f64)>,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            scales: Vec::new(),
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Multiplies the learning rate of parameters whose name starts with `prefix`.
    pub fn scaled(mut self, prefix: impl Into<String>, multiplier: f64) -> Self {
        self.scales.push((prefix.into(), multiplier));
        self
    }

    fn lr_for(&self, name: &str) -> f64 {
        self.scales
            .iter()
            .find(|(p, _)| name.starts_with(p.as_str()))
            .map_or(self.lr, |(_, m)| self.lr * m)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamMap, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        for (name, g) in grads {
            let lr = self.lr_for(name);
            let p = params.get_mut(name).unwrap_or_else(|| panic!("gradient for unknown parameter {name}"));
            let m = self.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.second.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for i in 0..g.len() {
                let gi = g.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                p.data_mut()[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use rand::SeedableRng;

    #[test]
    fn conv_layers_resize_by_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamMap::new();
        let down = ConvLayer::down("d", 3, 4, 5, 2);
        let up = ConvLayer::up("u", 4, 2, 5, 2);
        down.init(&mut params, &mut rng, false);
        up.init(&mut params, &mut rng, false);
        let g = Graph::new();
        let b = Binder::frozen(&g, &params);
        let x = g.constant(Tensor::zeros(&[1, 3, 16, 8]));
        let y = down.forward(&b, x);
        assert_eq!(y.shape(), vec![1, 4, 8, 4]);
        assert_eq!(up.forward(&b, y).shape(), vec![1, 2, 16, 8]);
        assert_eq!(down.param_count(), 4 * 3 * 25 + 4);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut params = ParamMap::new();
        params.insert("x".into(), Tensor::new(&[2], vec![3.0, -2.0]));
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let grads = {
                let g = Graph::new();
                let b = Binder::new(&g, &params, |_| true);
                let loss = b.get("x").add_scalar(-1.0).square().sum();
                b.collect(&g.backward(loss))
            };
            opt.step(&mut params, &grads);
        }
        for v in params["x"].data() {
            assert!((v - 1.0).abs() < 1e-3);
        }
    }
}
