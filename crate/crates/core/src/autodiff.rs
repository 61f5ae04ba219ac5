//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Nodes that do
//! not depend on a tracked leaf carry no backward closure, so frozen
//! sub-networks cost nothing during [`Graph::backward`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::tensor::{self, Tensor};

type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    tracked: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

/// Gradients produced by [`Graph::backward`], keyed by node id.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, parents: Vec<usize>, backward: Option<BackwardFn>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let tracked = parents.iter().any(|&p| nodes[p].tracked);
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            parents: if tracked { parents } else { Vec::new() },
            backward: if tracked { backward } else { None },
            tracked,
        });
        Var { graph: self, id }
    }

    /// Untracked input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Vec::new(), None)
    }

    /// Leaf whose gradient is wanted.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            tracked: true,
        });
        Var { graph: self, id }
    }

    /// Back-propagates from the scalar `root`.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        assert_eq!(nodes[root.id].value.len(), 1, "backward root must be a scalar");
        grads[root.id] = Some(Tensor::new(nodes[root.id].value.shape(), vec![1.0]));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let parent_grads = backward(&upstream);
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !nodes[p].tracked {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            // Keep the upstream of leaves only; intermediates are consumed.
            if node.parents.is_empty() {
                grads[id] = Some(upstream);
            }
        }
        Gradients { grads }
    }
}

/// Gradient of a broadcast per-channel vector: sum over all non-channel axes.
fn reduce_channels(g: &Tensor) -> Tensor {
    Tensor::new(&[g.shape()[1]], g.channel_sums())
}

/// Applies `f(channel, value)` to each element of a `[B, C, ...]` tensor.
fn per_channel(x: &Tensor, f: impl Fn(usize, f64) -> f64) -> Tensor {
    let c = x.shape()[1];
    let inner: usize = x.shape()[2..].iter().product();
    let mut out = x.clone();
    for chunk in out.data_mut().chunks_mut(c * inner) {
        for (ch, plane) in chunk.chunks_mut(inner).enumerate() {
            for v in plane {
                *v = f(ch, *v);
            }
        }
    }
    out
}

fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

fn standard_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Smallest probability admitted by rate terms.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

/// Probability mass of the unit-width bin centred on `v` under N(mu, sigma²).
pub fn discretized_gaussian_mass(v: f64, mu: f64, sigma: f64) -> f64 {
    // Evaluate on the lower tail for accuracy: the mass is symmetric in |v - mu|.
    let d = (v - mu).abs();
    standard_normal_cdf((0.5 - d) / sigma) - standard_normal_cdf((-0.5 - d) / sigma)
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn is_tracked(&self) -> bool {
        self.graph.nodes.borrow()[self.id].tracked
    }

    /// Copy of the value with no gradient link.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant((*self.value()).clone())
    }

    fn unary(self, value: Tensor, backward: impl Fn(&Tensor) -> Tensor + 'static) -> Var<'g> {
        self.graph
            .push(value, vec![self.id], Some(Box::new(move |g| vec![Some(backward(g))])))
    }

    /// Elementwise op whose derivative depends only on the input value.
    fn elementwise(self, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64 + 'static) -> Var<'g> {
        let x = self.value();
        let out = x.map(f);
        self.unary(out, move |g| g.zip_map(&x, |g, x| g * df(x)))
    }

    pub fn add(self, other: Var<'g>) -> Var<'g> {
        let out = self.value().zip_map(&other.value(), |a, b| a + b);
        self.graph.push(
            out,
            vec![self.id, other.id],
            Some(Box::new(|g| vec![Some(g.clone()), Some(g.clone())])),
        )
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        let out = self.value().zip_map(&other.value(), |a, b| a - b);
        self.graph.push(
            out,
            vec![self.id, other.id],
            Some(Box::new(|g| vec![Some(g.clone()), Some(g.map(|v| -v))])),
        )
    }

    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |a, b| a * b);
        self.graph.push(
            out,
            vec![self.id, other.id],
            Some(Box::new(move |g| {
                vec![Some(g.zip_map(&b, |g, b| g * b)), Some(g.zip_map(&a, |g, a| g * a))]
            })),
        )
    }

    pub fn div(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |a, b| a / b);
        let quotient = Rc::new(out.clone());
        self.graph.push(
            out,
            vec![self.id, other.id],
            Some(Box::new(move |g| {
                let ga = g.zip_map(&b, |g, b| g / b);
                let mut gb = g.zip_map(&quotient, |g, q| -g * q);
                for (v, &b) in gb.data_mut().iter_mut().zip(b.data()) {
                    *v /= b;
                }
                vec![Some(ga), Some(gb)]
            })),
        )
    }

    pub fn scale(self, factor: f64) -> Var<'g> {
        let out = self.value().map(|v| v * factor);
        self.unary(out, move |g| g.map(|v| v * factor))
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        let out = self.value().map(|v| v + c);
        self.unary(out, |g| g.clone())
    }

    /// Multiplies by an untracked tensor of the same shape.
    pub fn mul_const(self, mask: &Tensor) -> Var<'g> {
        let mask = Rc::new(mask.clone());
        let out = self.value().zip_map(&mask, |a, b| a * b);
        self.unary(out, move |g| g.zip_map(&mask, |g, m| g * m))
    }

    /// `x[b, c, ...] * gain[c]`.
    pub fn mul_channel(self, gain: Var<'g>) -> Var<'g> {
        let (x, s) = (self.value(), gain.value());
        assert_eq!(s.len(), x.shape()[1], "per-channel vector length mismatch");
        let out = per_channel(&x, |c, v| v * s.data()[c]);
        self.graph.push(
            out,
            vec![self.id, gain.id],
            Some(Box::new(move |g| {
                let gx = per_channel(g, |c, v| v * s.data()[c]);
                let gs = reduce_channels(&g.zip_map(&x, |g, x| g * x));
                vec![Some(gx), Some(gs)]
            })),
        )
    }

    /// `x[b, c, ...] / gain[c]`.
    pub fn div_channel(self, gain: Var<'g>) -> Var<'g> {
        let (x, s) = (self.value(), gain.value());
        assert_eq!(s.len(), x.shape()[1], "per-channel vector length mismatch");
        let out = per_channel(&x, |c, v| v / s.data()[c]);
        self.graph.push(
            out,
            vec![self.id, gain.id],
            Some(Box::new(move |g| {
                let gx = per_channel(g, |c, v| v / s.data()[c]);
                let prod = g.zip_map(&x, |g, x| g * x);
                let mut gs = reduce_channels(&prod);
                for (v, &s) in gs.data_mut().iter_mut().zip(s.data()) {
                    *v = -*v / (s * s);
                }
                vec![Some(gx), Some(gs)]
            })),
        )
    }

    /// `x[b, c, ...] + bias[c]`.
    pub fn add_channel(self, bias: Var<'g>) -> Var<'g> {
        let s = bias.value();
        assert_eq!(s.len(), self.value().shape()[1], "per-channel vector length mismatch");
        let out = per_channel(&self.value(), |c, v| v + s.data()[c]);
        self.graph.push(
            out,
            vec![self.id, bias.id],
            Some(Box::new(|g| vec![Some(g.clone()), Some(reduce_channels(g))])),
        )
    }

    pub fn conv2d(self, weight: Var<'g>, bias: Var<'g>, stride: usize, pad: usize) -> Var<'g> {
        let (x, w) = (self.value(), weight.value());
        let out = tensor::conv2d(&x, &w, &bias.value(), stride, pad);
        self.graph.push(
            out,
            vec![self.id, weight.id, bias.id],
            Some(Box::new(move |g| {
                let (gx, gw, gb) = tensor::conv2d_backward(&x, &w, g, stride, pad);
                vec![Some(gx), Some(gw), Some(gb)]
            })),
        )
    }

    pub fn conv_transpose2d(self, weight: Var<'g>, bias: Var<'g>, stride: usize, pad: usize) -> Var<'g> {
        let (x, w) = (self.value(), weight.value());
        let out = tensor::conv_transpose2d(&x, &w, &bias.value(), stride, pad);
        self.graph.push(
            out,
            vec![self.id, weight.id, bias.id],
            Some(Box::new(move |g| {
                let (gx, gw, gb) = tensor::conv_transpose2d_backward(&x, &w, g, stride, pad);
                vec![Some(gx), Some(gw), Some(gb)]
            })),
        )
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g> {
        self.elementwise(
            move |v| if v >= 0.0 { v } else { slope * v },
            move |v| if v >= 0.0 { 1.0 } else { slope },
        )
    }

    pub fn tanh(self) -> Var<'g> {
        self.elementwise(f64::tanh, |v| {
            let t = v.tanh();
            1.0 - t * t
        })
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.elementwise(sigmoid, |v| {
            let s = sigmoid(v);
            s * (1.0 - s)
        })
    }

    pub fn softplus(self) -> Var<'g> {
        self.elementwise(softplus, sigmoid)
    }

    pub fn exp(self) -> Var<'g> {
        self.elementwise(f64::exp, f64::exp)
    }

    pub fn ln(self) -> Var<'g> {
        self.elementwise(f64::ln, |v| 1.0 / v)
    }

    pub fn square(self) -> Var<'g> {
        self.elementwise(|v| v * v, |v| 2.0 * v)
    }

    /// `max(x, floor)` with the exact subgradient (zero where clamped).
    pub fn max_scalar(self, floor: f64) -> Var<'g> {
        self.elementwise(
            move |v| v.max(floor),
            move |v| if v >= floor { 1.0 } else { 0.0 },
        )
    }

    pub fn sum(self) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.unary(Tensor::scalar(x.sum()), move |g| Tensor::full(&shape, g.item()))
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Channels `start..start+len` of a `[B, C, ...]` tensor.
    pub fn slice_channels(self, start: usize, len: usize) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let (b, c) = (shape[0], shape[1]);
        assert!(start + len <= c);
        let inner: usize = shape[2..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[1] = len;
        let mut data = Vec::with_capacity(b * len * inner);
        for n in 0..b {
            let base = (n * c + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        self.unary(Tensor::new(&out_shape, data), move |g| {
            let mut full = Tensor::zeros(&shape);
            for n in 0..b {
                let base = (n * c + start) * inner;
                full.data_mut()[base..base + len * inner]
                    .copy_from_slice(&g.data()[n * len * inner..(n + 1) * len * inner]);
            }
            full
        })
    }

    /// `[B, C, H, W] -> [B, C]` spatial mean.
    pub fn global_avg_pool(self) -> Var<'g> {
        let x = self.value();
        let (b, c, h, w) = x.dims4();
        let hw = h * w;
        let data = x.data().chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
        self.unary(Tensor::new(&[b, c], data), move |g| {
            let mut out = Tensor::zeros(&[b, c, h, w]);
            for (plane, &gv) in out.data_mut().chunks_mut(hw).zip(g.data()) {
                plane.fill(gv / hw as f64);
            }
            out
        })
    }

    /// `x[B, D] @ weight[O, D]^T + bias[O]`.
    pub fn linear(self, weight: Var<'g>, bias: Var<'g>) -> Var<'g> {
        let (x, w) = (self.value(), weight.value());
        let (b, d) = (x.shape()[0], x.shape()[1]);
        let o = w.shape()[0];
        assert_eq!(w.shape()[1], d, "linear input width mismatch");
        let bv = bias.value();
        let mut out = Tensor::zeros(&[b, o]);
        for row in out.data_mut().chunks_mut(o) {
            row.copy_from_slice(bv.data());
        }
        tensor::gemm(b, d, o, x.data(), false, w.data(), true, 1.0, out.data_mut());
        self.graph.push(
            out,
            vec![self.id, weight.id, bias.id],
            Some(Box::new(move |g| {
                let mut gx = Tensor::zeros(&[b, d]);
                tensor::gemm(b, o, d, g.data(), false, w.data(), false, 0.0, gx.data_mut());
                let mut gw = Tensor::zeros(&[o, d]);
                tensor::gemm(o, b, d, g.data(), true, x.data(), false, 0.0, gw.data_mut());
                let mut gb = Tensor::zeros(&[o]);
                for row in g.data().chunks(o) {
                    for (acc, v) in gb.data_mut().iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                vec![Some(gx), Some(gw), Some(gb)]
            })),
        )
    }

    /// Scales each row of `[B, D]` to unit L2 norm.
    pub fn l2_normalize_rows(self) -> Var<'g> {
        let x = self.value();
        let d = x.shape()[1];
        let norms: Vec<f64> = x
            .data()
            .chunks(d)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12))
            .collect();
        let mut out = (*x).clone();
        for (row, &n) in out.data_mut().chunks_mut(d).zip(&norms) {
            row.iter_mut().for_each(|v| *v /= n);
        }
        let unit = Rc::new(out.clone());
        self.unary(out, move |g| {
            let mut gx = g.clone();
            for ((grow, urow), &n) in gx.data_mut().chunks_mut(d).zip(unit.data().chunks(d)).zip(&norms) {
                let dot: f64 = grow.iter().zip(urow).map(|(a, b)| a * b).sum();
                for (gv, &u) in grow.iter_mut().zip(urow) {
                    *gv = (*gv - dot * u) / n;
                }
            }
            gx
        })
    }

    /// Elementwise bits `-log2 P` of the unit bin at `self` under N(`mu`, `sigma`²).
    ///
    /// The probability is floored at [`LIKELIHOOD_FLOOR`]; the floor has zero
    /// gradient.
    pub fn gaussian_bits(self, mu: Var<'g>, sigma: Var<'g>) -> Var<'g> {
        let (v, m, s) = (self.value(), mu.value(), sigma.value());
        assert_eq!(v.shape(), m.shape());
        assert_eq!(v.shape(), s.shape());
        let n = v.len();
        let mut bits = vec![0.0; n];
        // d(bits)/d(v) and d(bits)/d(sigma); d/d(mu) = -d/d(v).
        let mut dv = vec![0.0; n];
        let mut ds = vec![0.0; n];
        let ln2 = std::f64::consts::LN_2;
        for i in 0..n {
            let (x, mu, sigma) = (v.data()[i], m.data()[i], s.data()[i]);
            let d = x - mu;
            let upper = (d + 0.5) / sigma;
            let lower = (d - 0.5) / sigma;
            let p = discretized_gaussian_mass(x, mu, sigma);
            if p > LIKELIHOOD_FLOOR {
                bits[i] = -p.log2();
                let (pu, pl) = (standard_normal_pdf(upper), standard_normal_pdf(lower));
                let dp_dv = (pu - pl) / sigma;
                let dp_ds = -(pu * upper - pl * lower) / sigma;
                dv[i] = -dp_dv / (p * ln2);
                ds[i] = -dp_ds / (p * ln2);
            } else {
                bits[i] = -LIKELIHOOD_FLOOR.log2();
            }
        }
        let shape = v.shape().to_vec();
        let (dv, ds) = (Rc::new(dv), Rc::new(ds));
        self.graph.push(
            Tensor::new(&shape, bits),
            vec![self.id, mu.id, sigma.id],
            Some(Box::new(move |g| {
                let gv: Vec<f64> = g.data().iter().zip(dv.iter()).map(|(g, d)| g * d).collect();
                let gm: Vec<f64> = gv.iter().map(|v| -v).collect();
                let gs: Vec<f64> = g.data().iter().zip(ds.iter()).map(|(g, d)| g * d).collect();
                vec![
                    Some(Tensor::new(&shape, gv)),
                    Some(Tensor::new(&shape, gm)),
                    Some(Tensor::new(&shape, gs)),
                ]
            })),
        )
    }

    /// Elementwise bits `-log2(cdf(v+½) - cdf(v-½))` given logits
    /// `upper = f(v+½)`, `lower = f(v-½)` of a sigmoid CDF.
    pub fn logistic_bin_bits(self, lower: Var<'g>) -> Var<'g> {
        let (u, l) = (self.value(), lower.value());
        let n = u.len();
        let mut bits = vec![0.0; n];
        let mut du = vec![0.0; n];
        let mut dl = vec![0.0; n];
        let ln2 = std::f64::consts::LN_2;
        for i in 0..n {
            let (a, b) = (u.data()[i], l.data()[i]);
            // Reflect into the lower tail so the difference is well conditioned.
            let sign = if a + b > 0.0 { -1.0 } else { 1.0 };
            let (su, sl) = (sigmoid(sign * a), sigmoid(sign * b));
            let p = (su - sl).abs();
            if p > LIKELIHOOD_FLOOR {
                bits[i] = -p.log2();
                // p = sigmoid(a) - sigmoid(b) regardless of reflection
                du[i] = -(su * (1.0 - su)) / (p * ln2);
                dl[i] = (sl * (1.0 - sl)) / (p * ln2);
            } else {
                bits[i] = -LIKELIHOOD_FLOOR.log2();
            }
        }
        let shape = u.shape().to_vec();
        let (du, dl) = (Rc::new(du), Rc::new(dl));
        self.graph.push(
            Tensor::new(&shape, bits),
            vec![self.id, lower.id],
            Some(Box::new(move |g| {
                let gu = g.data().iter().zip(du.iter()).map(|(g, d)| g * d).collect();
                let gl = g.data().iter().zip(dl.iter()).map(|(g, d)| g * d).collect();
                vec![Some(Tensor::new(&shape, gu)), Some(Tensor::new(&shape, gl))]
            })),
        )
    }

    /// Mean InfoNCE over the batch: query rows of `self` against positive
    /// keys (row-aligned) and a shared bank of negatives. Keys and negatives
    /// are untracked.
    pub fn info_nce(self, positives: &Tensor, negatives: &Tensor, tau: f64) -> Var<'g> {
        let q = self.value();
        let (b, d) = (q.shape()[0], q.shape()[1]);
        assert_eq!(positives.shape(), q.shape());
        let k = if negatives.is_empty() { 0 } else { negatives.shape()[0] };
        if k > 0 {
            assert_eq!(negatives.shape()[1], d);
        }
        // logits[i] = [q·k+, q·n_0 .. q·n_{K-1}] / tau
        let mut logits = vec![0.0; b * (k + 1)];
        for i in 0..b {
            let qi = &q.data()[i * d..(i + 1) * d];
            let row = &mut logits[i * (k + 1)..(i + 1) * (k + 1)];
            row[0] = dot(qi, &positives.data()[i * d..(i + 1) * d]) / tau;
        }
        if k > 0 {
            let mut sims = vec![0.0; b * k];
            tensor::gemm(b, d, k, q.data(), false, negatives.data(), true, 0.0, &mut sims);
            for i in 0..b {
                for j in 0..k {
                    logits[i * (k + 1) + 1 + j] = sims[i * k + j] / tau;
                }
            }
        }
        let mut loss = 0.0;
        let mut soft = vec![0.0; b * (k + 1)];
        for i in 0..b {
            let row = &logits[i * (k + 1)..(i + 1) * (k + 1)];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            loss += m + z.ln() - row[0];
            for j in 0..=k {
                soft[i * (k + 1) + j] = (row[j] - m).exp() / z;
            }
        }
        loss /= b as f64;
        let (positives, negatives) = (Rc::new(positives.clone()), Rc::new(negatives.clone()));
        self.unary(Tensor::scalar(loss), move |g| {
            // dL/dq_i = (sum_j p_j k_j - k+) / (tau * B)
            let scale = g.item() / (tau * b as f64);
            let mut gq = Tensor::zeros(&[b, d]);
            for i in 0..b {
                let p = &soft[i * (k + 1)..(i + 1) * (k + 1)];
                let out = &mut gq.data_mut()[i * d..(i + 1) * d];
                for (t, o) in out.iter_mut().enumerate() {
                    *o = (p[0] - 1.0) * positives.data()[i * d + t];
                }
                for j in 0..k {
                    let nrow = &negatives.data()[j * d..(j + 1) * d];
                    for (o, nv) in out.iter_mut().zip(nrow) {
                        *o += p[j + 1] * nv;
                    }
                }
                out.iter_mut().for_each(|v| *v *= scale);
            }
            gq
        })
    }

    /// Mean softmax cross-entropy of `[B, O]` logits against class labels.
    pub fn cross_entropy(self, labels: &[usize]) -> Var<'g> {
        let x = self.value();
        let (b, o) = (x.shape()[0], x.shape()[1]);
        assert_eq!(labels.len(), b);
        let mut soft = vec![0.0; b * o];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &x.data()[i * o..(i + 1) * o];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            loss += m + z.ln() - row[labels[i]];
            for j in 0..o {
                soft[i * o + j] = (row[j] - m).exp() / z;
            }
        }
        let labels = labels.to_vec();
        self.unary(Tensor::scalar(loss / b as f64), move |g| {
            let scale = g.item() / b as f64;
            let mut gx = Tensor::new(&[b, o], soft.clone());
            for (i, &l) in labels.iter().enumerate() {
                gx.data_mut()[i * o + l] -= 1.0;
            }
            gx.data_mut().iter_mut().for_each(|v| *v *= scale);
            gx
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

/// Standard normal CDF, `Φ(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    standard_normal_cdf(x)
}

/// Named trainable tensors, iterated in name order.
pub type ParamMap = BTreeMap<String, Tensor>;

/// Maps parameter names to graph nodes, creating each node once. Names for
/// which `trainable` returns true become tracked leaves; everything else is
/// bound as a constant.
pub struct Binder<'g, 'p> {
    graph: &'g Graph,
    params: &'p ParamMap,
    trainable: Box<dyn Fn(&str) -> bool + 'p>,
    bound: RefCell<BTreeMap<String, Var<'g>>>,
}

impl<'g, 'p> Binder<'g, 'p> {
    pub fn new(graph: &'g Graph, params: &'p ParamMap, trainable: impl Fn(&str) -> bool + 'p) -> Self {
        Self {
            graph,
            params,
            trainable: Box::new(trainable),
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    /// Binder with every parameter frozen.
    pub fn frozen(graph: &'g Graph, params: &'p ParamMap) -> Self {
        Self::new(graph, params, |_| false)
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn params(&self) -> &'p ParamMap {
        self.params
    }

    pub fn get(&self, name: &str) -> Var<'g> {
        if let Some(v) = self.bound.borrow().get(name) {
            return *v;
        }
        let value = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .clone();
        let var = if (self.trainable)(name) {
            self.graph.leaf(value)
        } else {
            self.graph.constant(value)
        };
        self.bound.borrow_mut().insert(name.to_string(), var);
        var
    }

    /// Gradients of every bound trainable parameter, by name.
    pub fn collect(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.bound
            .borrow()
            .iter()
            .filter(|(_, v)| v.is_tracked())
            .filter_map(|(name, v)| grads.get(*v).map(|g| (name.clone(), g.clone())))
            .collect()
    }

    /// Names bound as tracked leaves.
    pub fn tracked_names(&self) -> Vec<String> {
        self.bound
            .borrow()
            .iter()
            .filter(|(_, v)| v.is_tracked())
            .map(|(n, _)| n.clone())
            .collect()
    }
}
