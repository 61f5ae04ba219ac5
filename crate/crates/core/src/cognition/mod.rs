//! Contrastive feature encoder standing in for a pretrained backbone, its
//! negative queue, the linear probe and the toy dataset.

mod augment;
mod dataset;
mod encoder;
mod probe;
mod queue;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::Augmentation;
pub use dataset::{load_image, save_image, toy_dataset, BatchSampler, Dataset, TOY_CLASSES, TOY_CLASS_NAMES};
pub use encoder::ContrastiveEncoder;
pub use probe::{accuracy, LinearProbe, ProbeTrainConfig};
pub use queue::NegativeQueue;

use crate::autodiff::{Binder, Graph, ParamMap, Var};
use crate::checkpoint::{param_digest, Checkpoint, CheckpointKind};
use crate::config::{parse_value, render_list};
use crate::error::{RdcError, Result};
use crate::nn::Adam;
use crate::tensor::Tensor;

/// Images per forward pass when embedding large sets.
const EMBED_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct ProxyConfig {
    pub widths: Vec<usize>,
    pub hidden: usize,
    pub dim: usize,
    pub tau: f64,
    pub queue_size: usize,
    pub momentum: f64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 32, 64],
            hidden: 128,
            dim: 128,
            tau: 0.07,
            queue_size: 4096,
            momentum: 0.99,
        }
    }
}

impl ProxyConfig {
    /// Default encoder with a queue sized for a few hundred images.
    pub fn toy() -> Self {
        Self {
            queue_size: 1024,
            ..Self::default()
        }
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        let widths: Vec<f64> = self.widths.iter().map(|&w| w as f64).collect();
        vec![
            ("proxy_widths".into(), render_list(&widths)),
            ("proxy_hidden".into(), self.hidden.to_string()),
            ("proxy_dim".into(), self.dim.to_string()),
            ("tau".into(), self.tau.to_string()),
            ("queue_size".into(), self.queue_size.to_string()),
            ("ema".into(), self.momentum.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "proxy_widths" => {
                self.widths = value
                    .split(',')
                    .map(|w| parse_value(key, w.trim()))
                    .collect::<Result<_>>()?
            }
            "proxy_hidden" => self.hidden = parse_value(key, value)?,
            "proxy_dim" => self.dim = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "queue_size" => self.queue_size = parse_value(key, value)?,
            "ema" => self.momentum = parse_value(key, value)?,
            _ => return Err(RdcError::Config(format!("unknown proxy key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(RdcError::Parameter(format!("temperature must be positive, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(RdcError::Parameter(format!("ema must lie in [0, 1], got {}", self.momentum)));
        }
        if self.widths.is_empty() || self.widths.contains(&0) || self.hidden == 0 || self.dim == 0 {
            return Err(RdcError::Config("proxy widths must be positive".into()));
        }
        Ok(())
    }
}

/// `-log(exp(q·k⁺/τ) / Σ exp(q·kᵢ/τ))` for one query, the sum running over
/// the positive and every queued negative.
pub fn info_nce(q: &[f64], k_plus: &[f64], negatives: &[Vec<f64>], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(RdcError::Parameter(format!("temperature must be positive, got {tau}")));
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let logits: Vec<f64> = std::iter::once(dot(q, k_plus))
        .chain(negatives.iter().map(|k| dot(q, k)))
        .map(|s| s / tau)
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    Ok(m + z.ln() - logits[0])
}

/// Query encoder, momentum copy and negative queue.
#[derive(Clone, Debug)]
pub struct CognitionProxy {
    pub config: ProxyConfig,
    pub encoder: ContrastiveEncoder,
    pub params: ParamMap,
    pub momentum: ParamMap,
    pub queue: NegativeQueue,
}

impl CognitionProxy {
    pub fn new(config: ProxyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoder = ContrastiveEncoder::new(&config.widths, config.hidden, config.dim);
        let mut params = ParamMap::new();
        encoder.init(&mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            queue: NegativeQueue::new(config.queue_size, config.dim),
            momentum: params.clone(),
            params,
            encoder,
            config,
        })
    }

    fn run(&self, params: &ParamMap, images: &Tensor, features: bool) -> Tensor {
        let n = images.shape()[0];
        let mut rows = Vec::new();
        for start in (0..n).step_by(EMBED_CHUNK) {
            let idx: Vec<Tensor> = (start..(start + EMBED_CHUNK).min(n)).map(|i| images.batch_item(i)).collect();
            let g = Graph::new();
            let b = Binder::frozen(&g, params);
            let x = g.constant(Tensor::stack_batch(&idx));
            let out = if features {
                self.encoder.features(&b, x)
            } else {
                self.encoder.embed(&b, x)
            };
            rows.push((*out.value()).clone());
        }
        Tensor::stack_batch(&rows)
    }

    /// Pooled backbone features `[B, F]` of the query encoder.
    pub fn features(&self, images: &Tensor) -> Tensor {
        self.run(&self.params, images, true)
    }

    /// Unit-norm query embeddings `[B, d]`.
    pub fn embed(&self, images: &Tensor) -> Tensor {
        self.run(&self.params, images, false)
    }

    /// Unit-norm key embeddings from the momentum encoder.
    pub fn momentum_embed(&self, images: &Tensor) -> Tensor {
        self.run(&self.momentum, images, false)
    }

    /// Query from the first view, key from the second.
    pub fn embed_pair(&self, view_q: &Tensor, view_k: &Tensor) -> (Tensor, Tensor) {
        (self.embed(view_q), self.momentum_embed(view_k))
    }

    /// Differentiable query embedding of `x` with the encoder held fixed.
    pub fn query<'g>(&self, graph: &'g Graph, x: Var<'g>) -> Var<'g> {
        let b = Binder::frozen(graph, &self.params);
        self.encoder.embed(&b, x)
    }

    pub fn dataset_features(&self, images: &[Tensor]) -> Tensor {
        self.features(&Tensor::stack_batch(images))
    }

    /// Digest of both encoders' parameters.
    pub fn digest(&self) -> [u8; 32] {
        let mut all = self.params.clone();
        for (k, v) in &self.momentum {
            all.insert(format!("momentum.{k}"), v.clone());
        }
        param_digest(&all)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = self.params.clone();
        for (k, v) in &self.momentum {
            tensors.insert(format!("momentum.{k}"), v.clone());
        }
        tensors.insert("queue".into(), self.queue.to_tensor());
        Checkpoint {
            kind: CheckpointKind::Proxy,
            stage: 1,
            config: self.config.pairs(),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let ckpt = ckpt.expect_kind(CheckpointKind::Proxy)?;
        let mut config = ProxyConfig::default();
        for (k, v) in &ckpt.config {
            config.set(k, v)?;
        }
        let mut proxy = Self::new(config, 0)?;
        let mut tensors = ckpt.tensors;
        let queue = tensors
            .remove("queue")
            .ok_or_else(|| RdcError::Version("proxy checkpoint lacks queue".into()))?;
        for name in proxy.params.keys().cloned().collect::<Vec<_>>() {
            let p = tensors
                .remove(&name)
                .ok_or_else(|| RdcError::Version(format!("proxy checkpoint lacks {name}")))?;
            let m = tensors
                .remove(&format!("momentum.{name}"))
                .ok_or_else(|| RdcError::Version(format!("proxy checkpoint lacks momentum.{name}")))?;
            if p.shape() != proxy.params[&name].shape() || m.shape() != p.shape() {
                return Err(RdcError::Version(format!("shape mismatch for {name}")));
            }
            proxy.params.insert(name.clone(), p);
            proxy.momentum.insert(name, m);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(RdcError::Version(format!("unexpected proxy tensor {extra}")));
        }
        if queue.shape().len() != 2 || queue.shape()[1] != proxy.config.dim {
            return Err(RdcError::Version("queue width does not match embedding size".into()));
        }
        proxy.queue = NegativeQueue::from_tensor(proxy.config.queue_size, &queue);
        Ok(proxy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxyTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub augmentation: Augmentation,
}

impl Default for ProxyTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 32,
            lr: 1e-3,
            seed: 0,
            augmentation: Augmentation::default(),
        }
    }
}

impl ProxyTrainConfig {
    pub fn toy() -> Self {
        Self {
            steps: 400,
            ..Self::default()
        }
    }
}

/// Per-step InfoNCE values from pretraining.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyLogRow {
    pub step: usize,
    pub loss: f64,
    pub queue_len: usize,
}

/// MoCo-style pretraining: query encoder by Adam, key encoder by EMA, keys
/// enqueued after each update.
pub fn pretrain_proxy(
    config: ProxyConfig,
    train: &ProxyTrainConfig,
    data: &Dataset,
) -> Result<(CognitionProxy, Vec<ProxyLogRow>)> {
    if data.is_empty() {
        return Err(RdcError::Config("empty dataset".into()));
    }
    let mut proxy = CognitionProxy::new(config, train.seed)?;
    let mut sampler = BatchSampler::new(data.len(), train.seed ^ 0x5EED);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed.wrapping_add(1));
    let mut opt = Adam::new(train.lr);
    let mut log = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let x = data.batch(&sampler.next_batch(train.batch));
        let view_q = train.augmentation.apply(&x, &mut rng);
        let view_k = train.augmentation.apply(&x, &mut rng);
        let keys = proxy.momentum_embed(&view_k);
        let negatives = proxy.queue.to_tensor();
        let (loss, grads) = {
            let g = Graph::new();
            let b = Binder::new(&g, &proxy.params, |_| true);
            let q = proxy.encoder.embed(&b, g.constant(view_q));
            let loss = q.info_nce(&keys, &negatives, proxy.config.tau);
            (loss.value().item(), b.collect(&g.backward(loss)))
        };
        if !loss.is_finite() {
            return Err(RdcError::NonFinite { term: "info_nce" });
        }
        opt.step(&mut proxy.params, &grads);
        let mu = proxy.config.momentum;
        for (name, m) in proxy.momentum.iter_mut() {
            let p = &proxy.params[name];
            for (mv, pv) in m.data_mut().iter_mut().zip(p.data()) {
                *mv = mu * *mv + (1.0 - mu) * pv;
            }
        }
        proxy.queue.push(&keys);
        log.push(ProxyLogRow {
            step,
            loss,
            queue_len: proxy.queue.len(),
        });
    }
    Ok((proxy, log))
}

/// Probe accuracy on images embedded by the frozen proxy.
pub fn probe_accuracy(proxy: &CognitionProxy, probe: &LinearProbe, images: &[Tensor], labels: &[usize]) -> Result<f64> {
    if images.len() != labels.len() {
        return Err(RdcError::Config(format!("{} images for {} labels", images.len(), labels.len())));
    }
    if images.is_empty() {
        return Ok(0.0);
    }
    accuracy(&probe.logits(&proxy.dataset_features(images))?, labels)
}

/// Trains a probe on proxy features of `images`.
pub fn fit_probe(
    proxy: &CognitionProxy,
    images: &[Tensor],
    labels: &[usize],
    classes: usize,
    cfg: ProbeTrainConfig,
) -> Result<LinearProbe> {
    LinearProbe::train(&proxy.dataset_features(images), labels, classes, cfg)
}

impl LinearProbe {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::Probe,
            stage: 0,
            config: vec![
                ("classes".into(), self.classes.to_string()),
                ("features".into(), self.features.to_string()),
            ],
            tensors: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let ckpt = ckpt.expect_kind(CheckpointKind::Probe)?;
        let w = ckpt
            .tensors
            .get("probe.weight")
            .ok_or_else(|| RdcError::Version("probe checkpoint lacks weight".into()))?;
        let (classes, features) = (w.shape()[0], w.shape()[1]);
        let mut probe = LinearProbe::zeros(features, classes);
        for (k, v) in ckpt.tensors {
            if probe.params.get(&k).map(|t| t.shape()) != Some(v.shape()) {
                return Err(RdcError::Version(format!("unexpected probe tensor {k}")));
            }
            probe.params.insert(k, v);
        }
        Ok(probe)
    }
}
