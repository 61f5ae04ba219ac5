use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Binder, Graph, ParamMap};
use crate::error::{RdcError, Result};
use crate::nn::Adam;
use crate::tensor::Tensor;

/// Affine map from frozen encoder features to class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    pub params: ParamMap,
    pub classes: usize,
    pub features: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            lr: 0.02,
            seed: 0,
        }
    }
}

impl LinearProbe {
    pub fn zeros(features: usize, classes: usize) -> Self {
        let mut params = ParamMap::new();
        params.insert("probe.weight".into(), Tensor::zeros(&[classes, features]));
        params.insert("probe.bias".into(), Tensor::zeros(&[classes]));
        Self {
            params,
            classes,
            features,
        }
    }

    /// Full-batch Adam on softmax cross-entropy over `[N, F]` features.
    pub fn train(features: &Tensor, labels: &[usize], classes: usize, cfg: ProbeTrainConfig) -> Result<Self> {
        let (n, f) = (features.shape()[0], features.shape()[1]);
        if labels.len() != n {
            return Err(RdcError::Config(format!("{} labels for {n} feature rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(RdcError::Config(format!("label {bad} outside {classes} classes")));
        }
        let mut probe = Self::zeros(f, classes);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let bound = (1.0 / f as f64).sqrt();
        for v in probe.params.get_mut("probe.weight").expect("weight").data_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        let mut opt = Adam::new(cfg.lr);
        for _ in 0..cfg.steps {
            let grads = {
                let g = Graph::new();
                let b = Binder::new(&g, &probe.params, |_| true);
                let logits = g.constant(features.clone()).linear(b.get("probe.weight"), b.get("probe.bias"));
                b.collect(&g.backward(logits.cross_entropy(labels)))
            };
            opt.step(&mut probe.params, &grads);
        }
        Ok(probe)
    }

    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        if features.shape().len() != 2 || features.shape()[1] != self.features {
            return Err(RdcError::Config(format!(
                "probe expects [N, {}] features, got {:?}",
                self.features,
                features.shape()
            )));
        }
        let g = Graph::new();
        let b = Binder::frozen(&g, &self.params);
        let out = g.constant(features.clone()).linear(b.get("probe.weight"), b.get("probe.bias"));
        Ok((*out.value()).clone())
    }
}

/// Top-1 accuracy of `[N, classes]` logits; ties resolve to the lowest index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.shape().len() != 2 || logits.shape()[0] != labels.len() {
        return Err(RdcError::Config(format!(
            "logits {:?} do not match {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let classes = logits.shape()[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(RdcError::Config(format!("label {bad} outside {classes} logit columns")));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let correct = logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &l)| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best == l
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}
