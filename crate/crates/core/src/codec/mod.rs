//! Neural transforms of the primary and auxiliary branches.

mod auxiliary;
mod transforms;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use auxiliary::AuxiliaryStack;
pub use transforms::{TransformStack, SYNTHESIS_BIAS_INIT};

use crate::autodiff::{Binder, Graph, ParamMap};
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::config::parse_value;
use crate::entropy::{FactorizedPrior, SIGMA_MIN};
use crate::error::{RdcError, Result};
use crate::gain::{GainKind, GainSet, AUXILIARY_LAMBDAS, PRIMARY_LAMBDAS};
use crate::tensor::Tensor;

/// Spatial multiple every coded image must have.
pub const PAD_MULTIPLE: usize = 64;
pub const ANCHORS: usize = PRIMARY_LAMBDAS.len();

#[derive(Clone, Debug, PartialEq)]
pub struct CodecConfig {
    pub hidden: usize,
    pub latent_channels: usize,
    pub hyper_channels: usize,
    pub aux_channels: usize,
    pub aux_hidden: usize,
    pub residual_width: usize,
    pub sigma_min: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            latent_channels: 96,
            hyper_channels: 48,
            aux_channels: 64,
            aux_hidden: 32,
            residual_width: 32,
            sigma_min: SIGMA_MIN,
        }
    }
}

impl CodecConfig {
    /// Reduced widths for quick experiments and tests.
    pub fn toy() -> Self {
        Self {
            hidden: 16,
            latent_channels: 24,
            hyper_channels: 12,
            aux_channels: 12,
            aux_hidden: 12,
            residual_width: 12,
            sigma_min: SIGMA_MIN,
        }
    }

    pub const KEYS: [&'static str; 8] = [
        "hidden",
        "latent_channels",
        "hyper_channels",
        "aux_channels",
        "aux_hidden",
        "residual_width",
        "sigma_min",
        "anchors",
    ];

    pub fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("hidden".into(), self.hidden.to_string()),
            ("latent_channels".into(), self.latent_channels.to_string()),
            ("hyper_channels".into(), self.hyper_channels.to_string()),
            ("aux_channels".into(), self.aux_channels.to_string()),
            ("aux_hidden".into(), self.aux_hidden.to_string()),
            ("residual_width".into(), self.residual_width.to_string()),
            ("sigma_min".into(), self.sigma_min.to_string()),
            ("anchors".into(), ANCHORS.to_string()),
        ]
    }

    /// Applies one key; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "hidden" => self.hidden = parse_value(key, value)?,
            "latent_channels" => self.latent_channels = parse_value(key, value)?,
            "hyper_channels" => self.hyper_channels = parse_value(key, value)?,
            "aux_channels" => self.aux_channels = parse_value(key, value)?,
            "aux_hidden" => self.aux_hidden = parse_value(key, value)?,
            "residual_width" => self.residual_width = parse_value(key, value)?,
            "sigma_min" => self.sigma_min = parse_value(key, value)?,
            "anchors" => {
                let n: usize = parse_value(key, value)?;
                if n != ANCHORS {
                    return Err(RdcError::Config(format!("anchors must be {ANCHORS}, got {n}")));
                }
            }
            _ => return Err(RdcError::Config(format!("unknown codec key `{key}`"))),
        }
        Ok(())
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.hidden,
            self.latent_channels,
            self.hyper_channels,
            self.aux_channels,
            self.aux_hidden,
            self.residual_width,
        ];
        if widths.contains(&0) {
            return Err(RdcError::Config("channel widths must be positive".into()));
        }
        if !(self.sigma_min > 0.0) {
            return Err(RdcError::Config(format!("sigma_min must be positive, got {}", self.sigma_min)));
        }
        Ok(())
    }
}

/// Training progress recorded with a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Initialized = 0,
    Primary = 1,
    Complete = 2,
    /// Rate-distortion warm-up done, cognition stage not yet run.
    Warmed = 3,
}

impl Stage {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Initialized),
            1 => Some(Self::Primary),
            2 => Some(Self::Complete),
            3 => Some(Self::Warmed),
            _ => None,
        }
    }
}

/// Which part of the model a named parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Transform,
    Auxiliary,
    HyperPrior,
    AuxPrior,
    LatentGain,
    HyperGain,
    AuxGain,
}

impl ParamGroup {
    pub fn of(name: &str) -> Option<Self> {
        let group = match name.split('.').next()? {
            "g_a" | "g_s" | "h_a" | "h_s" => Self::Transform,
            "aux" => Self::Auxiliary,
            "prior" if name.starts_with("prior.z.") => Self::HyperPrior,
            "prior" if name.starts_with("prior.s.") => Self::AuxPrior,
            "gain" if name.starts_with("gain.y.") => Self::LatentGain,
            "gain" if name.starts_with("gain.z.") => Self::HyperGain,
            "gain" if name.starts_with("gain.s.") => Self::AuxGain,
            _ => return None,
        };
        Some(group)
    }

    /// Parameters updated by the first training stage.
    pub fn primary(self) -> bool {
        matches!(self, Self::Transform | Self::HyperPrior | Self::LatentGain | Self::HyperGain)
    }
}

#[derive(Clone, Debug)]
pub struct CodecModel {
    pub config: CodecConfig,
    pub params: ParamMap,
    pub stage: Stage,
    transforms: TransformStack,
    auxiliary: AuxiliaryStack,
    hyper_prior: FactorizedPrior,
    aux_prior: FactorizedPrior,
}

impl CodecModel {
    pub fn new(config: CodecConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::skeleton(config);
        let mut params = ParamMap::new();
        model.transforms.init(&mut params, &mut rng);
        model.auxiliary.init(&mut params, &mut rng);
        model.hyper_prior.init(&mut params, &mut rng);
        model.aux_prior.init(&mut params, &mut rng);
        GainSet::init(&mut params, GainKind::Latent, model.config.latent_channels, ANCHORS);
        GainSet::init(&mut params, GainKind::Hyper, model.config.hyper_channels, ANCHORS);
        GainSet::init(&mut params, GainKind::Auxiliary, model.config.aux_channels, ANCHORS);
        model.params = params;
        model
    }

    fn skeleton(config: CodecConfig) -> Self {
        Self {
            transforms: TransformStack::new(&config),
            auxiliary: AuxiliaryStack::new(&config),
            hyper_prior: FactorizedPrior::new("prior.z", config.hyper_channels),
            aux_prior: FactorizedPrior::new("prior.s", config.aux_channels),
            params: ParamMap::new(),
            stage: Stage::Initialized,
            config,
        }
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_parts(config: CodecConfig, params: ParamMap, stage: Stage) -> Result<Self> {
        config.validate()?;
        let reference = Self::new(config, 0);
        for (name, t) in &reference.params {
            let got = params
                .get(name)
                .ok_or_else(|| RdcError::Version(format!("checkpoint lacks parameter {name}")))?;
            if got.shape() != t.shape() {
                return Err(RdcError::Version(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if let Some(extra) = params.keys().find(|k| !reference.params.contains_key(*k)) {
            return Err(RdcError::Version(format!("unexpected parameter {extra}")));
        }
        let mut model = reference;
        model.params = params;
        model.stage = stage;
        Ok(model)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::Codec,
            stage: self.stage as u8,
            config: self.config.pairs(),
            tensors: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let ckpt = ckpt.expect_kind(CheckpointKind::Codec)?;
        let stage = Stage::from_code(ckpt.stage)
            .ok_or_else(|| RdcError::Version(format!("unknown training stage {}", ckpt.stage)))?;
        Self::from_parts(CodecConfig::from_pairs(&ckpt.config)?, ckpt.tensors, stage)
    }

    pub fn transforms(&self) -> &TransformStack {
        &self.transforms
    }

    pub fn auxiliary(&self) -> &AuxiliaryStack {
        &self.auxiliary
    }

    pub fn hyper_prior(&self) -> &FactorizedPrior {
        &self.hyper_prior
    }

    pub fn aux_prior(&self) -> &FactorizedPrior {
        &self.aux_prior
    }

    pub fn gains(&self, kind: GainKind) -> GainSet {
        let lambdas: &[f64] = match kind {
            GainKind::Auxiliary => &AUXILIARY_LAMBDAS,
            _ => &PRIMARY_LAMBDAS,
        };
        GainSet::from_params(&self.params, kind, lambdas).expect("gain parameters present")
    }

    pub fn transform_param_count(&self) -> usize {
        self.transforms.param_count()
    }

    pub fn auxiliary_param_count(&self) -> usize {
        self.auxiliary.param_count()
    }

    pub fn group_param_count(&self, group: ParamGroup) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| ParamGroup::of(k) == Some(group))
            .map(|(_, t)| t.len())
            .sum()
    }

    fn check_channels(&self, what: &str, t: &Tensor, channels: usize) -> Result<(usize, usize, usize, usize)> {
        if t.shape().len() != 4 {
            return Err(RdcError::Config(format!("{what} must be 4-D, got {:?}", t.shape())));
        }
        let dims = t.dims4();
        if dims.1 != channels {
            return Err(RdcError::Config(format!("{what} has {} channels, expected {channels}", dims.1)));
        }
        Ok(dims)
    }

    /// `y = g_a(x)` and `z = h_a(y·G_y)` (or `h_a(y)` without a gain).
    pub fn analyze(&self, x: &Tensor, gain_y: Option<&[f64]>) -> Result<(Tensor, Tensor)> {
        let (_, _, h, w) = self.check_channels("image", x, 3)?;
        if h % PAD_MULTIPLE != 0 || w % PAD_MULTIPLE != 0 {
            return Err(RdcError::PaddingRequired {
                height: h,
                width: w,
                multiple: PAD_MULTIPLE,
            });
        }
        let g = Graph::new();
        let b = Binder::frozen(&g, &self.params);
        let y = self.transforms.analysis(&b, g.constant(x.clone()));
        let scaled = match gain_y {
            Some(gain) => {
                if gain.len() != self.config.latent_channels {
                    return Err(RdcError::Config(format!("gain length {}", gain.len())));
                }
                y.mul_channel(g.constant(Tensor::new(&[gain.len()], gain.to_vec())))
            }
            None => y,
        };
        let z = self.transforms.hyper_analysis(&b, scaled);
        Ok(((*y.value()).clone(), (*z.value()).clone()))
    }

    /// `x̂ = g_s(ŷ)`, unclipped, with the priors `f1..f3`.
    pub fn synthesize(&self, y_hat: &Tensor) -> Result<(Tensor, [Tensor; 3])> {
        self.check_channels("latent", y_hat, self.config.latent_channels)?;
        let g = Graph::new();
        let b = Binder::frozen(&g, &self.params);
        let (x, f) = self.transforms.synthesis(&b, g.constant(y_hat.clone()));
        let priors = f.map(|v| (*v.value()).clone());
        Ok(((*x.value()).clone(), priors))
    }

    pub fn hyper_decode(&self, z_hat: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_channels("hyper-latent", z_hat, self.config.hyper_channels)?;
        let g = Graph::new();
        let b = Binder::frozen(&g, &self.params);
        let (mu, sigma) = self.transforms.hyper_synthesis(&b, g.constant(z_hat.clone()));
        Ok(((*mu.value()).clone(), (*sigma.value()).clone()))
    }

    pub fn scalable_encode(&self, err: &Tensor) -> Result<Tensor> {
        self.check_channels("latent error", err, self.config.latent_channels)?;
        let g = Graph::new();
        let b = Binder::frozen(&g, &self.params);
        Ok((*self.auxiliary.scalable_encode(&b, g.constant(err.clone())).value()).clone())
    }

    /// Decoded latent error; `ŷ₂ = ŷ + err_hat`.
    pub fn scalable_decode(&self, s_hat: &Tensor) -> Result<Tensor> {
        self.check_channels("auxiliary latent", s_hat, self.config.aux_channels)?;
        let g = Graph::new();
        let b = Binder::frozen(&g, &self.params);
        Ok((*self.auxiliary.scalable_decode(&b, g.constant(s_hat.clone())).value()).clone())
    }

    pub fn reconstruct_residual(&self, y2_hat: &Tensor, priors: &[Tensor; 3]) -> Result<Tensor> {
        let (bsz, _, h, w) = self.check_channels("latent", y2_hat, self.config.latent_channels)?;
        for (i, f) in priors.iter().enumerate() {
            let (pb, _, ph, pw) = self.check_channels("prior", f, self.config.hidden)?;
            let scale = 2 << i;
            if pb != bsz || ph != h * scale || pw != w * scale {
                return Err(RdcError::Config(format!(
                    "prior f{} is {ph}x{pw}, expected {}x{}",
                    i + 1,
                    h * scale,
                    w * scale
                )));
            }
        }
        let g = Graph::new();
        let b = Binder::frozen(&g, &self.params);
        let f = [
            g.constant(priors[0].clone()),
            g.constant(priors[1].clone()),
            g.constant(priors[2].clone()),
        ];
        Ok((*self.auxiliary.residual(&b, g.constant(y2_hat.clone()), f).value()).clone())
    }
}
