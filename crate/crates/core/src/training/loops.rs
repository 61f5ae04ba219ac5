use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_frozen, primary_pass, rd_loss, stage1_loss, stage2_group, stage2_loss, Stage1Inputs, DISTORTION_SCALE};
use crate::autodiff::{Binder, Graph};
use crate::codec::{CodecModel, ParamGroup, Stage, ANCHORS};
use crate::cognition::{Augmentation, BatchSampler, CognitionProxy, Dataset};
use crate::config::{parse_list, parse_value, render_list};
use crate::error::{RdcError, Result};
use crate::gain::{QuantMode, AUXILIARY_LAMBDAS, PRIMARY_LAMBDAS, WARMUP_LAMBDAS};
use crate::nn::Adam;
use crate::tensor::Tensor;

/// A step counts towards divergence when its loss exceeds this multiple of
/// the first step's loss.
pub const DIVERGENCE_FACTOR: f64 = 1e3;
pub const DIVERGENCE_PATIENCE: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Config {
    pub lambdas: Vec<f64>,
    pub lambda_local: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Learning-rate multiplier for gain vectors.
    pub gain_lr_scale: f64,
    pub seed: u64,
    pub distortion_scale: f64,
    pub augmentation: Augmentation,
    /// Rate-distortion steps run before the cognition loss on a fresh model.
    pub warmup_steps: usize,
    pub warmup_lr: f64,
    pub warmup_lambdas: Vec<f64>,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            lambdas: PRIMARY_LAMBDAS.to_vec(),
            lambda_local: 1e-5,
            steps: 2000,
            batch: 8,
            lr: 1e-4,
            gain_lr_scale: 1.0,
            seed: 0,
            distortion_scale: DISTORTION_SCALE,
            augmentation: Augmentation::default(),
            warmup_steps: 2000,
            warmup_lr: 1e-4,
            warmup_lambdas: WARMUP_LAMBDAS.to_vec(),
        }
    }
}

impl Stage1Config {
    /// Desk-scale schedule: a fast rate-distortion warm-up, then the
    /// cognition phase at the default rate.
    pub fn toy() -> Self {
        Self {
            steps: 1000,
            gain_lr_scale: 20.0,
            warmup_steps: 3000,
            warmup_lr: 2e-3,
            ..Self::default()
        }
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("stage1_lambdas".into(), render_list(&self.lambdas)),
            ("lambda_local".into(), self.lambda_local.to_string()),
            ("stage1_steps".into(), self.steps.to_string()),
            ("stage1_batch".into(), self.batch.to_string()),
            ("stage1_lr".into(), self.lr.to_string()),
            ("stage1_gain_lr_scale".into(), self.gain_lr_scale.to_string()),
            ("distortion_scale".into(), self.distortion_scale.to_string()),
            ("warmup_steps".into(), self.warmup_steps.to_string()),
            ("warmup_lr".into(), self.warmup_lr.to_string()),
            ("warmup_lambdas".into(), render_list(&self.warmup_lambdas)),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "stage1_lambdas" => self.lambdas = parse_list(key, value)?,
            "lambda_local" => self.lambda_local = parse_value(key, value)?,
            "stage1_steps" => self.steps = parse_value(key, value)?,
            "stage1_batch" => self.batch = parse_value(key, value)?,
            "stage1_lr" => self.lr = parse_value(key, value)?,
            "stage1_gain_lr_scale" => self.gain_lr_scale = parse_value(key, value)?,
            "distortion_scale" => self.distortion_scale = parse_value(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_value(key, value)?,
            "warmup_lr" => self.warmup_lr = parse_value(key, value)?,
            "warmup_lambdas" => self.warmup_lambdas = parse_list(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn validate(&self) -> Result<()> {
        if self.lambdas.len() != ANCHORS {
            return Err(RdcError::Config(format!("need {ANCHORS} stage-I lambdas, got {}", self.lambdas.len())));
        }
        if self.warmup_lambdas.len() != ANCHORS {
            return Err(RdcError::Config(format!(
                "need {ANCHORS} warm-up lambdas, got {}",
                self.warmup_lambdas.len()
            )));
        }
        if self.batch == 0 {
            return Err(RdcError::Config("batch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Config {
    pub lambdas: Vec<f64>,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub gain_lr_scale: f64,
    pub seed: u64,
    pub distortion_scale: f64,
    /// `false` trains the residual net from `ŷ` without coding `y - ŷ`.
    pub scalable_stream: bool,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            lambdas: AUXILIARY_LAMBDAS.to_vec(),
            steps: 2000,
            batch: 8,
            lr: 1e-4,
            gain_lr_scale: 1.0,
            seed: 0,
            distortion_scale: DISTORTION_SCALE,
            scalable_stream: true,
        }
    }
}

impl Stage2Config {
    pub fn toy() -> Self {
        Self {
            steps: 1000,
            lr: 1e-3,
            gain_lr_scale: 20.0,
            ..Self::default()
        }
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("stage2_lambdas".into(), render_list(&self.lambdas)),
            ("stage2_steps".into(), self.steps.to_string()),
            ("stage2_batch".into(), self.batch.to_string()),
            ("stage2_lr".into(), self.lr.to_string()),
            ("stage2_gain_lr_scale".into(), self.gain_lr_scale.to_string()),
            ("scalable_stream".into(), self.scalable_stream.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "stage2_lambdas" => self.lambdas = parse_list(key, value)?,
            "stage2_steps" => self.steps = parse_value(key, value)?,
            "stage2_batch" => self.batch = parse_value(key, value)?,
            "stage2_lr" => self.lr = parse_value(key, value)?,
            "stage2_gain_lr_scale" => self.gain_lr_scale = parse_value(key, value)?,
            "scalable_stream" => self.scalable_stream = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn validate(&self) -> Result<()> {
        if self.lambdas.len() != ANCHORS {
            return Err(RdcError::Config(format!("need {ANCHORS} stage-II lambdas, got {}", self.lambdas.len())));
        }
        if self.batch == 0 {
            return Err(RdcError::Config("batch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1LogRow {
    /// `warmup` or `cognition`.
    pub phase: &'static str,
    pub step: usize,
    pub anchor: usize,
    pub lambda_n: f64,
    pub rate_y: f64,
    pub rate_z: f64,
    pub contrastive: f64,
    pub local: f64,
    pub total: f64,
}

impl Stage1LogRow {
    pub const HEADER: &'static str = "phase,step,anchor,lambda,rate_y,rate_z,contrastive,local_mse,total";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.phase,
            self.step, self.anchor, self.lambda_n, self.rate_y, self.rate_z, self.contrastive, self.local, self.total
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2LogRow {
    pub step: usize,
    pub primary_anchor: usize,
    pub aux_anchor: usize,
    pub lambda_m: f64,
    pub rate_s: f64,
    pub mse: f64,
    pub total: f64,
}

impl Stage2LogRow {
    pub const HEADER: &'static str = "step,primary_anchor,aux_anchor,lambda_m,rate_s,mse,total";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.primary_anchor, self.aux_anchor, self.lambda_m, self.rate_s, self.mse, self.total
        )
    }
}

pub fn write_csv(path: impl AsRef<Path>, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

struct DivergenceDetector {
    reference: Option<f64>,
    run: usize,
}

impl DivergenceDetector {
    fn new() -> Self {
        Self { reference: None, run: 0 }
    }

    fn observe(&mut self, step: usize, loss: f64) -> Result<()> {
        let reference = *self.reference.get_or_insert(loss.abs());
        if loss > DIVERGENCE_FACTOR * reference {
            self.run += 1;
            if self.run >= DIVERGENCE_PATIENCE {
                return Err(RdcError::Diverged { step });
            }
        } else {
            self.run = 0;
        }
        Ok(())
    }
}

/// Rate-distortion training of the primary branch on a fresh model.
/// The `contrastive` column of the log holds the MSE.
pub fn train_warmup(mut model: CodecModel, data: &Dataset, cfg: &Stage1Config) -> Result<(CodecModel, Vec<Stage1LogRow>)> {
    cfg.validate()?;
    if model.stage != Stage::Initialized {
        return Err(RdcError::Version("warm-up needs a freshly initialised model".into()));
    }
    if data.is_empty() {
        return Err(RdcError::Config("empty dataset".into()));
    }
    let mut sampler = BatchSampler::new(data.len(), cfg.seed ^ 0xD157);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD157);
    let mut opt = Adam::new(cfg.warmup_lr).scaled("gain.", cfg.gain_lr_scale);
    let mut detector = DivergenceDetector::new();
    let trainable = |name: &str| ParamGroup::of(name).is_some_and(ParamGroup::primary);
    let mut log = Vec::with_capacity(cfg.warmup_steps);
    for step in 0..cfg.warmup_steps {
        let x = data.batch(&sampler.next_batch(cfg.batch));
        let anchor = rng.gen_range(0..ANCHORS);
        let lambda = cfg.warmup_lambdas[anchor];
        let (terms, grads) = {
            let g = Graph::new();
            let b = Binder::new(&g, &model.params, trainable);
            let (loss, terms) = rd_loss(&model, &b, &x, anchor, lambda, cfg.distortion_scale, &mut rng)?;
            (terms, b.collect(&g.backward(loss)))
        };
        check_frozen(&grads, ParamGroup::primary)?;
        opt.step(&mut model.params, &grads);
        detector.observe(step, terms.total)?;
        log::debug!("warmup step {step} anchor {anchor} rate {:.4} mse {:.5}", terms.rate_y + terms.rate_z, terms.mse);
        log.push(Stage1LogRow {
            phase: "warmup",
            step,
            anchor,
            lambda_n: lambda,
            rate_y: terms.rate_y,
            rate_z: terms.rate_z,
            contrastive: terms.mse,
            local: 0.0,
            total: terms.total,
        });
    }
    model.stage = Stage::Warmed;
    Ok((model, log))
}

/// First stage: transforms, hyper prior and the `y`/`z` gains, with the
/// proxy encoder frozen. A fresh model is warmed up first.
pub fn train_stage1(
    mut model: CodecModel,
    proxy: &CognitionProxy,
    data: &Dataset,
    cfg: &Stage1Config,
) -> Result<(CodecModel, Vec<Stage1LogRow>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(RdcError::Config("empty dataset".into()));
    }
    let mut log = Vec::with_capacity(cfg.warmup_steps + cfg.steps);
    if model.stage == Stage::Initialized && cfg.warmup_steps > 0 {
        let (warmed, warm_log) = train_warmup(model, data, cfg)?;
        model = warmed;
        log.extend(warm_log);
    }
    let mut sampler = BatchSampler::new(data.len(), cfg.seed ^ 0x5EED);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xA06));
    let mut queue = proxy.queue.clone();
    let mut opt = Adam::new(cfg.lr).scaled("gain.", cfg.gain_lr_scale);
    let mut detector = DivergenceDetector::new();
    let trainable = |name: &str| ParamGroup::of(name).is_some_and(ParamGroup::primary);
    for step in 0..cfg.steps {
        let x = data.batch(&sampler.next_batch(cfg.batch));
        let anchor = rng.gen_range(0..ANCHORS);
        let keys = proxy.momentum_embed(&cfg.augmentation.apply(&x, &mut aug_rng));
        let negatives = queue.to_tensor();
        let inputs = Stage1Inputs {
            proxy,
            keys: &keys,
            negatives: &negatives,
            anchor,
            lambda_n: cfg.lambdas[anchor],
            lambda_local: cfg.lambda_local,
            distortion_scale: cfg.distortion_scale,
        };
        let (terms, grads) = {
            let g = Graph::new();
            let b = Binder::new(&g, &model.params, trainable);
            let (loss, terms) = stage1_loss(&model, &b, &x, &inputs, &mut rng)?;
            (terms, b.collect(&g.backward(loss)))
        };
        check_frozen(&grads, ParamGroup::primary)?;
        opt.step(&mut model.params, &grads);
        queue.push(&keys);
        detector.observe(step, terms.total)?;
        log::debug!(
            "stage1 step {step} anchor {anchor} rate_y {:.4} rate_z {:.4} nce {:.4} local {:.3e}",
            terms.rate_y,
            terms.rate_z,
            terms.contrastive,
            terms.local
        );
        log.push(Stage1LogRow {
            phase: "cognition",
            step,
            anchor,
            lambda_n: cfg.lambdas[anchor],
            rate_y: terms.rate_y,
            rate_z: terms.rate_z,
            contrastive: terms.contrastive,
            local: terms.local,
            total: terms.total,
        });
    }
    model.stage = Stage::Primary;
    Ok((model, log))
}

/// Second stage: scalable transform, residual net, auxiliary prior and
/// gains; the primary branch stays bitwise fixed.
pub fn train_stage2(mut model: CodecModel, data: &Dataset, cfg: &Stage2Config) -> Result<(CodecModel, Vec<Stage2LogRow>)> {
    cfg.validate()?;
    if matches!(model.stage, Stage::Initialized | Stage::Warmed) {
        return Err(RdcError::Version("stage II needs a model trained by stage I".into()));
    }
    if data.is_empty() {
        return Err(RdcError::Config("empty dataset".into()));
    }
    let mut sampler = BatchSampler::new(data.len(), cfg.seed ^ 0x5EED);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr).scaled("gain.", cfg.gain_lr_scale);
    let mut detector = DivergenceDetector::new();
    let trainable = |name: &str| ParamGroup::of(name).is_some_and(stage2_group);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let x = data.batch(&sampler.next_batch(cfg.batch));
        let primary_anchor = rng.gen_range(0..ANCHORS);
        let aux_anchor = rng.gen_range(0..ANCHORS);
        let lambda_m = cfg.lambdas[aux_anchor];
        let (terms, grads) = {
            let g = Graph::new();
            let b = Binder::new(&g, &model.params, trainable);
            let (loss, terms) = stage2_loss(
                &model,
                &b,
                &x,
                primary_anchor,
                aux_anchor,
                lambda_m,
                cfg.distortion_scale,
                cfg.scalable_stream,
                &mut rng,
            )?;
            (terms, b.collect(&g.backward(loss)))
        };
        check_frozen(&grads, stage2_group)?;
        opt.step(&mut model.params, &grads);
        detector.observe(step, terms.total)?;
        log::debug!(
            "stage2 step {step} anchors {primary_anchor}/{aux_anchor} rate_s {:.4} mse {:.5}",
            terms.rate_s,
            terms.mse
        );
        log.push(Stage2LogRow {
            step,
            primary_anchor,
            aux_anchor,
            lambda_m,
            rate_s: terms.rate_s,
            mse: terms.mse,
            total: terms.total,
        });
    }
    model.stage = Stage::Complete;
    Ok((model, log))
}

/// Mean estimated bits per pixel of `images` at every gain anchor, with
/// rounded latents.
pub fn anchor_rates(model: &CodecModel, images: &[Tensor]) -> Result<Vec<f64>> {
    let mut rates = vec![0.0; ANCHORS];
    if images.is_empty() {
        return Ok(rates);
    }
    for (n, rate) in rates.iter_mut().enumerate() {
        let mut bits = 0.0;
        let mut pixels = 0.0;
        for chunk in images.chunks(16) {
            let x = Tensor::stack_batch(chunk);
            let (b, _, h, w) = x.dims4();
            let g = Graph::new();
            let binder = Binder::frozen(&g, &model.params);
            let pass = primary_pass(model, &binder, g.constant(x), n, QuantMode::Round, None)?;
            bits += pass.bits_y.value().item() + pass.bits_z.value().item();
            pixels += (b * h * w) as f64;
        }
        *rate = bits / pixels;
    }
    Ok(rates)
}
