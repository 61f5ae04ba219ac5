use std::fs;
use std::path::Path;

use rdc_core::codec::CodecConfig;
use rdc_core::cognition::{ProbeTrainConfig, ProxyConfig, ProxyTrainConfig};
use rdc_core::config::{parse_list, parse_pairs, parse_value, render_list, render_pairs};
use rdc_core::error::{RdcError, Result};
use rdc_core::training::{Stage1Config, Stage2Config};

pub const SEED_ENV: &str = "RDC_SEED";

/// Every tunable of every command, with defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub profile: String,
    pub seed: u64,
    pub codec: CodecConfig,
    pub proxy: ProxyConfig,
    pub proxy_train: ProxyTrainConfig,
    pub probe: ProbeTrainConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub sweep_alphas: Vec<f64>,
    pub sweep_betas: Vec<f64>,
    pub sweep_alpha_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profile: "default".into(),
            seed: 0,
            codec: CodecConfig::default(),
            proxy: ProxyConfig::default(),
            proxy_train: ProxyTrainConfig::default(),
            probe: ProbeTrainConfig::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            sweep_alphas: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            sweep_betas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            sweep_alpha_s: 0.0,
        }
    }
}

impl RunConfig {
    /// Desk-scale profile: toy widths and shorter schedules.
    pub fn toy() -> Self {
        Self {
            profile: "toy".into(),
            codec: CodecConfig::toy(),
            proxy: ProxyConfig::toy(),
            proxy_train: ProxyTrainConfig::toy(),
            stage1: Stage1Config::toy(),
            stage2: Stage2Config::toy(),
            ..Self::default()
        }
    }

    fn for_profile(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "toy" => Ok(Self::toy()),
            other => Err(RdcError::Config(format!("unknown profile `{other}`"))),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "profile" => {
                let seed = self.seed;
                *self = Self::for_profile(value)?;
                self.seed = seed;
            }
            "seed" => self.seed = parse_value(key, value)?,
            "proxy_steps" => self.proxy_train.steps = parse_value(key, value)?,
            "proxy_batch" => self.proxy_train.batch = parse_value(key, value)?,
            "proxy_lr" => self.proxy_train.lr = parse_value(key, value)?,
            "probe_steps" => self.probe.steps = parse_value(key, value)?,
            "probe_lr" => self.probe.lr = parse_value(key, value)?,
            "distortion_scale" => {
                self.stage1.distortion_scale = parse_value(key, value)?;
                self.stage2.distortion_scale = self.stage1.distortion_scale;
            }
            "sweep_alphas" => self.sweep_alphas = parse_unit_list(key, value)?,
            "sweep_betas" => self.sweep_betas = parse_unit_list(key, value)?,
            "sweep_alpha_s" => self.sweep_alpha_s = parse_value(key, value)?,
            _ if CodecConfig::KEYS.contains(&key) => self.codec.set(key, value)?,
            _ => {
                if self.stage1.set(key, value)? || self.stage2.set(key, value)? {
                    return Ok(());
                }
                self.proxy
                    .set(key, value)
                    .map_err(|_| RdcError::Config(format!("unknown configuration key `{key}`")))?;
            }
        }
        Ok(())
    }

    /// Applies pairs in order, handling `profile` first so that it never
    /// discards earlier keys.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs.iter().filter(|(k, _)| k == "profile") {
            self.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "profile") {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then overrides, then `RDC_SEED`.
    pub fn load(file: Option<&Path>, overrides: &[String], seed_env: Option<String>) -> Result<Self> {
        let mut pairs = match file {
            Some(path) => parse_pairs(&fs::read_to_string(path)?)?,
            None => Vec::new(),
        };
        for item in overrides {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| RdcError::Config(format!("override `{item}` is not key=value")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(seed) = seed_env {
            pairs.push(("seed".into(), seed));
        }
        let mut cfg = Self::default();
        cfg.apply(&pairs)?;
        cfg.finish()
    }

    fn finish(mut self) -> Result<Self> {
        self.codec.validate()?;
        self.proxy.validate()?;
        rdc_core::gain::check_unit("sweep_alpha_s", self.sweep_alpha_s)?;
        self.proxy_train.seed = self.seed;
        self.probe.seed = self.seed;
        self.stage1.seed = self.seed;
        self.stage2.seed = self.seed;
        Ok(self)
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("profile".to_string(), self.profile.clone()),
            ("seed".to_string(), self.seed.to_string()),
        ];
        out.extend(self.codec.pairs());
        out.extend(self.proxy.pairs());
        out.extend([
            ("proxy_steps".to_string(), self.proxy_train.steps.to_string()),
            ("proxy_batch".to_string(), self.proxy_train.batch.to_string()),
            ("proxy_lr".to_string(), self.proxy_train.lr.to_string()),
            ("probe_steps".to_string(), self.probe.steps.to_string()),
            ("probe_lr".to_string(), self.probe.lr.to_string()),
        ]);
        out.extend(self.stage1.pairs());
        out.extend(self.stage2.pairs());
        out.extend([
            ("sweep_alphas".to_string(), render_list(&self.sweep_alphas)),
            ("sweep_betas".to_string(), render_list(&self.sweep_betas)),
            ("sweep_alpha_s".to_string(), self.sweep_alpha_s.to_string()),
        ]);
        out
    }

    pub fn render(&self) -> String {
        render_pairs(&self.pairs())
    }

    /// Writes `<command>.config.txt` into `dir`.
    pub fn echo(&self, dir: &Path, command: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{command}.config.txt")), self.render())?;
        Ok(())
    }
}

pub fn parse_unit_list(key: &str, value: &str) -> Result<Vec<f64>> {
    let list = parse_list(key, value)?;
    if list.is_empty() {
        return Err(RdcError::Config(format!("{key} must not be empty")));
    }
    if let Some(&bad) = list.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(RdcError::Config(format!("{key} entry {bad} is outside [0, 1]")));
    }
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::load(None, &["profile=toy".into(), "tau=0.2".into(), "stage1_steps=7".into()], None).unwrap();
        let back = RunConfig::load(None, &[], None)
            .and_then(|mut c| {
                c.apply(&parse_pairs(&cfg.render())?)?;
                c.finish()
            })
            .unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.codec, CodecConfig::toy());
        assert_eq!(cfg.stage1.steps, 7);
    }

    #[test]
    fn profile_is_applied_before_other_keys() {
        let cfg = RunConfig::load(None, &["stage1_steps=9".into(), "profile=toy".into()], None).unwrap();
        assert_eq!(cfg.stage1.steps, 9);
        assert_eq!(cfg.profile, "toy");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::load(None, &["no_such_key=1".into()], None).unwrap_err();
        assert!(err.to_string().contains("no_such_key"));
        assert!(RunConfig::load(None, &["novalue".into()], None).is_err());
    }

    #[test]
    fn seed_env_wins_and_propagates() {
        let cfg = RunConfig::load(None, &["seed=3".into()], Some("11".into())).unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!((cfg.stage1.seed, cfg.stage2.seed, cfg.proxy_train.seed), (11, 11, 11));
    }
}
