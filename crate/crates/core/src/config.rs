//! Run configuration as plain-text `key = value` lines.
//!
//! Keys are dotted (`model.base_channels`) or grouped under `[section]`
//! headers, in which case the section name is prefixed. `#` starts a
//! comment. Unknown keys are errors. Lists are comma separated.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::nn::AdamWConfig;
use crate::unet::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch_size: usize,
    /// Peak learning rate of the cosine schedule.
    pub lr: f64,
    /// Rescale gradients whose global norm exceeds this.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            iters_per_epoch: 8,
            batch_size: 2,
            lr: 5e-4,
            grad_clip: Some(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub optim: AdamWConfig,
    pub train: TrainConfig,
    pub data: SyntheticSpec,
    /// NSD tolerance in pixels.
    pub tau: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            optim: AdamWConfig::default(),
            train: TrainConfig::default(),
            data: SyntheticSpec::default(),
            tau: crate::metrics::DEFAULT_TAU,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl RunConfig {
    /// Sets one dotted key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let f = &mut m.crmsm;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "eval.tau" => self.tau = parse(key, v)?,
            "model.in_channels" => m.in_channels = parse(key, v)?,
            "model.num_classes" => m.num_classes = parse(key, v)?,
            "model.base_channels" => m.base_channels = parse(key, v)?,
            "model.stage_depths" => m.stage_depths = parse_list(key, v)?,
            "model.expansion" => m.expansion = parse(key, v)?,
            "model.ffn_ratio" => m.ffn_ratio = parse(key, v)?,
            "model.heads" => m.heads = parse(key, v)?,
            "model.window" => m.window = parse(key, v)?,
            "model.pool" => m.pool = parse(key, v)?,
            "model.lambda_init" => m.lambda_init = parse(key, v)?,
            "model.mamba_macro" => m.mamba_macro = parse(key, v)?,
            "model.differential" => m.differential = parse(key, v)?,
            "model.use_pe" => m.use_pe = parse(key, v)?,
            "model.post_norm" => m.post_norm = parse(key, v)?,
            "model.use_crmsm" => m.use_crmsm = parse(key, v)?,
            "model.crmsm_bottleneck" => m.crmsm_bottleneck = parse(key, v)?,
            "model.ssm_state" => m.ssm_state = parse(key, v)?,
            "model.deep_supervision" => m.deep_supervision = parse(key, v)?,
            "crmsm.multi_view" => f.multi_view = parse(key, v)?,
            "crmsm.use_ssm" => f.use_ssm = parse(key, v)?,
            "crmsm.causal_fusion" => f.causal_fusion = parse(key, v)?,
            "crmsm.mirror_flip" => f.mirror_flip = parse(key, v)?,
            "crmsm.static_ssm" => f.static_ssm = parse(key, v)?,
            "optim.lr" => self.train.lr = parse(key, v)?,
            "optim.beta1" => self.optim.beta1 = parse(key, v)?,
            "optim.beta2" => self.optim.beta2 = parse(key, v)?,
            "optim.eps" => self.optim.eps = parse(key, v)?,
            "optim.weight_decay" => self.optim.weight_decay = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.iters_per_epoch" => self.train.iters_per_epoch = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.grad_clip" => self.train.grad_clip = if v == "none" { None } else { Some(parse(key, v)?) },
            "data.count" => self.data.count = parse(key, v)?,
            "data.height" => self.data.height = parse(key, v)?,
            "data.width" => self.data.width = parse(key, v)?,
            "data.num_classes" => self.data.num_classes = parse(key, v)?,
            "data.shapes_min" => self.data.shapes_per_class.0 = parse(key, v)?,
            "data.shapes_max" => self.data.shapes_per_class.1 = parse(key, v)?,
            "data.noise_sigma" => self.data.noise_sigma = parse(key, v)?,
            "data.seed" => self.data.seed = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in the order `set` lists them.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let f = &m.crmsm;
        let depths = m.stage_depths.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("seed", self.seed.to_string()),
            ("eval.tau", self.tau.to_string()),
            ("model.in_channels", m.in_channels.to_string()),
            ("model.num_classes", m.num_classes.to_string()),
            ("model.base_channels", m.base_channels.to_string()),
            ("model.stage_depths", depths),
            ("model.expansion", m.expansion.to_string()),
            ("model.ffn_ratio", m.ffn_ratio.to_string()),
            ("model.heads", m.heads.to_string()),
            ("model.window", m.window.to_string()),
            ("model.pool", m.pool.to_string()),
            ("model.lambda_init", m.lambda_init.to_string()),
            ("model.mamba_macro", m.mamba_macro.to_string()),
            ("model.differential", m.differential.to_string()),
            ("model.use_pe", m.use_pe.to_string()),
            ("model.post_norm", m.post_norm.to_string()),
            ("model.use_crmsm", m.use_crmsm.to_string()),
            ("model.crmsm_bottleneck", m.crmsm_bottleneck.to_string()),
            ("model.ssm_state", m.ssm_state.to_string()),
            ("model.deep_supervision", m.deep_supervision.to_string()),
            ("crmsm.multi_view", f.multi_view.to_string()),
            ("crmsm.use_ssm", f.use_ssm.to_string()),
            ("crmsm.causal_fusion", f.causal_fusion.to_string()),
            ("crmsm.mirror_flip", f.mirror_flip.to_string()),
            ("crmsm.static_ssm", f.static_ssm.to_string()),
            ("optim.lr", self.train.lr.to_string()),
            ("optim.beta1", self.optim.beta1.to_string()),
            ("optim.beta2", self.optim.beta2.to_string()),
            ("optim.eps", self.optim.eps.to_string()),
            ("optim.weight_decay", self.optim.weight_decay.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.iters_per_epoch", self.train.iters_per_epoch.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.grad_clip", self.train.grad_clip.map_or("none".into(), |c| c.to_string())),
            ("data.count", self.data.count.to_string()),
            ("data.height", self.data.height.to_string()),
            ("data.width", self.data.width.to_string()),
            ("data.num_classes", self.data.num_classes.to_string()),
            ("data.shapes_min", self.data.shapes_per_class.0.to_string()),
            ("data.shapes_max", self.data.shapes_per_class.1.to_string()),
            ("data.noise_sigma", self.data.noise_sigma.to_string()),
            ("data.seed", self.data.seed.to_string()),
        ]
    }

    /// Applies the lines of a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let k = k.trim();
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            self.set(&key, v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Checks cross-field consistency.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.validate()?;
        if self.data.num_classes != self.model.num_classes {
            return Err(Error::Config(format!(
                "data.num_classes {} differs from model.num_classes {}",
                self.data.num_classes, self.model.num_classes
            )));
        }
        let t = &self.train;
        if t.epochs == 0 || t.iters_per_epoch == 0 || t.batch_size == 0 {
            return Err(Error::Config("epochs, iters_per_epoch and batch_size must be positive".into()));
        }
        if !(t.lr >= 0.0 && t.lr.is_finite()) {
            return Err(Error::Config(format!("optim.lr {} must be finite and >= 0", t.lr)));
        }
        if self.train.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("train.grad_clip must be positive".into()));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::Config(format!("eval.tau {} must be >= 0", self.tau)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_and_sectioned_keys() {
        let cfg = RunConfig::from_text(
            "seed = 7 # trailing comment\n\
             model.base_channels = 8\n\
             [model]\n\
             stage_depths = 1, 2\n\
             [crmsm]\n\
             multi_view = false\n\
             [optim]\n\
             lr = 0\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.base_channels, 8);
        assert_eq!(cfg.model.stage_depths, [1, 2]);
        assert!(!cfg.model.crmsm.multi_view);
        assert_eq!(cfg.train.lr, 0.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(RunConfig::from_text("model.base_chanels = 8").is_err());
        assert!(RunConfig::from_text("[model]\nseed = 1").is_err());
        assert!(RunConfig::from_text("train.epochs = -1").is_err());
        assert!(RunConfig::from_text("model.use_pe = yes").is_err());
        assert!(RunConfig::from_text("just a line").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.model = ModelConfig::toy();
        cfg.model.lambda_init = 0.3;
        cfg.model.crmsm.static_ssm = true;
        cfg.data.noise_sigma = 0.125;
        cfg.optim.weight_decay = 1e-4;
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn every_listed_key_is_settable() {
        let mut cfg = RunConfig::default();
        for (k, v) in RunConfig::default().entries() {
            cfg.set(k, &v).unwrap();
        }
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::default();
        cfg.data.num_classes = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.train.lr = -1.0;
        assert!(cfg.validate().is_err());
    }
}
