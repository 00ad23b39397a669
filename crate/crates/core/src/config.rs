//! Flat key-value run configuration (TOML) with `key=value` overrides.
//!
//! Every key is optional; missing keys take the documented defaults and
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{ContrastConfig, FocalConfig};
use crate::model::{BackboneConfig, BackboneSize, ModelConfig};
use crate::sampler::{PoolMode, SamplerConfig};
use crate::train::{Schedule, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    // model
    pub input_size: usize,
    pub backbone_size: BackboneSize,
    pub stem_channels: usize,
    pub dropout_rate: f64,
    pub contrast_dim: usize,
    pub head_hidden: usize,

    // contrastive losses
    pub temperature: f64,
    pub normalize_embeddings: bool,
    pub supcon_denominator: bool,
    pub use_within: bool,
    pub use_cross_scale: bool,
    pub use_cross_modality: bool,

    // sampler
    pub anchors_per_class: usize,
    pub positives: usize,
    pub negatives: usize,
    pub pool_mode: PoolMode,

    // focal loss
    pub focal_alpha: f64,
    pub focal_gamma: f64,

    // optimization
    pub lr_init: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub augment: bool,

    // evaluation
    pub threshold: f64,
    /// F1/IoU reported when both prediction and ground truth are empty.
    pub empty_score: f64,
    pub jpeg_grid: Vec<u8>,
    pub blur_grid: Vec<usize>,
    pub noise_grid: Vec<f64>,
    pub resize_grid: Vec<f64>,

    // synthesis
    pub synth_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let contrast = ContrastConfig::default();
        let sampler = SamplerConfig::default();
        let focal = FocalConfig::default();
        RunConfig {
            seed: 0,
            input_size: model.input_size,
            backbone_size: model.backbone.size,
            stem_channels: model.backbone.stem_channels,
            dropout_rate: model.backbone.dropout_rate,
            contrast_dim: model.backbone.contrast_dim,
            head_hidden: model.head_hidden,
            temperature: contrast.temperature,
            normalize_embeddings: contrast.normalize_embeddings,
            supcon_denominator: contrast.supcon_denominator,
            use_within: contrast.use_within,
            use_cross_scale: contrast.use_cross_scale,
            use_cross_modality: contrast.use_cross_modality,
            anchors_per_class: sampler.anchors_per_class,
            positives: sampler.positives,
            negatives: sampler.negatives,
            pool_mode: sampler.pool_mode,
            focal_alpha: focal.alpha,
            focal_gamma: focal.gamma,
            lr_init: 1e-4,
            lr_min: 1e-6,
            batch_size: 4,
            stage1_epochs: 20,
            stage2_epochs: 20,
            plateau_factor: 0.5,
            plateau_patience: 3,
            augment: true,
            threshold: 0.5,
            empty_score: 1.0,
            jpeg_grid: vec![100, 90, 80, 70, 60],
            blur_grid: vec![3, 5, 7, 9],
            noise_grid: vec![0.002, 0.004, 0.006, 0.008, 0.010],
            resize_grid: vec![0.9, 0.8, 0.7, 0.6, 0.5],
            synth_size: 512,
        }
    }
}

fn constraint(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Parses one `key=value` override. The value is read as a TOML literal and
/// falls back to a bare string (`pool_mode=shared`).
fn parse_override(raw: &str) -> Result<(String, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| constraint(raw, "override must look like key=value"))?;
    let key = key.trim();
    let value = value.trim();
    if key.is_empty() {
        return Err(constraint(raw, "empty key"));
    }
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

impl RunConfig {
    /// Parses TOML text, applies overrides, fills defaults and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| constraint("<file>", e.message().to_string()))?;
        for raw in overrides {
            let (k, v) = parse_override(raw)?;
            table.insert(k, v);
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
            let msg = e.message().to_string();
            let key = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<file>".into());
            constraint(&key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(constraint("input_size", format!("{} is not a positive multiple of 32", self.input_size)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(constraint("dropout_rate", format!("{} outside [0, 1)", self.dropout_rate)));
        }
        if self.use_cross_modality && self.dropout_rate == 0.0 {
            return Err(constraint(
                "dropout_rate",
                "must be > 0 while use_cross_modality is enabled",
            ));
        }
        for (key, v) in [
            ("stem_channels", self.stem_channels),
            ("contrast_dim", self.contrast_dim),
            ("head_hidden", self.head_hidden),
            ("anchors_per_class", self.anchors_per_class),
            ("positives", self.positives),
            ("negatives", self.negatives),
            ("batch_size", self.batch_size),
            ("synth_size", self.synth_size),
        ] {
            if v == 0 {
                return Err(constraint(key, "must be positive"));
            }
        }
        self.contrast_config().validate()?;
        self.focal_config().validate()?;
        if !(self.lr_init > 0.0) {
            return Err(constraint("lr_init", format!("{} must be > 0", self.lr_init)));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_init) {
            return Err(constraint("lr_min", format!("{} must lie in [0, lr_init]", self.lr_min)));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(constraint("plateau_factor", format!("{} outside (0, 1)", self.plateau_factor)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(constraint("threshold", format!("{} outside [0, 1]", self.threshold)));
        }
        if !(0.0..=1.0).contains(&self.empty_score) {
            return Err(constraint("empty_score", format!("{} outside [0, 1]", self.empty_score)));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut backbone = BackboneConfig::of_size(self.backbone_size);
        backbone.stem_channels = self.stem_channels;
        backbone.dropout_rate = self.dropout_rate;
        backbone.contrast_dim = self.contrast_dim;
        ModelConfig {
            backbone,
            head_hidden: self.head_hidden,
            input_size: self.input_size,
        }
    }

    pub fn contrast_config(&self) -> ContrastConfig {
        ContrastConfig {
            temperature: self.temperature,
            normalize_embeddings: self.normalize_embeddings,
            supcon_denominator: self.supcon_denominator,
            use_within: self.use_within,
            use_cross_scale: self.use_cross_scale,
            use_cross_modality: self.use_cross_modality,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            anchors_per_class: self.anchors_per_class,
            positives: self.positives,
            negatives: self.negatives,
            pool_mode: self.pool_mode,
        }
    }

    pub fn focal_config(&self) -> FocalConfig {
        FocalConfig {
            alpha: self.focal_alpha,
            gamma: self.focal_gamma,
        }
    }

    /// Stage 1 uses the plateau schedule, stage 2 cosine annealing.
    pub fn train_config(&self, stage: u8) -> TrainConfig {
        let (epochs, schedule) = if stage == 1 {
            (
                self.stage1_epochs,
                Schedule::Plateau {
                    factor: self.plateau_factor,
                    patience: self.plateau_patience,
                    min_lr: self.lr_min,
                },
            )
        } else {
            (self.stage2_epochs, Schedule::Cosine { min_lr: self.lr_min })
        };
        TrainConfig {
            stage,
            lr_init: self.lr_init,
            batch_size: self.batch_size,
            epochs,
            schedule,
            global_seed: self.seed,
            augment: self.augment,
        }
    }
}

/// Reads a config file (or defaults when `path` is `None`) and applies
/// overrides.
pub fn validate_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    RunConfig::from_toml_str(&text, overrides)
}
