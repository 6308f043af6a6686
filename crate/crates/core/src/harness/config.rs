//! TOML experiment configuration. Every key has a default, so an empty file
//! is a complete config; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{EncoderDims, PolicyDims, ReferenceTraining};
use crate::policy_opt::PpoConfig;
use crate::prefdata::DataConfig;
use crate::reward_training::{Method, RmTrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub vocab_size: usize,
    pub prompt_len: usize,
    pub completion_len: usize,
    /// Concentration of the Dirichlet draw for the natural token distribution.
    pub dirichlet_alpha: f64,
    /// Seeds the natural distribution, gold model, reference policy and
    /// dataset; shared by every method and run seed.
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            prompt_len: 8,
            completion_len: 16,
            dirichlet_alpha: 1.0,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub gold_hidden_dim: usize,
    /// Scale of the gold encoder's uniform initialization.
    pub gold_init_gain: f64,
    /// Copy the proxy encoders' embedding and first layer from the reference
    /// policy instead of drawing them fresh.
    pub init_encoder_from_reference: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: 64,
            feature_dim: 64,
            gold_hidden_dim: 256,
            gold_init_gain: 3.0,
            init_encoder_from_reference: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub per_head_bootstrap: bool,
    pub single_epochs: usize,
    pub multihead_epochs: usize,
    pub ensemble_epochs: usize,
}

impl Default for RmConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            per_head_bootstrap: false,
            single_epochs: 1,
            multihead_epochs: 1,
            ensemble_epochs: 3,
        }
    }
}

impl RmConfig {
    pub fn epochs_for(&self, method: Method) -> usize {
        match method {
            Method::Single => self.single_epochs,
            Method::Multihead => self.multihead_epochs,
            Method::Ensemble => self.ensemble_epochs,
        }
    }

    pub fn train_config(&self, epochs: usize, seed: u64) -> RmTrainConfig {
        RmTrainConfig {
            learning_rate: self.learning_rate,
            epochs,
            batch_size: self.batch_size,
            seed,
            per_head_bootstrap: self.per_head_bootstrap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub calibration_bins: usize,
    pub epoch_grid: Vec<usize>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            k: 3,
            seeds: vec![1, 2, 3],
            methods: Method::ALL.to_vec(),
            output_dir: PathBuf::from("runs/default"),
            workers: 1,
            calibration_bins: 10,
            epoch_grid: vec![1, 3],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub reference: ReferenceTraining,
    pub data: DataConfig,
    pub rm: RmConfig,
    pub ppo: PpoConfig,
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    pub fn policy_dims(&self) -> PolicyDims {
        PolicyDims {
            vocab_size: self.world.vocab_size,
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            prompt_len: self.world.prompt_len,
            completion_len: self.world.completion_len,
        }
    }

    pub fn proxy_dims(&self) -> EncoderDims {
        EncoderDims {
            vocab_size: self.world.vocab_size,
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            feature_dim: self.model.feature_dim,
        }
    }

    pub fn gold_dims(&self) -> EncoderDims {
        EncoderDims {
            hidden_dim: self.model.gold_hidden_dim,
            ..self.proxy_dims()
        }
    }

    /// Checks every documented constraint, naming the offending key.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let fail = |key: &str, msg: String| Err((key.to_string(), msg));
        let w = &self.world;
        if w.vocab_size < 2 {
            return fail("world.vocab_size", "must be >= 2".into());
        }
        for (key, v) in [
            ("world.prompt_len", w.prompt_len),
            ("world.completion_len", w.completion_len),
            ("model.embed_dim", self.model.embed_dim),
            ("model.hidden_dim", self.model.hidden_dim),
            ("model.feature_dim", self.model.feature_dim),
            ("reference.batch_size", self.reference.batch_size),
            ("data.train_pairs", self.data.train_pairs),
            ("rm.batch_size", self.rm.batch_size),
            ("rm.single_epochs", self.rm.single_epochs),
            ("rm.multihead_epochs", self.rm.multihead_epochs),
            ("rm.ensemble_epochs", self.rm.ensemble_epochs),
            ("ppo.ppo_epochs_per_batch", self.ppo.ppo_epochs_per_batch),
            ("ppo.rollout_batch_size", self.ppo.rollout_batch_size),
            (
                "ppo.gradient_step_batch_size",
                self.ppo.gradient_step_batch_size,
            ),
            ("ppo.eval_interval", self.ppo.eval_interval),
            ("ppo.eval_prompts", self.ppo.eval_prompts),
            ("experiment.k", self.experiment.k),
            ("experiment.workers", self.experiment.workers),
            (
                "experiment.calibration_bins",
                self.experiment.calibration_bins,
            ),
        ] {
            if v == 0 {
                return fail(key, "must be >= 1".into());
            }
        }
        if self.model.gold_hidden_dim <= self.model.hidden_dim {
            return fail(
                "model.gold_hidden_dim",
                format!(
                    "must be larger than model.hidden_dim ({})",
                    self.model.hidden_dim
                ),
            );
        }
        for (key, v) in [
            ("world.dirichlet_alpha", w.dirichlet_alpha),
            ("model.gold_init_gain", self.model.gold_init_gain),
            ("reference.learning_rate", self.reference.learning_rate),
            ("rm.learning_rate", self.rm.learning_rate),
            ("ppo.learning_rate", self.ppo.learning_rate),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return fail(key, format!("must be a positive number, got {v}"));
            }
        }
        if !(0.0..0.5).contains(&self.data.noise_rate) {
            return fail(
                "data.noise_rate",
                format!("must lie in [0, 0.5), got {}", self.data.noise_rate),
            );
        }
        if !(self.ppo.kl_coefficient >= 0.0) || !self.ppo.kl_coefficient.is_finite() {
            return fail(
                "ppo.kl_coefficient",
                format!("must be >= 0, got {}", self.ppo.kl_coefficient),
            );
        }
        if !(self.ppo.clip_epsilon > 0.0 && self.ppo.clip_epsilon < 1.0) {
            return fail(
                "ppo.clip_epsilon",
                format!("must lie in (0, 1), got {}", self.ppo.clip_epsilon),
            );
        }
        let seeds = &self.experiment.seeds;
        if seeds.is_empty() {
            return fail("experiment.seeds", "must list at least one seed".into());
        }
        for (i, s) in seeds.iter().enumerate() {
            if seeds[..i].contains(s) {
                return fail("experiment.seeds", format!("seed {s} appears twice"));
            }
        }
        if self.experiment.methods.is_empty() {
            return fail("experiment.methods", "must list at least one method".into());
        }
        if self.experiment.epoch_grid.contains(&0) {
            return fail("experiment.epoch_grid", "epoch counts must be >= 1".into());
        }
        Ok(())
    }
}

/// 1-based line of `key` (a dotted path) in `source`, found by scanning
/// section headers and assignments.
pub fn locate_key(source: &str, key: &str) -> Option<usize> {
    let (section, leaf) = match key.rsplit_once('.') {
        Some((s, l)) => (s, l),
        None => ("", key),
    };
    let mut current = String::new();
    let mut section_line = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section || current == key {
                section_line.get_or_insert(i + 1);
            }
            continue;
        }
        if let Some((lhs, _)) = line.split_once('=') {
            let lhs = lhs.trim().trim_matches('"');
            let full = if current.is_empty() {
                lhs.to_string()
            } else {
                format!("{current}.{lhs}")
            };
            if full == key || (current == section && lhs == leaf) {
                return Some(i + 1);
            }
        }
    }
    section_line
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Parses and validates a config document.
pub fn parse_config_str(source: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(source).map_err(|e| Error::Config {
        key: String::new(),
        line: e.span().map(|s| line_of_offset(source, s.start)),
        msg: e.message().to_string(),
    })?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        let line = inner
            .span()
            .map(|s| line_of_offset(source, s.start))
            .or_else(|| locate_key(source, &key));
        Error::Config {
            key,
            line,
            msg: inner.message().to_string(),
        }
    })?;
    cfg.validate().map_err(|(key, msg)| Error::Config {
        line: locate_key(source, &key),
        key,
        msg,
    })?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_str(&text)
}
