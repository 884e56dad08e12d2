//! Model/run configuration: architecture extents, optimizer settings,
//! ablation switches, and variant selectors.
//!
//! A configuration can come from a flat `key = value` text file, and every
//! key can be overridden by a CLI flag of the same name.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Euclidean,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            "euclidean" => Ok(LossKind::Euclidean),
            other => Err(Error::Config(format!(
                "loss must be cross_entropy or euclidean, got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// Score the contextualized features coming out of feature propagation.
    Contextualized,
    /// Score the attention-pooled features directly.
    Raw,
}

impl std::str::FromStr for ScoreSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contextualized" => Ok(ScoreSource::Contextualized),
            "raw" => Ok(ScoreSource::Raw),
            other => Err(Error::Config(format!(
                "score_source must be contextualized or raw, got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    // Architecture extents.
    pub categories: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    pub channels: usize,
    pub semantic_dim: usize,
    pub joint_dim: usize,
    pub fused_dim: usize,
    pub hidden_dim: usize,
    pub feature_steps: usize,
    pub semantic_steps: usize,

    // Optimizer.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    /// Fixed step-decay: divide the learning rate by 10 at this step.
    pub lr_decay_step: Option<u64>,
    /// Stop early once train mAP reaches this value (checked per epoch).
    pub target_map: Option<f64>,
    pub seed: u64,

    // Two-stage protocol.
    pub stage1_steps: u64,
    pub stage2_steps: u64,
    pub stage2_learning_rate: f64,
    pub gamma: f64,

    // Ablations.
    pub disable_sga: bool,
    pub disable_kefp: bool,
    pub disable_gfp: bool,
    pub disable_gsp: bool,

    // Variants.
    pub loss: LossKind,
    pub score_source: ScoreSource,
    pub pool_fused: bool,
}

impl Default for ModelConfig {
    /// Full-scale architecture constants: 2048-channel grids and hidden
    /// states, 300-dimensional word vectors, 1024-dimensional joint and
    /// fused embeddings, three propagation rounds per network, batch 4,
    /// Adam momentums 0.9/0.999.
    fn default() -> Self {
        ModelConfig {
            categories: 80,
            grid_width: 9,
            grid_height: 9,
            channels: 2048,
            semantic_dim: 300,
            joint_dim: 1024,
            fused_dim: 1024,
            hidden_dim: 2048,
            feature_steps: 3,
            semantic_steps: 3,
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 4,
            max_steps: 10_000,
            lr_decay_step: None,
            target_map: None,
            seed: 0,
            stage1_steps: 2_000,
            stage2_steps: 500,
            stage2_learning_rate: 1e-4,
            gamma: 0.001,
            disable_sga: false,
            disable_kefp: false,
            disable_gfp: false,
            disable_gsp: false,
            loss: LossKind::CrossEntropy,
            score_source: ScoreSource::Contextualized,
            pool_fused: false,
        }
    }
}

impl ModelConfig {
    /// Desk-scale defaults for synthetic experiments and the test suites.
    pub fn desk() -> Self {
        ModelConfig {
            categories: 8,
            grid_width: 4,
            grid_height: 4,
            channels: 16,
            semantic_dim: 8,
            joint_dim: 12,
            fused_dim: 12,
            hidden_dim: 16,
            learning_rate: 3e-3,
            max_steps: 2_000,
            stage1_steps: 800,
            stage2_steps: 500,
            stage2_learning_rate: 3e-3,
            ..ModelConfig::default()
        }
    }

    /// Dimension of the per-category node features entering propagation.
    pub fn node_dim(&self) -> usize {
        if self.pool_fused {
            self.fused_dim
        } else {
            self.channels
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("categories", self.categories),
            ("grid_width", self.grid_width),
            ("grid_height", self.grid_height),
            ("channels", self.channels),
            ("semantic_dim", self.semantic_dim),
            ("joint_dim", self.joint_dim),
            ("fused_dim", self.fused_dim),
            ("hidden_dim", self.hidden_dim),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden_dim != self.node_dim() {
            return Err(Error::Config(format!(
                "hidden_dim ({}) must equal the node feature dimension ({}); \
                 feature propagation initializes hidden states with the pooled features",
                self.hidden_dim,
                self.node_dim()
            )));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config("gamma must be nonnegative".to_string()));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    /// Ablation switches must match between training and evaluation; the
    /// propagation graphs a model was trained with are part of the model.
    pub fn check_ablation_compat(&self, eval: &ModelConfig) -> Result<()> {
        let pairs = [
            ("disable_sga", self.disable_sga, eval.disable_sga),
            ("disable_kefp", self.disable_kefp, eval.disable_kefp),
            ("disable_gfp", self.disable_gfp, eval.disable_gfp),
            ("disable_gsp", self.disable_gsp, eval.disable_gsp),
        ];
        for (name, trained, evaluated) in pairs {
            if trained != evaluated {
                return Err(Error::Config(format!(
                    "{name} mismatch: model was trained with {trained}, evaluation requested {evaluated}"
                )));
            }
        }
        if self.score_source != eval.score_source {
            return Err(Error::Config(
                "score_source mismatch between training and evaluation".to_string(),
            ));
        }
        Ok(())
    }

    /// Apply one `key = value` setting.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| Error::Config(format!("cannot parse {key} = '{value}'")))
        }
        match key {
            "categories" => self.categories = parse(key, value)?,
            "grid_width" => self.grid_width = parse(key, value)?,
            "grid_height" => self.grid_height = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "semantic_dim" => self.semantic_dim = parse(key, value)?,
            "joint_dim" => self.joint_dim = parse(key, value)?,
            "fused_dim" => self.fused_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "feature_steps" => self.feature_steps = parse(key, value)?,
            "semantic_steps" => self.semantic_steps = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "lr_decay_step" => self.lr_decay_step = Some(parse(key, value)?),
            "target_map" => self.target_map = Some(parse(key, value)?),
            "seed" => self.seed = parse(key, value)?,
            "stage1_steps" => self.stage1_steps = parse(key, value)?,
            "stage2_steps" => self.stage2_steps = parse(key, value)?,
            "stage2_learning_rate" => self.stage2_learning_rate = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "disable_sga" => self.disable_sga = parse(key, value)?,
            "disable_kefp" => self.disable_kefp = parse(key, value)?,
            "disable_gfp" => self.disable_gfp = parse(key, value)?,
            "disable_gsp" => self.disable_gsp = parse(key, value)?,
            "loss" => self.loss = value.parse()?,
            "score_source" => self.score_source = value.parse()?,
            "pool_fused" => self.pool_fused = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse flat key-value text (`key = value`, `#` comments) on top of
    /// the given base configuration.
    pub fn from_kv_text(text: &str, base: ModelConfig) -> Result<ModelConfig> {
        let mut config = base;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            config.apply_kv(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// [`ModelConfig::from_kv_text`] over a file's contents.
    pub fn from_file(path: &Path, base: ModelConfig) -> Result<ModelConfig> {
        Self::from_kv_text(&fs::read_to_string(path)?, base)
    }
}
