//! Run configuration: every hyperparameter with its default, parsed from
//! JSON with unknown keys rejected, plus the schema hash that ties a
//! checkpoint to the configuration that produced it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::{MetricSchema, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};

/// Full run configuration. Defaults match the model and training module
/// conventions; a config file only needs the fields it overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // architecture
    pub embed_dim: usize,
    pub attn_dim: usize,
    pub scene_hidden: usize,
    pub scene_dim: usize,
    pub expert_hidden: usize,
    pub n_experts: usize,
    pub n_levels: usize,
    pub variant: Variant,

    // loss
    pub lambda_kl: f64,
    pub kl_epsilon: f64,

    // optimization
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,

    // run identity
    pub seed: u64,
    pub percentile: u8,

    // paths (optional; commands may override via flags)
    pub data_dir: Option<String>,
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            embed_dim: 64,
            attn_dim: 64,
            scene_hidden: 64,
            scene_dim: 32,
            expert_hidden: 64,
            n_experts: 4,
            n_levels: 3,
            variant: Variant::Full,
            lambda_kl: 0.01,
            kl_epsilon: 1e-8,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            max_epochs: 500,
            patience: 20,
            seed: 42,
            percentile: 90,
            data_dir: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.percentile, 50 | 90 | 99) {
            return Err(Error::Config(format!(
                "percentile must be 50, 90 or 99, got {}",
                self.percentile
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be at least 2 (the diversity term needs a batch)".into(),
            ));
        }
        if !(1..=4).contains(&self.n_levels) {
            return Err(Error::Config(format!(
                "n_levels must be 1..=4, got {}",
                self.n_levels
            )));
        }
        if self.lambda_kl < 0.0 || !self.lambda_kl.is_finite() {
            return Err(Error::Config(format!(
                "lambda_kl must be finite and nonnegative, got {}",
                self.lambda_kl
            )));
        }
        Ok(())
    }

    pub fn model_config(&self, n_nodes: usize) -> ModelConfig {
        ModelConfig {
            n_nodes,
            feature_dim: FEATURE_DIM,
            embed_dim: self.embed_dim,
            attn_dim: self.attn_dim,
            scene_hidden: self.scene_hidden,
            scene_dim: self.scene_dim,
            expert_hidden: self.expert_hidden,
            n_experts: self.n_experts,
            n_levels: self.n_levels,
            variant: self.variant,
        }
    }

    /// Hash over everything that determines checkpoint tensor shapes and
    /// meaning: architecture, variant, percentile, node count, and the
    /// metric schema version. Guards against evaluating a checkpoint
    /// under a different schema.
    pub fn schema_hash(&self, n_nodes: usize) -> [u8; 32] {
        let schema = MetricSchema::v1();
        let key = serde_json::json!({
            "embed_dim": self.embed_dim,
            "attn_dim": self.attn_dim,
            "scene_hidden": self.scene_hidden,
            "scene_dim": self.scene_dim,
            "expert_hidden": self.expert_hidden,
            "n_experts": self.n_experts,
            "n_levels": self.n_levels,
            "variant": self.variant,
            "percentile": self.percentile,
            "n_nodes": n_nodes,
            "metric_schema": schema.version,
        });
        let mut hasher = Sha256::new();
        hasher.update(key.to_string().as_bytes());
        hasher.finalize().into()
    }
}
