//! Flat training configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::losses::SimilarityGate;
use super::optim::OptimizerConfig;
use super::schedule::ContextMaskSchedule;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::refinement::RefinementConfig;
use crate::types::LossWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model_dim: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub max_caption_len: usize,
    pub max_aux_len: usize,
    pub dropout: f64,
    pub feature_dim: usize,
    pub frames: usize,

    pub lambda_c: f64,
    pub lambda_r: f64,
    pub lambda_v: f64,
    pub lambda_s: f64,
    pub label_smoothing: f64,
    pub temperature: f64,
    pub similarity_gate: SimilarityGate,

    pub multi_mask_prob: f64,
    pub min_mask_count: usize,
    pub max_mask_count: usize,
    /// Probability of training on a random interior event as the result
    /// instead of the last one, when complete labels are available.
    pub interior_target_prob: f64,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub warmup_steps: u64,

    pub epochs: u64,
    pub batch_size: usize,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Stop after this many epochs without a validation gain; 0 never stops.
    pub patience: u64,
    pub val_fraction: f64,
    pub seed: u64,

    pub refinement: bool,
    pub frontdoor: bool,
    pub counterfactual: bool,
    pub extended_refinement: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let w = LossWeights::default();
        let s = ContextMaskSchedule::default();
        let o = OptimizerConfig::default();
        let r = RefinementConfig::default();
        Self {
            model_dim: m.model_dim,
            n_encoder_layers: m.n_encoder_layers,
            n_decoder_layers: m.n_decoder_layers,
            n_heads: m.n_heads,
            ffn_mult: m.ffn_mult,
            max_caption_len: m.max_caption_len,
            max_aux_len: m.max_aux_len,
            dropout: m.dropout,
            feature_dim: m.feature_dim,
            frames: m.frames,
            lambda_c: w.lambda_c,
            lambda_r: w.lambda_r,
            lambda_v: w.lambda_v,
            lambda_s: w.lambda_s,
            label_smoothing: 0.1,
            temperature: 0.07,
            similarity_gate: SimilarityGate::Causal,
            multi_mask_prob: s.multi_mask_prob,
            min_mask_count: s.min_count,
            max_mask_count: s.max_count,
            interior_target_prob: 1.0,
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            clip_norm: o.clip_norm,
            warmup_steps: o.warmup_steps,
            epochs: 20,
            batch_size: 8,
            checkpoint_every: 0,
            patience: 0,
            val_fraction: 0.0,
            seed: 0,
            refinement: r.enabled,
            frontdoor: r.frontdoor,
            counterfactual: r.counterfactual,
            extended_refinement: r.extended,
        }
    }
}

/// Names accepted by [`TrainConfig::ablate`].
pub const ABLATIONS: [&str; 8] =
    ["refinement", "frontdoor", "counterfactual", "context", "losses:c", "losses:r", "losses:v", "losses:s"];

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.loss_weights().validate()?;
        self.schedule().validate()?;
        self.optimizer().validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be \u{2265} 1".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing must lie in [0, 1), got {}", self.label_smoothing));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.interior_target_prob) {
            return bad(format!("interior_target_prob must lie in [0, 1], got {}", self.interior_target_prob));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            model_dim: self.model_dim,
            n_encoder_layers: self.n_encoder_layers,
            n_decoder_layers: self.n_decoder_layers,
            n_heads: self.n_heads,
            max_caption_len: self.max_caption_len,
            max_aux_len: self.max_aux_len,
            dropout: self.dropout,
            seed: self.seed,
            feature_dim: self.feature_dim,
            frames: self.frames,
            ffn_mult: self.ffn_mult,
            ..ModelConfig::default()
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda_c: self.lambda_c, lambda_r: self.lambda_r, lambda_v: self.lambda_v, lambda_s: self.lambda_s }
    }

    pub fn schedule(&self) -> ContextMaskSchedule {
        ContextMaskSchedule {
            multi_mask_prob: self.multi_mask_prob,
            min_count: self.min_mask_count,
            max_count: self.max_mask_count,
            seed: self.seed,
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            warmup_steps: self.warmup_steps,
        }
    }

    pub fn refinement_config(&self) -> RefinementConfig {
        RefinementConfig {
            enabled: self.refinement,
            frontdoor: self.frontdoor,
            counterfactual: self.counterfactual,
            extended: self.extended_refinement,
        }
    }

    /// Switches off one component by name (see [`ABLATIONS`]).
    pub fn ablate(&mut self, name: &str) -> Result<()> {
        match name {
            "refinement" => self.refinement = false,
            "frontdoor" => self.frontdoor = false,
            "counterfactual" => self.counterfactual = false,
            "context" => self.multi_mask_prob = 0.0,
            "losses:c" => self.lambda_c = 0.0,
            "losses:r" => self.lambda_r = 0.0,
            "losses:v" => self.lambda_v = 0.0,
            "losses:s" => self.lambda_s = 0.0,
            other => return Err(Error::Config(format!("unknown ablation {other:?}; expected one of {}", ABLATIONS.join(", ")))),
        }
        Ok(())
    }
}
