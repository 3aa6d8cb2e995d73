use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::MAX_TEXT_LEN;
use crate::vocab::Vocab;

/// Network sizes. Defaults are the desk-scale preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub model_dim: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_caption_len: usize,
    pub max_aux_len: usize,
    pub dropout: f64,
    pub seed: u64,
    pub feature_dim: usize,
    pub frames: usize,
    /// Hidden width of feed-forward sublayers as a multiple of `model_dim`.
    pub ffn_mult: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_dim: 128,
            n_encoder_layers: 1,
            n_decoder_layers: 2,
            n_heads: 4,
            vocab_size: Vocab::get().len(),
            max_caption_len: MAX_TEXT_LEN,
            max_aux_len: MAX_TEXT_LEN,
            dropout: 0.0,
            seed: 0,
            feature_dim: 64,
            frames: 8,
            ffn_mult: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.model_dim == 0 || self.n_heads == 0 || !self.model_dim.is_multiple_of(self.n_heads) {
            return bad(format!("model_dim {} must be a positive multiple of n_heads {}", self.model_dim, self.n_heads));
        }
        if !self.model_dim.is_multiple_of(2) {
            return bad("model_dim must be even for sinusoidal positions".into());
        }
        for (name, v) in [
            ("max_caption_len", self.max_caption_len),
            ("max_aux_len", self.max_aux_len),
            ("feature_dim", self.feature_dim),
            ("frames", self.frames),
            ("ffn_mult", self.ffn_mult),
            ("n_decoder_layers", self.n_decoder_layers),
        ] {
            if v < 1 {
                return bad(format!("{name} must be \u{2265} 1"));
            }
        }
        if self.vocab_size < Vocab::get().len() {
            return bad(format!("vocab_size {} is smaller than the vocabulary ({})", self.vocab_size, Vocab::get().len()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}
