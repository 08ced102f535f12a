use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::N_MELS;
use crate::error::{Error, Result};

/// Total time downsampling of the convolutional front of the audio encoder.
pub const SUBSAMPLING: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub backbone_layers: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    /// Hidden width of feed-forward layers as a multiple of `d_model`.
    pub ff_mult: usize,
    pub conv_kernel: usize,
    pub feature_dims: usize,
    pub vocab_size: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    /// Also adapt the audio projector, not just the encoder.
    pub lora_on_projector: bool,
    pub max_audio_frames: usize,
    pub max_text_tokens: usize,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            backbone_layers: 3,
            heads: 4,
            encoder_blocks: 2,
            ff_mult: 2,
            conv_kernel: 5,
            feature_dims: N_MELS,
            vocab_size: 0,
            lora_rank: 8,
            lora_alpha: 16.0,
            lora_on_projector: true,
            max_audio_frames: 512,
            max_text_tokens: 128,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// A very small configuration for exhaustive numeric checks.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 8,
            backbone_layers: 1,
            heads: 2,
            encoder_blocks: 1,
            ff_mult: 2,
            conv_kernel: 3,
            feature_dims: 6,
            vocab_size,
            lora_rank: 2,
            lora_alpha: 4.0,
            max_audio_frames: 64,
            max_text_tokens: 32,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            ));
        }
        if self.lora_rank == 0 {
            return fail("LoRA rank must be at least 1".into());
        }
        if self.lora_alpha.is_nan() || self.lora_alpha <= 0.0 {
            return fail(format!("LoRA alpha must be positive, got {}", self.lora_alpha));
        }
        if self.vocab_size == 0 || self.vocab_size > 1024 {
            return fail(format!("vocabulary size {} outside 1..=1024", self.vocab_size));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return fail("depthwise kernel width must be odd".into());
        }
        if self.ff_mult == 0 || self.feature_dims == 0 || self.backbone_layers == 0 {
            return fail("zero-sized model dimension".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn ff_dim(&self) -> usize {
        self.d_model * self.ff_mult
    }

    pub fn lora_scale(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }

    pub fn max_audio_slots(&self) -> usize {
        self.max_audio_frames.div_ceil(SUBSAMPLING)
    }

    /// BOS, instruction, audio, text, score.
    pub fn max_sequence(&self) -> usize {
        2 + self.max_audio_slots() + self.max_text_tokens.max(1) + 1
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
