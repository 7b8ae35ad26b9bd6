use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SeqError};

/// Attention pattern selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Row, column, row, convolutional image-to-image masks cycled over layers.
    Sparse,
    /// Plain causal attention in every layer.
    DenseCausal,
}

/// What fills the M slot of a rejected pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placeholder {
    /// Copy of the input image latents.
    VLatents,
    /// A dedicated null image token in every cell.
    NullToken,
}

/// Transformer shape plus the fixed T|V|M|A layout it runs over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub model_dim: usize,
    pub text_len: usize,
    pub answer_len: usize,
    /// Latent grid side G; image segments hold G² tokens.
    pub grid: usize,
    pub text_vocab: usize,
    pub codebook_size: usize,
    pub mask: MaskMode,
    pub conv_kernel: usize,
    pub placeholder: Placeholder,
    pub seed: u64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self::desk(64, 512)
    }
}

impl TransformerConfig {
    /// Small preset that trains on a workstation CPU.
    pub fn desk(text_vocab: usize, codebook_size: usize) -> Self {
        TransformerConfig {
            layers: 4,
            heads: 4,
            head_dim: 32,
            model_dim: 128,
            text_len: 24,
            answer_len: 32,
            grid: 8,
            text_vocab,
            codebook_size,
            mask: MaskMode::Sparse,
            conv_kernel: 3,
            placeholder: Placeholder::VLatents,
            seed: 0,
        }
    }

    /// Published model shape: 4 layers, 8 heads of width 64, model width 512.
    pub fn full(text_vocab: usize, codebook_size: usize) -> Self {
        TransformerConfig {
            heads: 8,
            head_dim: 64,
            model_dim: 512,
            text_len: 64,
            grid: 32,
            ..Self::desk(text_vocab, codebook_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("model_dim", self.model_dim),
            ("text_len", self.text_len),
            ("answer_len", self.answer_len),
            ("grid", self.grid),
            ("text_vocab", self.text_vocab),
            ("codebook_size", self.codebook_size),
        ];
        for (name, v) in pos {
            if v == 0 {
                return Err(SeqError::Config(format!("{name} must be positive")));
            }
        }
        if self.conv_kernel % 2 == 0 {
            return Err(SeqError::Config(format!(
                "conv_kernel must be odd, got {}",
                self.conv_kernel
            )));
        }
        Ok(())
    }

    pub fn image_tokens(&self) -> usize {
        self.grid * self.grid
    }

    pub fn seq_len(&self) -> usize {
        self.text_len + 2 * self.image_tokens() + self.answer_len
    }

    /// Joint vocabulary: text ids, then codebook ids, then the null image token.
    pub fn vocab_size(&self) -> usize {
        self.text_vocab + self.codebook_size + 1
    }

    pub fn code_offset(&self) -> usize {
        self.text_vocab
    }

    pub fn null_token(&self) -> usize {
        self.text_vocab + self.codebook_size
    }

    pub fn attn_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Optimizer settings for stage 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f32,
    pub steps: u64,
    pub batch_size: usize,
    pub grad_clip: Option<f32>,
    pub seed: u64,
    /// Stop early once weighted next-token accuracy on the batch reaches this value.
    pub target_accuracy: Option<f64>,
    /// Every this many steps, regenerate the M slot of rejected pairs greedily
    /// with the current model. Each later batch then shows a rejected pair with
    /// either the built placeholder or the regenerated M, chosen at random.
    /// M targets of rejected pairs keep zero weight either way.
    pub placeholder_refresh: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            steps: 3000,
            batch_size: 20,
            grad_clip: Some(1.0),
            seed: 0,
            target_accuracy: None,
            placeholder_refresh: None,
        }
    }
}
