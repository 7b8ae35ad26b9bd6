use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, VqError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Vqvae,
    Vqgan,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Vqvae => "vqvae",
            Variant::Vqgan => "vqgan",
        })
    }
}

impl FromStr for Variant {
    type Err = VqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vqvae" => Ok(Variant::Vqvae),
            "vqgan" => Ok(Variant::Vqgan),
            other => Err(VqError::Config(format!("unknown variant `{other}` (vqvae|vqgan)"))),
        }
    }
}

/// Architecture and optimization settings for stage 1.
///
/// Serialized as flat `key = value` TOML; missing keys take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqConfig {
    pub variant: Variant,
    pub image_size: usize,
    pub codebook_size: usize,
    pub dim: usize,
    pub downsample: usize,
    /// Output channels of the stride-2 encoder convolutions, one per halving.
    pub channels: Vec<usize>,
    /// Residual 3x3 blocks at latent resolution in both encoder and decoder.
    pub res_blocks: usize,
    pub beta: f32,
    pub lr: f32,
    pub lr_decay: f32,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub gan_weight: f32,
    pub gan_warmup: u64,
    pub perceptual_weight: f32,
    pub disc_lr: f32,
}

impl Default for VqConfig {
    fn default() -> Self {
        VqConfig {
            variant: Variant::Vqvae,
            image_size: 64,
            codebook_size: 512,
            dim: 64,
            downsample: 8,
            channels: vec![48, 96, 128],
            res_blocks: 1,
            beta: 0.25,
            lr: 1e-3,
            lr_decay: 0.99,
            epochs: 200,
            batch_size: 16,
            max_steps: None,
            seed: 0,
            gan_weight: 0.1,
            gan_warmup: 2000,
            perceptual_weight: 1.0,
            disc_lr: 1e-4,
        }
    }
}

impl VqConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(VqError::Config(msg));
        if self.codebook_size == 0 || self.dim == 0 {
            return bad("codebook_size and dim must be positive".into());
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("channels must be a non-empty list of positive widths".into());
        }
        if self.downsample != 1 << self.channels.len() {
            return bad(format!(
                "downsample {} needs {} stride-2 stages, channels lists {}",
                self.downsample,
                self.downsample.trailing_zeros(),
                self.channels.len()
            ));
        }
        if self.image_size == 0 || self.image_size % self.downsample != 0 {
            return bad(format!(
                "image_size {} is not a multiple of downsample {}",
                self.image_size, self.downsample
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, v) in [
            ("beta", self.beta),
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
            ("gan_weight", self.gan_weight),
            ("perceptual_weight", self.perceptual_weight),
            ("disc_lr", self.disc_lr),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        self.image_size / self.downsample
    }

    /// Learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f32 {
        (self.lr as f64 * (self.lr_decay as f64).powi(epoch as i32)) as f32
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: VqConfig = toml::from_str(text).map_err(|e| VqError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| VqError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}
