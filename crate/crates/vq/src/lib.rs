//! Stage-1 image auto-encoders. A strided convolutional encoder maps a 64x64
//! render to an 8x8 grid of feature vectors, each snapped to its nearest
//! codebook row; the decoder inverts the quantized grid. The VQGAN variant
//! adds a patch discriminator, an adversarial term and a discriminator
//! feature-matching term.

mod config;
mod error;
mod loss;
mod model;
mod quantize;
mod train;

pub use config::{Variant, VqConfig};
pub use error::{Result, VqError};
pub use loss::{feature_matching, gan_losses, vq_loss, VqLoss};
pub use model::{
    image_to_tensor, sidecar_path, stack, tensor_to_image, unstack, CheckpointMeta, DiscOut, Forward, VqModel,
    CHECKPOINT_KIND, CODEBOOK,
};
pub use quantize::{nearest_codes, quantize, LatentGrid};
pub use train::{reconstruction_mse, EpochLog, Stage1Trainer, StepStats};
