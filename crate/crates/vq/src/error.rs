use std::path::PathBuf;

use thiserror::Error;

use crate::model::VqModel;

pub type Result<T, E = VqError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum VqError {
    #[error(transparent)]
    Tensor(#[from] atvc_tensor::TensorError),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("image {got:?} does not fit the model (expected {want}x{want} RGB)")]
    ImageShape { got: Vec<usize>, want: usize },

    #[error("latent grid: {0}")]
    Latents(String),

    #[error("training diverged at step {step} ({what}); last good parameters are attached")]
    Diverged {
        step: u64,
        what: String,
        last_good: Box<VqModel>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
}
