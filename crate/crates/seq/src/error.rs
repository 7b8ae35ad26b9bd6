use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SeqError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SeqError {
    #[error(transparent)]
    Tensor(#[from] atvc_tensor::TensorError),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("sequence: {0}")]
    Sequence(String),

    #[error("can-pair {0} has no ground-truth re-creation latents")]
    MissingRecreation(String),

    #[error("mask stack built for length {mask} applied to length {seq}")]
    MaskLength { mask: usize, seq: usize },

    #[error("training diverged at step {step}: loss {loss}, {detail}")]
    Diverged { step: u64, loss: f32, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
}
