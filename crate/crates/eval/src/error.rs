use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("image shapes differ: {a:?} vs {b:?}")]
    Shape { a: (u32, u32), b: (u32, u32) },
    #[error("image {got:?} is smaller than the {window}x{window} window")]
    TooSmall { got: (u32, u32), window: usize },
    #[error("query `{0}` has no ground-truth re-creation")]
    MissingGold(String),
    #[error("nothing to aggregate")]
    Empty,
    #[error("{path}:{line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("{path}: no rank for {} queries, first `{}`", missing.len(), missing[0])]
    Coverage { path: PathBuf, missing: Vec<String> },
    #[error(transparent)]
    Scene(#[from] atvc_scene::SceneError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;
