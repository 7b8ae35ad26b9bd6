use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("could not place {objects} objects for seed {seed} after {attempts} attempts")]
    Placement { seed: u64, objects: usize, attempts: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("action cannot be applied: {0}")]
    NotApplicable(String),

    #[error("scene {scene_id} admits only {found} distinct valid queries")]
    TooFewQueries { scene_id: String, found: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T, E = SceneError> = std::result::Result<T, E>;
