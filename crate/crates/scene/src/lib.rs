//! Synthetic scenes for text-driven re-creation.
//!
//! A [`Scene`] is a handful of objects on a 4×4 placement grid. Scenes are
//! rasterized to small RGB images, paired with ten templated manipulation
//! queries each, and classified by a fixed rule engine into queries that can be
//! carried out, cannot be carried out (an operand is absent), or are forbidden.
//! Can-queries come with the ground-truth scene after the action.

mod annotations;
mod error;
mod layout;
mod queries;
mod render;
mod rules;
mod scene;
mod vocab;

pub use annotations::{
    from_annotations, generate_dataset, image_filename, load_dataset, query_seed, read_annotations,
    recreation_filename, to_annotations, write_dataset, AnnotationFile, Dataset, DatasetConfig, SceneEntry,
    ANNOTATION_FILE, IMAGE_DIR, RECREATION_DIR,
};
pub use error::{Result, SceneError};
pub use layout::{Layout, GRID};
pub use queries::{
    answer_text, enumerate_queries, make_record, normalize_words, parse_question, question_text, QueryPlan,
    QueryRecord, QUERIES_PER_SCENE, SPLIT,
};
pub use render::{load_png, render, save_png, BACKGROUND};
pub use rules::{apply_action, classify, Action, AnswerType, Classification, ForbiddenReason};
pub use scene::{dataset_scene, sample_scene, splitmix64, Scene, SceneConfig, SceneObject};
pub use vocab::{Color, Descriptor, Material, Shape, Size};
