//! Stage-2 sequence model. A pre-norm decoder-only transformer reads the
//! fixed layout `[T][V][M][A]` (question text, input-image codes, re-created
//! image codes, answer text) in one joint vocabulary: text ids first, then
//! codebook ids shifted by the text vocabulary size, then a null image token.
//! Image-to-image attention inside a segment is restricted per layer to a
//! row, column or causal 3x3 neighbourhood.

mod config;
mod error;
mod infer;
mod layout;
mod mask;
mod model;
mod train;

pub use config::{MaskMode, Placeholder, TrainConfig, TransformerConfig};
pub use error::{Result, SeqError};
pub use infer::{generate, Cached, Decoding, Generated};
pub use layout::{build_sequence, Layout, Segment, TokenSequence};
pub use mask::{allowed, MaskKind, MaskStack, SPARSE_CYCLE};
pub use model::{shifted_targets, sidecar_path, CheckpointMeta, Transformer, CHECKPOINT_KIND, LN_EPS};
pub use train::{
    evaluate, memorization_ceiling, segment_accuracy, weighted_accuracy, LogRecord, SegmentAccuracy, Stage2Trainer,
};
