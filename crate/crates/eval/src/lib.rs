//! Scoring for text-driven re-creation.
//!
//! Image metrics (PSNR, SSIM, FSIM) compare a re-created image with the
//! rasterized ground truth. Answers are canonicalized and scored for type and
//! explanation; per-pair results aggregate into a report with per-category
//! accuracies, a count-weighted score, image means, rank percentages and the
//! mean per-pair FM score. Human ranks travel through a JSONL manifest, and
//! [`auto_rank`] grades symbolic scenes without raters.

mod error;
mod fsim;
mod manifest;
mod metrics;
mod rank;
mod report;
mod scoring;

pub use error::{EvalError, Result};
pub use fsim::{conv2_same, fsim, fsim_planes, gradient_magnitude, phase_congruency, Plane};
pub use manifest::{export_hr_manifest, import_hr_ranks, ManifestRow};
pub use metrics::{luma, psnr, ssim, PSNR_CAP, SSIM_WINDOW};
pub use rank::{auto_rank, RankConfig};
pub use report::{
    aggregate, hr_score, weighted_score, CategoryStats, EvalReport, HrSummary, ImageSummary, ScoreFormula,
};
pub use scoring::{fm_score, score_pair, ImageScores, PairResult, Rank};
