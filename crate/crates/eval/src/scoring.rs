use std::fmt;
use std::str::FromStr;

use atvc_scene::{render, AnswerType, QueryRecord};
use atvc_text::{canonicalize_answer, explanation_score, AnswerKind, CanonicalAnswer};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::fsim::fsim;
use crate::metrics::{psnr, ssim};

/// Human (or automatic) grade of a re-created image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rank {
    A,
    B,
    C,
}

impl Rank {
    pub fn value(self) -> f64 {
        match self {
            Rank::A => 1.0,
            Rank::B => 0.5,
            Rank::C => 0.0,
        }
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rank::A => "A",
            Rank::B => "B",
            Rank::C => "C",
        })
    }
}

impl FromStr for Rank {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "A" => Ok(Rank::A),
            "B" => Ok(Rank::B),
            "C" => Ok(Rank::C),
            other => Err(format!("rank must be A, B or C, got `{other}`")),
        }
    }
}

/// Image quality of a re-creation against the rendered ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub psnr: f64,
    pub ssim: f64,
    pub fsim: f64,
}

impl ImageScores {
    pub fn compute(pred: &RgbImage, gold: &RgbImage) -> Result<Self> {
        Ok(ImageScores {
            psnr: psnr(pred, gold)?,
            ssim: ssim(pred, gold)?,
            fsim: fsim(pred, gold)?,
        })
    }
}

/// Scores for one (gold, prediction) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub query_id: String,
    pub answer_type: AnswerType,
    pub gold_answer: String,
    pub pred_answer: String,
    pub gold: CanonicalAnswer,
    pub pred: CanonicalAnswer,
    pub type_correct: bool,
    /// Canonical answers are equal.
    pub exp_exact: bool,
    /// Jaccard overlap of the explanations.
    pub exp_score: f64,
    /// Present only for can-pairs scored with a predicted image.
    pub image: Option<ImageScores>,
    pub hr_rank: Option<Rank>,
    pub fm: f64,
}

fn kind_of(t: AnswerType) -> AnswerKind {
    match t {
        AnswerType::Can => AnswerKind::Can,
        AnswerType::Cannot => AnswerKind::Cannot,
        AnswerType::Forbidden => AnswerKind::Forbidden,
    }
}

/// Mean of the per-pair components: answer type and explanation for rejected
/// pairs, answer correctness and image rank (when known) for can-pairs.
pub fn fm_score(answer_type: AnswerType, type_correct: bool, exp_score: f64, hr_rank: Option<Rank>) -> f64 {
    let t = if type_correct { 1.0 } else { 0.0 };
    match (answer_type, hr_rank) {
        (AnswerType::Can, Some(r)) => (t + r.value()) / 2.0,
        (AnswerType::Can, None) => t,
        _ => (t + exp_score) / 2.0,
    }
}

impl PairResult {
    /// Recompute `fm` from the stored fields.
    pub fn recompute_fm(&self) -> f64 {
        fm_score(self.answer_type, self.type_correct, self.exp_score, self.hr_rank)
    }
}

/// Score a predicted answer (and, for can-pairs, a predicted image).
///
/// The image is compared with the rasterized ground-truth re-creation; it is
/// ignored for rejected pairs.
pub fn score_pair(
    gold: &QueryRecord,
    pred_answer: &str,
    pred_image: Option<&RgbImage>,
    hr_rank: Option<Rank>,
) -> Result<PairResult> {
    let g = canonicalize_answer(&gold.answer);
    let p = canonicalize_answer(pred_answer);
    let type_correct = p.kind == kind_of(gold.answer_type);
    let exp_score = explanation_score(&p, &g);
    let image = match (gold.answer_type, pred_image) {
        (AnswerType::Can, Some(img)) => {
            let scene = gold
                .recreated
                .as_ref()
                .ok_or_else(|| EvalError::MissingGold(gold.query_id.clone()))?;
            Some(ImageScores::compute(img, &render(scene)?)?)
        }
        _ => None,
    };
    let hr_rank = if gold.answer_type == AnswerType::Can {
        hr_rank
    } else {
        None
    };
    Ok(PairResult {
        query_id: gold.query_id.clone(),
        answer_type: gold.answer_type,
        gold_answer: gold.answer.clone(),
        pred_answer: pred_answer.to_string(),
        exp_exact: p == g,
        gold: g,
        pred: p,
        type_correct,
        exp_score,
        image,
        hr_rank,
        fm: fm_score(gold.answer_type, type_correct, exp_score, hr_rank),
    })
}
