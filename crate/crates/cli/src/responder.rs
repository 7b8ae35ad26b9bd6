use anyhow::{anyhow, Result};
use atvc_scene::{answer_text, apply_action, classify, parse_question, render, AnswerType, QueryRecord, Scene};
use atvc_seq::{generate, Decoding, Transformer};
use atvc_text::{canonicalize_answer, pretty, AnswerKind, TextError, Vocabulary};
use atvc_vq::{LatentGrid, VqModel};
use image::RgbImage;
use thiserror::Error;

/// One instruction against one image.
pub struct Turn<'a> {
    pub image: &'a RgbImage,
    pub instruction: &'a str,
    /// Symbolic scene behind `image`, when known.
    pub scene: Option<&'a Scene>,
    /// Ground truth for this exact pair, when scoring a dataset.
    pub gold: Option<&'a QueryRecord>,
}

#[derive(Clone, Debug)]
pub struct Reply {
    pub answer: String,
    pub image: Option<RgbImage>,
    /// Symbolic scene after the action, for responders that track one.
    pub scene: Option<Scene>,
}

#[derive(Debug, Error)]
pub enum RespondError {
    /// The instruction cannot be read; `word` is the first unknown word, if any.
    #[error("{message}")]
    Instruction { message: String, word: Option<String> },
    /// This responder cannot serve the request, e.g. rules on an uploaded image.
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Failed(#[from] anyhow::Error),
}

pub fn answer_kind(answer: &str) -> AnswerKind {
    canonicalize_answer(answer).kind
}

pub fn kind_name(kind: AnswerKind) -> &'static str {
    match kind {
        AnswerKind::Can => "can",
        AnswerKind::Cannot => "cannot",
        AnswerKind::Forbidden => "forbidden",
        AnswerKind::Invalid => "invalid",
    }
}

pub trait Responder: Send + Sync {
    fn respond(&self, turn: &Turn<'_>) -> Result<Reply, RespondError>;
}

/// Check an instruction against the text vocabulary and question length.
pub fn check_instruction(vocab: &Vocabulary, text: &str, max_len: usize) -> Result<Vec<u32>, RespondError> {
    vocab.encode(text, max_len).map_err(|e| {
        let word = match &e {
            TextError::OutOfVocabulary(w) => Some(w.clone()),
            _ => None,
        };
        RespondError::Instruction {
            message: e.to_string(),
            word,
        }
    })
}

/// Stage-1 codec plus stage-2 transformer.
pub struct ModelResponder {
    pub vq: VqModel,
    pub seq: Transformer,
    pub vocab: Vocabulary,
    pub decoding: Decoding,
}

impl Responder for ModelResponder {
    fn respond(&self, turn: &Turn<'_>) -> Result<Reply, RespondError> {
        let question = check_instruction(&self.vocab, turn.instruction, self.seq.config.text_len)?;
        let v = self.vq.encode_image(turn.image).map_err(|e| anyhow!(e))?;
        let out = generate(&self.seq, &question, &v.indices, self.decoding).map_err(|e| anyhow!(e))?;
        let answer = pretty(&self.vocab.decode_words(&out.answer));
        let image = if answer_kind(&answer) == AnswerKind::Can {
            let grid = LatentGrid::new(self.vq.grid_size(), out.m_codes, self.vq.config.codebook_size)
                .map_err(|e| anyhow!(e))?;
            Some(self.vq.decode_latents(&grid).map_err(|e| anyhow!(e))?)
        } else {
            None
        };
        Ok(Reply {
            answer,
            image,
            scene: None,
        })
    }
}

/// Exact symbolic answers for scenes whose layout is known.
pub struct RuleResponder;

impl Responder for RuleResponder {
    fn respond(&self, turn: &Turn<'_>) -> Result<Reply, RespondError> {
        let scene = turn
            .scene
            .ok_or_else(|| RespondError::Unsupported("the rule responder only works on dataset scenes".into()))?;
        let (action, a, b) = parse_question(turn.instruction).map_err(|e| RespondError::Instruction {
            message: e.to_string(),
            word: None,
        })?;
        let c = classify(scene, action, &a, &b);
        let answer = answer_text(&c);
        if c.answer_type != AnswerType::Can {
            return Ok(Reply {
                answer,
                image: None,
                scene: None,
            });
        }
        let after = apply_action(scene, action, &a, &b).map_err(|e| anyhow!(e))?;
        Ok(Reply {
            answer,
            image: Some(render(&after).map_err(|e| anyhow!(e))?),
            scene: Some(after),
        })
    }
}

/// Replays the ground truth of the pair being scored.
pub struct GoldResponder;

impl Responder for GoldResponder {
    fn respond(&self, turn: &Turn<'_>) -> Result<Reply, RespondError> {
        let gold = turn
            .gold
            .ok_or_else(|| RespondError::Unsupported("the gold responder needs a dataset pair".into()))?;
        let image = match &gold.recreated {
            Some(s) => Some(render(s).map_err(|e| anyhow!(e))?),
            None => None,
        };
        Ok(Reply {
            answer: gold.answer.clone(),
            image,
            scene: gold.recreated.clone(),
        })
    }
}
