use serde::{Deserialize, Serialize};

use crate::config::{Placeholder, TransformerConfig};
use crate::error::{Result, SeqError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    T,
    V,
    M,
    A,
}

impl Segment {
    pub fn id(self) -> usize {
        self as usize
    }

    pub fn is_image(self) -> bool {
        matches!(self, Segment::V | Segment::M)
    }
}

/// Position bookkeeping for the fixed `[T][V][M][A]` layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub text_len: usize,
    pub grid: usize,
    pub answer_len: usize,
}

impl Layout {
    pub fn new(cfg: &TransformerConfig) -> Self {
        Layout {
            text_len: cfg.text_len,
            grid: cfg.grid,
            answer_len: cfg.answer_len,
        }
    }

    pub fn image_tokens(&self) -> usize {
        self.grid * self.grid
    }

    pub fn len(&self) -> usize {
        self.text_len + 2 * self.image_tokens() + self.answer_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn start(&self, seg: Segment) -> usize {
        let n = self.image_tokens();
        match seg {
            Segment::T => 0,
            Segment::V => self.text_len,
            Segment::M => self.text_len + n,
            Segment::A => self.text_len + 2 * n,
        }
    }

    pub fn range(&self, seg: Segment) -> std::ops::Range<usize> {
        let s = self.start(seg);
        let n = match seg {
            Segment::T => self.text_len,
            Segment::V | Segment::M => self.image_tokens(),
            Segment::A => self.answer_len,
        };
        s..s + n
    }

    pub fn segment(&self, pos: usize) -> Segment {
        assert!(pos < self.len(), "position {pos} outside sequence of {}", self.len());
        if pos < self.start(Segment::V) {
            Segment::T
        } else if pos < self.start(Segment::M) {
            Segment::V
        } else if pos < self.start(Segment::A) {
            Segment::M
        } else {
            Segment::A
        }
    }

    /// Latent (row, col) of an image position.
    pub fn cell(&self, pos: usize) -> Option<(usize, usize)> {
        let seg = self.segment(pos);
        seg.is_image().then(|| {
            let k = pos - self.start(seg);
            (k / self.grid, k % self.grid)
        })
    }

    /// Index into the shared 1-D text position table (T first, then A).
    pub fn text_index(&self, pos: usize) -> Option<usize> {
        match self.segment(pos) {
            Segment::T => Some(pos),
            Segment::A => Some(self.text_len + pos - self.start(Segment::A)),
            _ => None,
        }
    }
}

/// One training or prompt sequence in the joint vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub segments: Vec<Segment>,
    /// `loss_weights[i]` weights the prediction of `ids[i]` from the prefix before it.
    pub loss_weights: Vec<f32>,
    pub rejected: bool,
}

/// Assemble `T|V|M|A` for one pair.
///
/// `question` and `answer` are padded text ids of length `text_len` and
/// `answer_len`; `v` and `m` are codebook indices in `[0, K)`. Rejected pairs
/// get placeholder M content and zero weight on every M-segment target.
pub fn build_sequence(
    cfg: &TransformerConfig,
    query_id: &str,
    question: &[u32],
    v: &[usize],
    m: Option<&[usize]>,
    answer: &[u32],
    rejected: bool,
) -> Result<TokenSequence> {
    let lay = Layout::new(cfg);
    let n = lay.image_tokens();
    if question.len() != cfg.text_len || answer.len() != cfg.answer_len {
        return Err(SeqError::Sequence(format!(
            "{query_id}: question/answer lengths {}/{} but layout wants {}/{}",
            question.len(),
            answer.len(),
            cfg.text_len,
            cfg.answer_len
        )));
    }
    if v.len() != n || m.is_some_and(|m| m.len() != n) {
        return Err(SeqError::Sequence(format!("{query_id}: image segments need {n} codes")));
    }
    let text_ok = |t: &&u32| (**t as usize) < cfg.text_vocab;
    if !question.iter().all(|t| text_ok(&t)) || !answer.iter().all(|t| text_ok(&t)) {
        return Err(SeqError::Sequence(format!(
            "{query_id}: text id outside text vocabulary"
        )));
    }
    if v.iter().chain(m.unwrap_or(&[])).any(|&c| c >= cfg.codebook_size) {
        return Err(SeqError::Sequence(format!("{query_id}: code outside codebook")));
    }
    let off = cfg.code_offset();
    let m_ids: Vec<usize> = match (m, rejected) {
        (Some(m), false) => m.iter().map(|&c| c + off).collect(),
        (None, false) => return Err(SeqError::MissingRecreation(query_id.to_string())),
        (_, true) => match cfg.placeholder {
            Placeholder::VLatents => v.iter().map(|&c| c + off).collect(),
            Placeholder::NullToken => vec![cfg.null_token(); n],
        },
    };
    let mut ids = Vec::with_capacity(lay.len());
    ids.extend(question.iter().map(|&t| t as usize));
    ids.extend(v.iter().map(|&c| c + off));
    ids.extend(m_ids);
    ids.extend(answer.iter().map(|&t| t as usize));
    let segments: Vec<Segment> = (0..lay.len()).map(|p| lay.segment(p)).collect();
    let m_range = lay.range(Segment::M);
    let loss_weights = (0..lay.len())
        .map(|p| {
            if p == 0 || (rejected && m_range.contains(&p)) {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    Ok(TokenSequence {
        ids,
        segments,
        loss_weights,
        rejected,
    })
}
