use std::collections::HashMap;
use std::fs;
use std::path::Path;

use atvc_scene::{Color, Material, Shape, Size};
use thiserror::Error;

pub const PAD: u32 = 0;
pub const SOS: u32 = 1;
pub const EOS: u32 = 2;
/// Starts the answer segment.
pub const SEPA: u32 = 3;

/// Default question length in tokens, including [SOS] and [EOS].
pub const QUESTION_LEN: usize = 24;
/// Default answer length in tokens, including [SEPA] and [EOS].
pub const ANSWER_LEN: usize = 32;

const SPECIALS: [&str; 4] = ["[PAD]", "[SOS]", "[EOS]", "[SEPA]"];

const WORDS: &[&str] = &[
    ".",
    ",",
    "please",
    "put",
    "the",
    "on",
    "top",
    "of",
    "under",
    "exchange",
    "color",
    "colors",
    "position",
    "positions",
    "and",
    "no",
    "problem",
    "this",
    "action",
    "cannot",
    "be",
    "done",
    "because",
    "there",
    "is",
    "forbidden",
    "you",
    "an",
    "object",
];

#[derive(Debug, Error)]
pub enum TextError {
    #[error("word `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),

    #[error("{tokens} tokens do not fit a sequence of length {max_len}")]
    Overflow { tokens: usize, max_len: usize },

    #[error("vocabulary file {path}: {msg}")]
    File { path: String, msg: String },
}

/// Bijection between tokens and ids; ids are line numbers in the vocabulary file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Default for Vocabulary {
    /// The closed vocabulary of the query and answer templates.
    fn default() -> Self {
        let attrs = Shape::ALL
            .iter()
            .map(|v| v.word())
            .chain(Size::ALL.iter().map(|v| v.word()))
            .chain(Color::ALL.iter().map(|v| v.word()))
            .chain(Material::ALL.iter().map(|v| v.word()));
        let tokens: Vec<String> = SPECIALS
            .iter()
            .copied()
            .chain(WORDS.iter().copied())
            .chain(attrs)
            .map(str::to_string)
            .collect();
        Vocabulary::from_tokens(tokens).expect("built-in vocabulary is a bijection")
    }
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS {
            return Err("the first four tokens must be [PAD] [SOS] [EOS] [SEPA]".into());
        }
        let mut ids = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(format!("line {}: bad token `{t}`", i + 1));
            }
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(format!("line {}: duplicate token `{t}`", i + 1));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        id <= SEPA
    }

    /// Ids of normalized `text` without any framing; fails on the first unknown word.
    pub fn ids_of(&self, text: &str) -> Result<Vec<u32>, TextError> {
        crate::normalize(text)
            .into_iter()
            .map(|w| self.id(&w).ok_or(TextError::OutOfVocabulary(w)))
            .collect()
    }

    fn frame(&self, start: u32, text: &str, max_len: usize) -> Result<Vec<u32>, TextError> {
        let body = self.ids_of(text)?;
        if body.len() + 2 > max_len {
            return Err(TextError::Overflow {
                tokens: body.len() + 2,
                max_len,
            });
        }
        let mut out = Vec::with_capacity(max_len);
        out.push(start);
        out.extend(body);
        out.push(EOS);
        out.resize(max_len, PAD);
        Ok(out)
    }

    /// `[SOS] words [EOS] [PAD]...` of exactly `max_len` ids.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<Vec<u32>, TextError> {
        self.frame(SOS, text, max_len)
    }

    /// `[SEPA] words [EOS] [PAD]...` of exactly `max_len` ids.
    pub fn encode_answer(&self, text: &str, max_len: usize) -> Result<Vec<u32>, TextError> {
        self.frame(SEPA, text, max_len)
    }

    /// Words up to the first [EOS], skipping other special tokens and unknown ids.
    pub fn decode_words(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| !Self::is_special(i))
            .filter_map(|&i| self.token(i).map(str::to_string))
            .collect()
    }

    /// Normalized text: decoded words joined by single spaces.
    pub fn decode(&self, ids: &[u32]) -> String {
        self.decode_words(ids).join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        fs::write(path, s).map_err(|e| TextError::File {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        let err = |msg: String| TextError::File {
            path: path.display().to_string(),
            msg,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Vocabulary::from_tokens(text.lines().map(str::to_string).collect()).map_err(err)
    }
}
