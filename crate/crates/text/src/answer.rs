use std::collections::BTreeSet;

use atvc_scene::ForbiddenReason;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Can,
    Cannot,
    Forbidden,
    /// Text that follows none of the answer templates.
    Invalid,
}

/// Order-free reading of an answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalAnswer {
    pub kind: AnswerKind,
    /// Normalized object phrases from the "no X" clauses.
    pub missing: BTreeSet<String>,
    pub reason: Option<ForbiddenReason>,
}

impl CanonicalAnswer {
    fn invalid() -> Self {
        CanonicalAnswer {
            kind: AnswerKind::Invalid,
            missing: BTreeSet::new(),
            reason: None,
        }
    }
}

const CANNOT: &[&str] = &["this", "action", "cannot", "be", "done", ".", "because", "there", "is"];
const FORBIDDEN: &[&str] = &["this", "action", "is", "forbidden", ".", "because"];
const SPHERE_UNDER: &[&str] = &["you", "cannot", "put", "the", "sphere", "under", "an", "object"];
const ON_SPHERE: &[&str] = &["you", "cannot", "put", "an", "object", "on", "the", "sphere"];
const AND_THERE_IS: &[&str] = &[",", "and", "there", "is"];

/// Parse `no X and no Y ... .` into phrases; `None` unless it consumes everything.
fn clauses(words: &[&str]) -> Option<BTreeSet<String>> {
    let body = words.strip_suffix(&["."])?;
    let mut out = BTreeSet::new();
    let mut rest = body.strip_prefix(&["no"])?;
    loop {
        let end = rest.windows(2).position(|w| w == ["and", "no"]).unwrap_or(rest.len());
        if end == 0 || rest[..end].contains(&".") {
            return None;
        }
        out.insert(rest[..end].join(" "));
        if end == rest.len() {
            return Some(out);
        }
        rest = &rest[end + 2..];
    }
}

/// Read free text as one of the answer templates. Total: anything else is
/// [`AnswerKind::Invalid`].
pub fn canonicalize_answer(text: &str) -> CanonicalAnswer {
    let owned = crate::normalize(text);
    let w: Vec<&str> = owned.iter().map(String::as_str).collect();
    if w == ["no", "problem", "."] {
        return CanonicalAnswer {
            kind: AnswerKind::Can,
            missing: BTreeSet::new(),
            reason: None,
        };
    }
    if let Some(rest) = w.strip_prefix(CANNOT) {
        return match clauses(rest) {
            Some(missing) => CanonicalAnswer {
                kind: AnswerKind::Cannot,
                missing,
                reason: None,
            },
            None => CanonicalAnswer::invalid(),
        };
    }
    if let Some(rest) = w.strip_prefix(FORBIDDEN) {
        let (reason, rest) = if let Some(r) = rest.strip_prefix(SPHERE_UNDER) {
            (ForbiddenReason::SphereUnder, r)
        } else if let Some(r) = rest.strip_prefix(ON_SPHERE) {
            (ForbiddenReason::OnTopOfSphere, r)
        } else {
            return CanonicalAnswer::invalid();
        };
        let missing = if rest == ["."] {
            Some(BTreeSet::new())
        } else {
            rest.strip_prefix(AND_THERE_IS).and_then(clauses)
        };
        return match missing {
            Some(missing) => CanonicalAnswer {
                kind: AnswerKind::Forbidden,
                missing,
                reason: Some(reason),
            },
            None => CanonicalAnswer::invalid(),
        };
    }
    CanonicalAnswer::invalid()
}

/// Jaccard overlap of the missing-object sets, with `J(∅, ∅) = 1`.
///
/// Zero when either answer is invalid or when the forbidden reasons differ.
/// The answer type itself is scored separately.
pub fn explanation_score(pred: &CanonicalAnswer, gold: &CanonicalAnswer) -> f64 {
    if pred.kind == AnswerKind::Invalid || gold.kind == AnswerKind::Invalid {
        return 0.0;
    }
    if pred.reason != gold.reason {
        return 0.0;
    }
    let union = pred.missing.union(&gold.missing).count();
    if union == 0 {
        return 1.0;
    }
    pred.missing.intersection(&gold.missing).count() as f64 / union as f64
}

/// Thresholded explanation check; a threshold of 1.0 demands exactly equal sets.
pub fn explanation_matches(pred: &CanonicalAnswer, gold: &CanonicalAnswer, threshold: f64) -> bool {
    explanation_score(pred, gold) >= threshold
}
