//! Query templates, answer texts and the per-scene query generator.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SceneError};
use crate::rules::{apply_action, classify, Action, AnswerType, Classification, ForbiddenReason};
use crate::scene::Scene;
use crate::vocab::{Descriptor, Shape};

pub const QUERIES_PER_SCENE: usize = 10;
/// Target split per scene: can, cannot, forbidden.
pub const SPLIT: [usize; 3] = [6, 2, 2];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    /// `{scene_id}_{ques_id}_{ques_idx:02}`.
    pub query_id: String,
    pub ques_id: usize,
    pub action: Action,
    pub operands: [Descriptor; 2],
    pub question: String,
    pub answer_type: AnswerType,
    pub conjuncts: Vec<Descriptor>,
    pub reason: Option<ForbiddenReason>,
    pub answer: String,
    pub recreated: Option<Scene>,
}

pub fn question_text(action: Action, a: &Descriptor, b: &Descriptor) -> String {
    match action {
        Action::PutOnTop => format!("Please put the {a} on top of the {b}."),
        Action::PutUnder => format!("Please put the {a} under the {b}."),
        Action::ExchangeColor => format!("Please exchange the color of the {a} and the {b}."),
        Action::ExchangePosition => format!("Please exchange the positions of the {a} and the {b}."),
    }
}

fn missing_clause(missing: &[Descriptor]) -> String {
    missing
        .iter()
        .map(|d| format!("no {d}"))
        .collect::<Vec<_>>()
        .join(" and ")
}

/// Textual feedback for a classification.
pub fn answer_text(c: &Classification) -> String {
    match (c.answer_type, c.reason) {
        (AnswerType::Can, _) => "No problem.".to_string(),
        (AnswerType::Cannot, _) => format!(
            "This action cannot be done. Because there is {}.",
            missing_clause(&c.missing)
        ),
        (AnswerType::Forbidden, reason) => {
            let rule = match reason {
                Some(ForbiddenReason::OnTopOfSphere) => "you cannot put an object on the sphere",
                _ => "you cannot put the sphere under an object",
            };
            if c.missing.is_empty() {
                format!("This action is forbidden. Because {rule}.")
            } else {
                format!(
                    "This action is forbidden. Because {rule}, and there is {}.",
                    missing_clause(&c.missing)
                )
            }
        }
    }
}

/// Lowercased words with `.` and `,` split off as their own tokens.
pub fn normalize_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let mut w = String::new();
        for ch in raw.chars().flat_map(char::to_lowercase) {
            if ch == '.' || ch == ',' {
                if !w.is_empty() {
                    out.push(std::mem::take(&mut w));
                }
                out.push(ch.to_string());
            } else {
                w.push(ch);
            }
        }
        if !w.is_empty() {
            out.push(w);
        }
    }
    out
}

/// Parse a query back into `(action, mover, target)`. Accepts the four
/// templates case-insensitively, with `the` before each operand optional.
pub fn parse_question(text: &str) -> Result<(Action, Descriptor, Descriptor)> {
    let words = normalize_words(text);
    let mut w: Vec<&str> = words.iter().map(String::as_str).collect();
    if w.last() == Some(&".") {
        w.pop();
    }
    let err = || SceneError::Parse(format!("not a recognized query: `{text}`"));
    let rest = w.strip_prefix(&["please"]).ok_or_else(err)?;
    let operand = |ws: &[&str]| -> Option<Descriptor> {
        let ws = ws.strip_prefix(&["the"]).unwrap_or(ws);
        Descriptor::from_words(ws)
    };
    let split_at = |ws: &[&str], sep: &[&str]| -> Option<(Descriptor, Descriptor)> {
        let pos = ws.windows(sep.len()).position(|win| win == sep)?;
        Some((operand(&ws[..pos])?, operand(&ws[pos + sep.len()..])?))
    };
    if let Some(body) = rest.strip_prefix(&["put"]) {
        if let Some((a, b)) = split_at(body, &["on", "top", "of"]) {
            return Ok((Action::PutOnTop, a, b));
        }
        if let Some((a, b)) = split_at(body, &["under"]) {
            return Ok((Action::PutUnder, a, b));
        }
        return Err(err());
    }
    let body = rest.strip_prefix(&["exchange", "the"]).ok_or_else(err)?;
    let (action, body) = match body.split_first() {
        Some((&"color" | &"colors", b)) => (Action::ExchangeColor, b),
        Some((&"position" | &"positions", b)) => (Action::ExchangePosition, b),
        _ => return Err(err()),
    };
    let body = body.strip_prefix(&["of"]).ok_or_else(err)?;
    let (a, b) = split_at(body, &["and"]).ok_or_else(err)?;
    Ok((action, a, b))
}

/// Build the full record for one query, re-creating the scene when it is a can-query.
pub fn make_record(scene: &Scene, ques_id: usize, action: Action, a: Descriptor, b: Descriptor) -> Result<QueryRecord> {
    let c = classify(scene, action, &a, &b);
    let recreated = match c.answer_type {
        AnswerType::Can => Some(apply_action(scene, action, &a, &b)?),
        _ => None,
    };
    Ok(QueryRecord {
        query_id: format!("{}_{ques_id}_{:02}", scene.scene_id, ques_id + 1),
        ques_id,
        action,
        operands: [a, b],
        question: question_text(action, &a, &b),
        answer_type: c.answer_type,
        answer: answer_text(&c),
        conjuncts: c.missing,
        reason: c.reason,
        recreated,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryPlan {
    pub queries: Vec<QueryRecord>,
    /// True when some category ran short and slots were filled from another.
    pub fallback: bool,
}

type Key = (Action, Descriptor, Descriptor);

fn can_candidates(scene: &Scene, allow_ambiguous: bool) -> Vec<Key> {
    let present: BTreeSet<Descriptor> = scene.objects.iter().map(|o| o.descriptor()).collect();
    let usable: Vec<Descriptor> = present
        .into_iter()
        .filter(|d| allow_ambiguous || scene.count(d) == 1)
        .collect();
    let mut out = Vec::new();
    for &action in Action::ALL {
        for a in &usable {
            for b in &usable {
                if a == b || classify(scene, action, a, b).answer_type != AnswerType::Can {
                    continue;
                }
                if action == Action::ExchangeColor && a.color == b.color {
                    continue;
                }
                if apply_action(scene, action, a, b).is_err() {
                    continue;
                }
                out.push((action, *a, *b));
            }
        }
    }
    out
}

fn random_descriptor<R: Rng>(rng: &mut R) -> Descriptor {
    let all: Vec<Descriptor> = Descriptor::all().collect();
    all[rng.random_range(0..all.len())]
}

/// A present descriptor with probability 1/2, otherwise any descriptor.
fn some_operand<R: Rng>(scene: &Scene, rng: &mut R) -> Descriptor {
    if rng.random_bool(0.5) && !scene.objects.is_empty() {
        scene.objects[rng.random_range(0..scene.objects.len())].descriptor()
    } else {
        random_descriptor(rng)
    }
}

fn sample_cannot<R: Rng>(scene: &Scene, rng: &mut R) -> Option<Key> {
    for _ in 0..200 {
        let action = Action::ALL[rng.random_range(0..Action::ALL.len())];
        let (a, b) = (some_operand(scene, rng), some_operand(scene, rng));
        if a != b && classify(scene, action, &a, &b).answer_type == AnswerType::Cannot {
            return Some((action, a, b));
        }
    }
    None
}

fn sample_forbidden<R: Rng>(scene: &Scene, rng: &mut R) -> Option<Key> {
    for _ in 0..200 {
        let action = if rng.random_bool(0.5) {
            Action::PutUnder
        } else {
            Action::PutOnTop
        };
        let mut sphere = some_operand(scene, rng);
        sphere.shape = Shape::Sphere;
        let other = some_operand(scene, rng);
        let (a, b) = match action {
            Action::PutUnder => (sphere, other),
            _ => (other, sphere),
        };
        if a != b && classify(scene, action, &a, &b).answer_type == AnswerType::Forbidden {
            return Some((action, a, b));
        }
    }
    None
}

/// Generate ten distinct queries aiming at a 6/2/2 can/cannot/forbidden split.
///
/// A category that runs short borrows its remaining slots from the others in
/// the order forbidden, cannot, can (skipping itself); `fallback` records it.
pub fn enumerate_queries<R: Rng>(scene: &Scene, rng: &mut R, allow_ambiguous: bool) -> Result<QueryPlan> {
    let mut cans = can_candidates(scene, allow_ambiguous);
    cans.shuffle(rng);
    let mut cans = cans.into_iter();
    let mut chosen: Vec<Key> = Vec::new();
    let mut seen: BTreeSet<Key> = BTreeSet::new();
    let mut draw = |cat: usize, chosen: &mut Vec<Key>, rng: &mut R| -> bool {
        loop {
            let k = match cat {
                0 => cans.next(),
                1 => sample_cannot(scene, rng),
                _ => sample_forbidden(scene, rng),
            };
            match k {
                None => return false,
                Some(k) if seen.insert(k) => {
                    chosen.push(k);
                    return true;
                }
                Some(_) if cat == 0 => continue,
                Some(_) => {
                    // Sampled duplicate; retry a bounded number of times.
                    for _ in 0..50 {
                        let k = if cat == 1 {
                            sample_cannot(scene, rng)
                        } else {
                            sample_forbidden(scene, rng)
                        };
                        if let Some(k) = k.filter(|k| seen.insert(*k)) {
                            chosen.push(k);
                            return true;
                        }
                    }
                    return false;
                }
            }
        }
    };
    let mut fallback = false;
    for (cat, &want) in SPLIT.iter().enumerate() {
        for _ in 0..want {
            if draw(cat, &mut chosen, rng) {
                continue;
            }
            fallback = true;
            let filled = [2usize, 1, 0]
                .into_iter()
                .filter(|&c| c != cat)
                .any(|c| draw(c, &mut chosen, rng));
            if !filled {
                return Err(SceneError::TooFewQueries {
                    scene_id: scene.scene_id.clone(),
                    found: chosen.len(),
                });
            }
        }
    }
    let queries = chosen
        .into_iter()
        .enumerate()
        .map(|(i, (action, a, b))| make_record(scene, i, action, a, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(QueryPlan { queries, fallback })
}
