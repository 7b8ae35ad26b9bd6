//! Can / cannot / forbidden classification and ground-truth re-creation.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SceneError};
use crate::scene::Scene;
use crate::vocab::{Descriptor, Shape};

/// Manipulation verbs; ids follow the annotation vocabulary order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    PutOnTop,
    PutUnder,
    ExchangePosition,
    ExchangeColor,
}

impl Action {
    pub const ALL: &'static [Action] = &[
        Action::PutOnTop,
        Action::PutUnder,
        Action::ExchangePosition,
        Action::ExchangeColor,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn phrase(self) -> &'static str {
        match self {
            Action::PutOnTop => "put on top",
            Action::PutUnder => "put under",
            Action::ExchangePosition => "exchange position",
            Action::ExchangeColor => "exchange color",
        }
    }
}

/// Answer type with the integer codes used in annotation files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    Cannot = 0,
    Can = 1,
    Forbidden = 2,
}

impl AnswerType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<AnswerType> {
        match c {
            0 => Some(AnswerType::Cannot),
            1 => Some(AnswerType::Can),
            2 => Some(AnswerType::Forbidden),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForbiddenReason {
    SphereUnder,
    OnTopOfSphere,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub answer_type: AnswerType,
    /// Operands matching no object, in operand order, without repeats.
    pub missing: Vec<Descriptor>,
    pub reason: Option<ForbiddenReason>,
}

/// Classify `action(mover, target)` against a scene.
///
/// Forbidden when a sphere would be put under something or something would be
/// put on a sphere; otherwise cannot when an operand is absent; otherwise can.
/// Absent operands are listed for forbidden queries too.
pub fn classify(scene: &Scene, action: Action, mover: &Descriptor, target: &Descriptor) -> Classification {
    let mut missing = Vec::new();
    for d in [mover, target] {
        if scene.count(d) == 0 && !missing.contains(d) {
            missing.push(*d);
        }
    }
    let reason = match action {
        Action::PutUnder if mover.shape == Shape::Sphere => Some(ForbiddenReason::SphereUnder),
        Action::PutOnTop if target.shape == Shape::Sphere => Some(ForbiddenReason::OnTopOfSphere),
        _ => None,
    };
    let answer_type = if reason.is_some() {
        AnswerType::Forbidden
    } else if !missing.is_empty() {
        AnswerType::Cannot
    } else {
        AnswerType::Can
    };
    Classification {
        answer_type,
        missing,
        reason,
    }
}

fn first_match(scene: &Scene, d: &Descriptor) -> usize {
    scene
        .objects
        .iter()
        .position(|o| o.matches(d))
        .expect("classified as present")
}

/// Take object `i` out of its stack; everything above it drops one level.
fn lift_out(scene: &mut Scene, i: usize) {
    let (cell, level) = (scene.objects[i].cell, scene.objects[i].level);
    for o in &mut scene.objects {
        if o.index != i && o.cell == cell && o.level > level {
            o.level -= 1;
        }
    }
}

/// Ground-truth scene after a can-query.
///
/// `exchange_color` recolors every object matching each operand; the other
/// actions move the lowest-index match of each operand.
pub fn apply_action(scene: &Scene, action: Action, mover: &Descriptor, target: &Descriptor) -> Result<Scene> {
    let c = classify(scene, action, mover, target);
    if c.answer_type != AnswerType::Can {
        return Err(SceneError::NotApplicable(format!(
            "{} of `{mover}` and `{target}` is {:?}",
            action.phrase(),
            c.answer_type
        )));
    }
    let mut out = scene.clone();
    match action {
        Action::ExchangeColor => {
            for o in &mut out.objects {
                let d = o.descriptor();
                if d == *mover {
                    o.color = target.color;
                } else if d == *target {
                    o.color = mover.color;
                }
            }
        }
        Action::ExchangePosition | Action::PutOnTop | Action::PutUnder => {
            let (m, t) = (first_match(scene, mover), first_match(scene, target));
            if m == t {
                return Err(SceneError::NotApplicable(format!(
                    "{} needs two distinct objects, both operands are `{mover}`",
                    action.phrase()
                )));
            }
            match action {
                Action::ExchangePosition => {
                    let (cm, lm) = (out.objects[m].cell, out.objects[m].level);
                    out.objects[m].cell = out.objects[t].cell;
                    out.objects[m].level = out.objects[t].level;
                    out.objects[t].cell = cm;
                    out.objects[t].level = lm;
                }
                Action::PutOnTop => {
                    lift_out(&mut out, m);
                    let cell = out.objects[t].cell;
                    let top = out
                        .objects
                        .iter()
                        .filter(|o| o.index != m && o.cell == cell)
                        .map(|o| o.level)
                        .max()
                        .unwrap_or(0);
                    out.objects[m].cell = cell;
                    out.objects[m].level = top + 1;
                }
                Action::PutUnder => {
                    lift_out(&mut out, m);
                    let (cell, level) = (out.objects[t].cell, out.objects[t].level);
                    for o in &mut out.objects {
                        if o.index != m && o.cell == cell && o.level >= level {
                            o.level += 1;
                        }
                    }
                    out.objects[m].cell = cell;
                    out.objects[m].level = level;
                }
                Action::ExchangeColor => unreachable!(),
            }
        }
    }
    out.refresh_geometry()?;
    out.validate(None)
        .map_err(|e| SceneError::NotApplicable(format!("result would be invalid: {e}")))?;
    Ok(out)
}
