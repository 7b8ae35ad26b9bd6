use atvc_scene::{render, QueryRecord, Scene, SceneObject};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::metrics::same_shape;
use crate::scoring::Rank;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    /// Largest mean Euclidean RGB distance (8-bit units) a region may show.
    pub max_region_distance: f64,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig {
            max_region_distance: 30.0,
        }
    }
}

/// Mean per-pixel RGB distance inside an inclusive bbox.
fn region_distance(a: &RgbImage, b: &RgbImage, bbox: [u32; 4]) -> f64 {
    let [x0, y0, x1, y1] = bbox;
    let (w, h) = a.dimensions();
    let (x1, y1) = (x1.min(w - 1), y1.min(h - 1));
    let (mut sum, mut n) = (0.0, 0usize);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (p, q) = (a.get_pixel(x, y), b.get_pixel(x, y));
            let d2: f64 = (0..3).map(|c| (p[c] as f64 - q[c] as f64).powi(2)).sum();
            sum += d2.sqrt();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn changed(before: &SceneObject, after: &SceneObject) -> bool {
    before.color != after.color || before.cell != after.cell || before.level != after.level || before.bbox != after.bbox
}

/// Machine stand-in for a human rank on symbolic scenes.
///
/// Objects whose color or placement differ between `input` and the gold
/// re-creation form the action region; their new and old bboxes must match the
/// rendered gold. Every other object's bbox must match as well. All regions
/// passing gives A; only the action region passing gives B; otherwise C.
pub fn auto_rank(pred: &RgbImage, input: &Scene, gold: &QueryRecord, config: &RankConfig) -> Result<Rank> {
    let scene = gold
        .recreated
        .as_ref()
        .ok_or_else(|| EvalError::MissingGold(gold.query_id.clone()))?;
    let gold_img = render(scene)?;
    same_shape(pred, &gold_img)?;
    let ok = |bbox| region_distance(pred, &gold_img, bbox) < config.max_region_distance;
    let (mut action_ok, mut rest_ok) = (true, true);
    for after in &scene.objects {
        match input.objects.iter().find(|o| o.index == after.index) {
            Some(before) if !changed(before, after) => rest_ok &= ok(after.bbox),
            Some(before) => action_ok &= ok(after.bbox) && ok(before.bbox),
            None => action_ok &= ok(after.bbox),
        }
    }
    Ok(match (action_ok, rest_ok) {
        (true, true) => Rank::A,
        (true, false) => Rank::B,
        _ => Rank::C,
    })
}
