//! Pixel geometry of the placement grid and object footprints.

use crate::error::{Result, SceneError};
use crate::scene::SceneObject;
use crate::vocab::{Shape, Size};

/// Cells per side of the placement grid.
pub const GRID: usize = 4;

/// Pixel geometry derived from the image size (reference values at 64 px).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub image_size: usize,
    pub cell: usize,
    pub x0: usize,
    pub y0: usize,
    pub large_half: usize,
    pub small_half: usize,
    pub large_cylinder_half_width: usize,
    pub small_cylinder_half_width: usize,
    /// Upward pixel shift per stack level.
    pub stack_offset: usize,
    /// Pixels at each image edge no object may touch.
    pub margin: usize,
}

impl Layout {
    pub fn new(image_size: usize) -> Result<Layout> {
        if image_size == 0 || image_size % 64 != 0 {
            return Err(SceneError::Config(format!(
                "image size must be a positive multiple of 64, got {image_size}"
            )));
        }
        let f = image_size / 64;
        Ok(Layout {
            image_size,
            cell: 14 * f,
            x0: 4 * f,
            y0: 6 * f,
            large_half: 5 * f,
            small_half: 3 * f,
            large_cylinder_half_width: 3 * f,
            small_cylinder_half_width: 2 * f,
            stack_offset: 6 * f,
            margin: 2,
        })
    }

    /// Continuous center of an object; pixel `(x, y)` covers `[x, x+1)`.
    pub fn center(&self, row: usize, col: usize, level: usize) -> (i64, i64) {
        let cx = self.x0 + col * self.cell + self.cell / 2;
        let cy = self.y0 + row * self.cell + self.cell / 2;
        (cx as i64, cy as i64 - (level * self.stack_offset) as i64)
    }

    pub fn half_size(&self, size: Size) -> i64 {
        match size {
            Size::Large => self.large_half as i64,
            Size::Small => self.small_half as i64,
        }
    }

    /// Pixels covered by `obj`, row-major, clipped to the canvas.
    pub fn footprint(&self, obj: &SceneObject) -> Vec<(usize, usize)> {
        let (cx, cy) = self.center(obj.cell.0, obj.cell.1, obj.level);
        let r = self.half_size(obj.size);
        let w = match obj.size {
            Size::Large => self.large_cylinder_half_width,
            Size::Small => self.small_cylinder_half_width,
        } as f64;
        let mut out = Vec::new();
        for y in cy - r..cy + r {
            for x in cx - r..cx + r {
                if x < 0 || y < 0 || x >= self.image_size as i64 || y >= self.image_size as i64 {
                    continue;
                }
                let px = x as f64 + 0.5 - cx as f64;
                let py = y as f64 + 0.5 - cy as f64;
                let inside = match obj.shape {
                    Shape::Cube => true,
                    Shape::Sphere => px * px + py * py <= (r * r) as f64,
                    Shape::Cylinder => {
                        let reach = r as f64 - w;
                        let dy = (py.abs() - reach).max(0.0);
                        px * px + dy * dy <= w * w
                    }
                };
                if inside {
                    out.push((x as usize, y as usize));
                }
            }
        }
        out
    }

    /// Inclusive `[xmin, ymin, xmax, ymax]` of a footprint.
    pub fn bbox(&self, obj: &SceneObject) -> [u32; 4] {
        let px = self.footprint(obj);
        let mut b = [u32::MAX, u32::MAX, 0, 0];
        for (x, y) in px {
            b[0] = b[0].min(x as u32);
            b[1] = b[1].min(y as u32);
            b[2] = b[2].max(x as u32);
            b[3] = b[3].max(y as u32);
        }
        b
    }

    /// True when the box stays clear of the border margin.
    pub fn inside_margin(&self, bbox: [u32; 4]) -> bool {
        let lo = self.margin as u32;
        let hi = (self.image_size - self.margin) as u32;
        bbox[0] >= lo && bbox[1] >= lo && bbox[2] < hi && bbox[3] < hi && bbox[0] <= bbox[2]
    }
}
