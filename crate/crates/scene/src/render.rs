use std::path::Path;

use image::RgbImage;

use crate::error::{Result, SceneError};
use crate::scene::Scene;
use crate::vocab::Material;

pub const BACKGROUND: [u8; 3] = [200, 200, 200];

/// Rasterize a scene: flat background, objects painted in `depth_rank` order.
/// Metal objects get the upper half of their footprint blended halfway to white.
pub fn render(scene: &Scene) -> Result<RgbImage> {
    let layout = scene.layout()?;
    let s = layout.image_size as u32;
    let mut img = RgbImage::from_pixel(s, s, image::Rgb(BACKGROUND));
    let mut order: Vec<_> = scene.objects.iter().collect();
    order.sort_by_key(|o| (o.depth_rank, o.index));
    for obj in order {
        let base = obj.color.rgb();
        let highlight = base.map(|c| ((c as u16 + 255 + 1) / 2) as u8);
        let (_, cy) = layout.center(obj.cell.0, obj.cell.1, obj.level);
        for (x, y) in layout.footprint(obj) {
            let lit = obj.material == Material::Metal && (y as i64) < cy;
            img.put_pixel(x as u32, y as u32, image::Rgb(if lit { highlight } else { base }));
        }
    }
    Ok(img)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| SceneError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| SceneError::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|source| SceneError::Image {
            path: path.to_path_buf(),
            source,
        })
}
