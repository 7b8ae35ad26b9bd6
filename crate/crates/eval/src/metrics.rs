use image::RgbImage;

use crate::error::{EvalError, Result};

/// Reported instead of infinity for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub(crate) fn same_shape(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(EvalError::Shape {
            a: a.dimensions(),
            b: b.dimensions(),
        });
    }
    Ok(())
}

/// Row-major luma `0.299 R + 0.587 G + 0.114 B` in [0, 255].
pub fn luma(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

/// PSNR in dB over all RGB samples, capped at [`PSNR_CAP`].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.as_raw().len() as f64;
    let sse: f64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (255.0f64 * 255.0 / (sse / n)).log10()).min(PSNR_CAP))
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w: Vec<f64> = (0..SSIM_WINDOW * SSIM_WINDOW)
        .map(|i| {
            let (y, x) = ((i / SSIM_WINDOW) as f64 - r, (i % SSIM_WINDOW) as f64 - r);
            (-(x * x + y * y) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean SSIM of the luma channels over all fully contained 11x11 windows.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_shape(a, b)?;
    let (w, h) = a.dimensions();
    let (w, h) = (w as usize, h as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(EvalError::TooSmall {
            got: a.dimensions(),
            window: SSIM_WINDOW,
        });
    }
    let (x, y) = (luma(a), luma(b));
    let win = gaussian_window();
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for r in 0..oh {
        for c in 0..ow {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let g = win[i * SSIM_WINDOW + j];
                    let k = (r + i) * w + c + j;
                    let (p, q) = (x[k], y[k]);
                    mx += g * p;
                    my += g * q;
                    sxx += g * p * p;
                    syy += g * q * q;
                    sxy += g * p * q;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + C1) * (2.0 * cov + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
        }
    }
    Ok(total / (ow * oh) as f64)
}
