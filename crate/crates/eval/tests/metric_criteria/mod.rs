//! PSNR, SSIM and FSIM against literal reference implementations on 50 image pairs.

#[path = "../oracle/mod.rs"]
pub mod oracle;

use atvc_eval::{fsim, psnr, ssim, PSNR_CAP};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(rng: &mut ChaCha8Rng, size: u32) -> RgbImage {
    RgbImage::from_fn(size, size, |_, _| {
        image::Rgb([rng.random(), rng.random(), rng.random()])
    })
}

/// Smooth blobs plus noise, so phase congruency sees real structure.
pub fn structured_image(rng: &mut ChaCha8Rng, size: u32) -> RgbImage {
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.0..size as f64),
                rng.random_range(0.0..size as f64),
                rng.random_range(2.0..8.0),
                [
                    rng.random_range(0.0..255.0),
                    rng.random_range(0.0..255.0),
                    rng.random_range(0.0..255.0),
                ],
            )
        })
        .collect();
    RgbImage::from_fn(size, size, |x, y| {
        let mut px = [200.0f64; 3];
        for (cx, cy, r, col) in &blobs {
            if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) < r * r {
                px = *col;
            }
        }
        image::Rgb(px.map(|v| (v + rng.random_range(-6.0..6.0)).clamp(0.0, 255.0) as u8))
    })
}

pub fn perturb(rng: &mut ChaCha8Rng, img: &RgbImage, amp: i32) -> RgbImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for c in 0..3 {
            p[c] = (p[c] as i32 + rng.random_range(-amp..=amp)).clamp(0, 255) as u8;
        }
    }
    out
}

pub fn luma_grid(img: &RgbImage) -> oracle::Grid {
    let px: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
    let l = oracle::luma(&px);
    l.chunks(img.width() as usize).map(|r| r.to_vec()).collect()
}

/// 50 pairs of 32x32 images: half structured with a perturbed copy, half noise.
pub fn pairs() -> Vec<(RgbImage, RgbImage)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..50)
        .map(|i| match i % 3 {
            0 => (random_image(&mut rng, 32), random_image(&mut rng, 32)),
            1 => {
                let a = structured_image(&mut rng, 32);
                let b = perturb(&mut rng, &a, 20);
                (a, b)
            }
            _ => (structured_image(&mut rng, 32), structured_image(&mut rng, 32)),
        })
        .collect()
}

pub fn psnr_matches_oracle_on_50_pairs() {
    for (a, b) in pairs() {
        let got = psnr(&a, &b).unwrap();
        let want = oracle::psnr(a.as_raw(), b.as_raw());
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

pub fn ssim_matches_oracle_on_50_pairs() {
    for (a, b) in pairs() {
        let got = ssim(&a, &b).unwrap();
        let want = oracle::ssim(&luma_grid(&a), &luma_grid(&b));
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

pub fn fsim_matches_oracle_on_50_pairs() {
    let mut worst = 0.0f64;
    for (a, b) in pairs() {
        let got = fsim(&a, &b).unwrap();
        let want = oracle::fsim(&luma_grid(&a), &luma_grid(&b));
        worst = worst.max((got - want).abs());
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        assert!((0.0..=1.0).contains(&got));
    }
    println!("fsim worst deviation {worst:e}");
}

pub fn identical_images_reach_exact_maxima() {
    for (a, _) in pairs() {
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(fsim(&a, &a).unwrap(), 1.0);
    }
}
