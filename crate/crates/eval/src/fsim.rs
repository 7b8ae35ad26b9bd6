//! Feature similarity (FSIM) on luma.
//!
//! Phase congruency follows the reference `phasecong2` routine: a log-Gabor
//! bank of 4 scales and 4 orientations, noise compensation from the median
//! smallest-scale energy, and the empirical 1/1.7 threshold rescaling.

use std::f64::consts::PI;
use std::sync::Arc;

use image::RgbImage;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::metrics::{luma, same_shape};

const NSCALE: usize = 4;
const NORIENT: usize = 4;
const MIN_WAVELENGTH: f64 = 6.0;
const MULT: f64 = 2.0;
const SIGMA_ONF: f64 = 0.55;
const D_THETA_ON_SIGMA: f64 = 1.2;
const NOISE_K: f64 = 2.0;
const EPSILON: f64 = 1e-4;
const T1: f64 = 0.85;
const T2: f64 = 160.0;

/// Row-major real plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "plane data length");
        Plane { rows, cols, data }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(rows: usize, cols: usize) -> Self {
        let mut p = FftPlanner::new();
        Fft2 {
            rows,
            cols,
            row_fwd: p.plan_fft_forward(cols),
            row_inv: p.plan_fft_inverse(cols),
            col_fwd: p.plan_fft_forward(rows),
            col_inv: p.plan_fft_inverse(rows),
        }
    }

    /// In-place 2-D transform; the inverse includes the 1/(rows·cols) factor.
    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for r in data.chunks_exact_mut(self.cols) {
            row.process(r);
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for (r, b) in buf.iter_mut().enumerate() {
                *b = data[r * self.cols + c];
            }
            col.process(&mut buf);
            for (r, b) in buf.iter().enumerate() {
                data[r * self.cols + c] = *b;
            }
        }
        if inverse {
            let s = 1.0 / (self.rows * self.cols) as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Normalized frequency coordinates in [-0.5, 0.5], odd and even sizes alike.
fn freq_range(n: usize) -> Vec<f64> {
    if n % 2 == 1 {
        let h = (n - 1) as f64 / 2.0;
        (0..n).map(|i| (i as f64 - h) / (n - 1).max(1) as f64).collect()
    } else {
        (0..n).map(|i| (i as f64 - (n / 2) as f64) / n as f64).collect()
    }
}

/// Index in the unshifted grid whose value lands at `i` after an inverse shift.
fn ishift(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

/// Butterworth low-pass in unshifted frequency layout.
fn lowpass(rows: usize, cols: usize, cutoff: f64, order: i32) -> Vec<f64> {
    let (xr, yr) = (freq_range(cols), freq_range(rows));
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (xr[ishift(c, cols)], yr[ishift(r, rows)]);
            let radius = (x * x + y * y).sqrt();
            out[r * cols + c] = 1.0 / (1.0 + (radius / cutoff).powi(2 * order));
        }
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Phase congruency map of a luma plane, values in [0, 1].
///
/// Pixels with no filter response at all (flat images) get 0.
pub fn phase_congruency(im: &Plane) -> Plane {
    let (rows, cols) = (im.rows, im.cols);
    let n = rows * cols;
    let fft = Fft2::new(rows, cols);
    let mut image_fft: Vec<Complex64> = im.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.run(&mut image_fft, false);

    let (xr, yr) = (freq_range(cols), freq_range(rows));
    let mut radius = vec![0.0; n];
    let mut sin_t = vec![0.0; n];
    let mut cos_t = vec![0.0; n];
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (xr[ishift(c, cols)], yr[ishift(r, rows)]);
            let k = r * cols + c;
            radius[k] = (x * x + y * y).sqrt();
            let theta = (-y).atan2(x);
            sin_t[k] = theta.sin();
            cos_t[k] = theta.cos();
        }
    }
    radius[0] = 1.0;
    let lp = lowpass(rows, cols, 0.45, 15);

    let log_gabor: Vec<Vec<f64>> = (0..NSCALE)
        .map(|s| {
            let fo = 1.0 / (MIN_WAVELENGTH * MULT.powi(s as i32));
            let denom = 2.0 * SIGMA_ONF.ln().powi(2);
            let mut g: Vec<f64> = radius
                .iter()
                .zip(&lp)
                .map(|(&rad, &l)| (-(rad / fo).ln().powi(2) / denom).exp() * l)
                .collect();
            g[0] = 0.0;
            g
        })
        .collect();

    let theta_sigma = PI / NORIENT as f64 / D_THETA_ON_SIGMA;
    let mut energy_all = vec![0.0; n];
    let mut an_all = vec![0.0; n];
    for o in 0..NORIENT {
        let angl = o as f64 * PI / NORIENT as f64;
        let (ca, sa) = (angl.cos(), angl.sin());
        let spread: Vec<f64> = (0..n)
            .map(|k| {
                let ds = sin_t[k] * ca - cos_t[k] * sa;
                let dc = cos_t[k] * ca + sin_t[k] * sa;
                let dtheta = ds.atan2(dc).abs();
                (-dtheta * dtheta / (2.0 * theta_sigma * theta_sigma)).exp()
            })
            .collect();

        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut sum_an = vec![0.0; n];
        let mut eo: Vec<Vec<Complex64>> = Vec::with_capacity(NSCALE);
        let mut ifft_filters: Vec<Vec<f64>> = Vec::with_capacity(NSCALE);
        let mut em_n = 0.0;
        for (s, lg) in log_gabor.iter().enumerate() {
            let filter: Vec<f64> = lg.iter().zip(&spread).map(|(a, b)| a * b).collect();
            let mut f: Vec<Complex64> = filter.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft.run(&mut f, true);
            let scale = (n as f64).sqrt();
            ifft_filters.push(f.iter().map(|v| v.re * scale).collect());
            let mut resp: Vec<Complex64> = image_fft.iter().zip(&filter).map(|(z, &h)| z * h).collect();
            fft.run(&mut resp, true);
            for k in 0..n {
                sum_an[k] += resp[k].norm();
                sum_e[k] += resp[k].re;
                sum_o[k] += resp[k].im;
            }
            if s == 0 {
                em_n = filter.iter().map(|v| v * v).sum();
            }
            eo.push(resp);
        }

        let mut energy = vec![0.0; n];
        for k in 0..n {
            let xe = (sum_e[k] * sum_e[k] + sum_o[k] * sum_o[k]).sqrt() + EPSILON;
            let (me, mo) = (sum_e[k] / xe, sum_o[k] / xe);
            for resp in &eo {
                let (e, od) = (resp[k].re, resp[k].im);
                energy[k] += e * me + od * mo - (e * mo - od * me).abs();
            }
        }

        let median_e2n = median(eo[0].iter().map(|v| v.norm_sqr()).collect());
        let mean_e2n = -median_e2n / 0.5f64.ln();
        let noise_power = mean_e2n / em_n;
        let sum_an2: f64 = ifft_filters.iter().flatten().map(|v| v * v).sum();
        let mut sum_aiaj = 0.0;
        for si in 0..NSCALE {
            for sj in si + 1..NSCALE {
                sum_aiaj += ifft_filters[si]
                    .iter()
                    .zip(&ifft_filters[sj])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
        let est_noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_aiaj;
        let tau = (est_noise_energy2 / 2.0).sqrt();
        let est_noise_energy = tau * (PI / 2.0).sqrt();
        let est_noise_sigma = ((2.0 - PI / 2.0) * tau * tau).sqrt();
        let t = (est_noise_energy + NOISE_K * est_noise_sigma) / 1.7;

        for k in 0..n {
            energy_all[k] += (energy[k] - t).max(0.0);
            an_all[k] += sum_an[k];
        }
    }
    let data = energy_all
        .iter()
        .zip(&an_all)
        .map(|(&e, &a)| if a > 0.0 { e / a } else { 0.0 })
        .collect();
    Plane::new(rows, cols, data)
}

/// 2-D convolution cropped to the input size, zero padded.
pub fn conv2_same(im: &Plane, kernel: &Plane) -> Plane {
    let (kr, kc) = (kernel.rows, kernel.cols);
    let (or, oc) = (kr / 2, kc / 2);
    let mut out = vec![0.0; im.rows * im.cols];
    for r in 0..im.rows {
        for c in 0..im.cols {
            let mut acc = 0.0;
            for i in 0..kr {
                for j in 0..kc {
                    // Full-convolution index r + or - i, c + oc - j.
                    let (y, x) = ((r + or) as isize - i as isize, (c + oc) as isize - j as isize);
                    if y >= 0 && x >= 0 && (y as usize) < im.rows && (x as usize) < im.cols {
                        acc += im.at(y as usize, x as usize) * kernel.at(i, j);
                    }
                }
            }
            out[r * im.cols + c] = acc;
        }
    }
    Plane::new(im.rows, im.cols, out)
}

/// Box-filter and subsample by `max(1, round(min(rows, cols) / 256))`.
fn downsample(im: &Plane) -> Plane {
    let f = ((im.rows.min(im.cols) as f64 / 256.0).round() as usize).max(1);
    if f == 1 {
        return im.clone();
    }
    let k = Plane::new(f, f, vec![1.0 / (f * f) as f64; f * f]);
    let avg = conv2_same(im, &k);
    let (rows, cols) = (im.rows.div_ceil(f), im.cols.div_ceil(f));
    let mut data = Vec::with_capacity(rows * cols);
    for r in (0..im.rows).step_by(f) {
        for c in (0..im.cols).step_by(f) {
            data.push(avg.at(r, c));
        }
    }
    Plane::new(rows, cols, data)
}

/// Scharr gradient magnitude.
pub fn gradient_magnitude(im: &Plane) -> Plane {
    let dx = Plane::new(
        3,
        3,
        [3.0, 0.0, -3.0, 10.0, 0.0, -10.0, 3.0, 0.0, -3.0]
            .map(|v| v / 16.0)
            .to_vec(),
    );
    let dy = Plane::new(
        3,
        3,
        [3.0, 10.0, 3.0, 0.0, 0.0, 0.0, -3.0, -10.0, -3.0]
            .map(|v| v / 16.0)
            .to_vec(),
    );
    let (gx, gy) = (conv2_same(im, &dx), conv2_same(im, &dy));
    let data = gx
        .data
        .iter()
        .zip(&gy.data)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .collect();
    Plane::new(im.rows, im.cols, data)
}

/// FSIM between two luma planes of equal size.
pub fn fsim_planes(a: &Plane, b: &Plane) -> f64 {
    if a == b {
        return 1.0;
    }
    let (a, b) = (downsample(a), downsample(b));
    let (pc1, pc2) = (phase_congruency(&a), phase_congruency(&b));
    let (g1, g2) = (gradient_magnitude(&a), gradient_magnitude(&b));
    let (mut num, mut den, mut plain) = (0.0, 0.0, 0.0);
    for k in 0..a.data.len() {
        let (p1, p2) = (pc1.data[k], pc2.data[k]);
        let s_pc = (2.0 * p1 * p2 + T1) / (p1 * p1 + p2 * p2 + T1);
        let (m1, m2) = (g1.data[k], g2.data[k]);
        let s_g = (2.0 * m1 * m2 + T2) / (m1 * m1 + m2 * m2 + T2);
        let pcm = p1.max(p2);
        num += s_pc * s_g * pcm;
        den += pcm;
        plain += s_pc * s_g;
    }
    if den > 0.0 {
        num / den
    } else {
        plain / a.data.len() as f64
    }
}

/// FSIM between the luma channels of two RGB images.
pub fn fsim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_shape(a, b)?;
    let (w, h) = a.dimensions();
    let (rows, cols) = (h as usize, w as usize);
    Ok(fsim_planes(
        &Plane::new(rows, cols, luma(a)),
        &Plane::new(rows, cols, luma(b)),
    ))
}
