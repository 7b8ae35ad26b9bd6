//! Straightforward reference implementations used only as test oracles.
//! Written independently of the library: naive DFTs, explicit meshgrids and
//! two-pass window statistics.

#![allow(dead_code)]

use std::f64::consts::PI;

pub type Grid = Vec<Vec<f64>>;

#[derive(Clone, Copy, Debug)]
pub struct C {
    pub re: f64,
    pub im: f64,
}

impl C {
    fn new(re: f64, im: f64) -> C {
        C { re, im }
    }
    fn mul(self, o: C) -> C {
        C::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
    fn add(self, o: C) -> C {
        C::new(self.re + o.re, self.im + o.im)
    }
    fn abs(self) -> f64 {
        (self.re * self.re + self.im * self.im).sqrt()
    }
}

pub fn luma(rgb: &[[u8; 3]]) -> Vec<f64> {
    rgb.iter()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

pub fn psnr(a: &[u8], b: &[u8]) -> f64 {
    let mut mse = 0.0;
    for i in 0..a.len() {
        mse += (a[i] as f64 - b[i] as f64).powi(2) / a.len() as f64;
    }
    if mse == 0.0 {
        return 100.0;
    }
    (20.0 * 255.0f64.log10() - 10.0 * mse.log10()).min(100.0)
}

/// Windowed SSIM with mean and covariance taken as two-pass sums.
pub fn ssim(x: &Grid, y: &Grid) -> f64 {
    let (h, w) = (x.len(), x[0].len());
    let mut g = [[0.0f64; 11]; 11];
    let mut z = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / 4.5).exp();
            z += *v;
        }
    }
    let (c1, c2) = (6.5025, 58.5225);
    let mut acc = 0.0;
    let mut count = 0;
    for r in 0..=h - 11 {
        for c in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    mx += g[i][j] / z * x[r + i][c + j];
                    my += g[i][j] / z * y[r + i][c + j];
                }
            }
            let (mut vx, mut vy, mut cv) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let (a, b) = (x[r + i][c + j] - mx, y[r + i][c + j] - my);
                    vx += g[i][j] / z * a * a;
                    vy += g[i][j] / z * b * b;
                    cv += g[i][j] / z * a * b;
                }
            }
            acc += (2.0 * mx * my + c1) * (2.0 * cv + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn dft1(v: &[C], inverse: bool) -> Vec<C> {
    let n = v.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n)
        .map(|k| {
            let mut s = C::new(0.0, 0.0);
            for (t, x) in v.iter().enumerate() {
                let ang = sign * 2.0 * PI * ((k * t) % n) as f64 / n as f64;
                s = s.add(x.mul(C::new(ang.cos(), ang.sin())));
            }
            if inverse {
                C::new(s.re / n as f64, s.im / n as f64)
            } else {
                s
            }
        })
        .collect()
}

fn dft2(m: &[Vec<C>], inverse: bool) -> Vec<Vec<C>> {
    let rows: Vec<Vec<C>> = m.iter().map(|r| dft1(r, inverse)).collect();
    let (h, w) = (rows.len(), rows[0].len());
    let mut out = vec![vec![C::new(0.0, 0.0); w]; h];
    for c in 0..w {
        let col: Vec<C> = (0..h).map(|r| rows[r][c]).collect();
        for (r, v) in dft1(&col, inverse).into_iter().enumerate() {
            out[r][c] = v;
        }
    }
    out
}

/// MATLAB `ifftshift` on a 2-D array.
fn ifftshift(m: &Grid) -> Grid {
    let (h, w) = (m.len(), m[0].len());
    (0..h)
        .map(|r| (0..w).map(|c| m[(r + h / 2) % h][(c + w / 2) % w]).collect())
        .collect()
}

fn meshgrid(rows: usize, cols: usize) -> (Grid, Grid) {
    let range = |n: usize| -> Vec<f64> {
        if n % 2 == 1 {
            let mut v = Vec::new();
            let mut t = -((n - 1) as f64) / 2.0;
            while t <= (n - 1) as f64 / 2.0 + 1e-9 {
                v.push(t / (n - 1) as f64);
                t += 1.0;
            }
            v
        } else {
            let mut v = Vec::new();
            let mut t = -(n as f64) / 2.0;
            while t <= n as f64 / 2.0 - 1.0 + 1e-9 {
                v.push(t / n as f64);
                t += 1.0;
            }
            v
        }
    };
    let (xr, yr) = (range(cols), range(rows));
    let x = (0..rows).map(|_| xr.clone()).collect();
    let y = (0..rows).map(|r| vec![yr[r]; cols]).collect();
    (x, y)
}

fn map2(a: &Grid, f: impl Fn(f64) -> f64) -> Grid {
    a.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect()
}

fn zip2(a: &Grid, b: &Grid, f: impl Fn(f64, f64) -> f64) -> Grid {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(&x, &y)| f(x, y)).collect())
        .collect()
}

fn lowpassfilter(rows: usize, cols: usize, cutoff: f64, n: i32) -> Grid {
    let (x, y) = meshgrid(rows, cols);
    let radius = zip2(&x, &y, |a, b| (a * a + b * b).sqrt());
    ifftshift(&map2(&radius, |r| 1.0 / (1.0 + (r / cutoff).powi(2 * n))))
}

pub fn phasecong2(im: &Grid) -> Grid {
    let (nscale, norient, min_wl, mult, sigma_onf, dtheta_on_sigma, k, eps) =
        (4usize, 4usize, 6.0f64, 2.0f64, 0.55f64, 1.2f64, 2.0f64, 0.0001f64);
    let theta_sigma = PI / norient as f64 / dtheta_on_sigma;
    let (rows, cols) = (im.len(), im[0].len());
    let imagefft = dft2(
        &im.iter()
            .map(|r| r.iter().map(|&v| C::new(v, 0.0)).collect())
            .collect::<Vec<_>>(),
        false,
    );
    let zero = vec![vec![0.0; cols]; rows];
    let (x, y) = meshgrid(rows, cols);
    let mut radius = ifftshift(&zip2(&x, &y, |a, b| (a * a + b * b).sqrt()));
    let theta = ifftshift(&zip2(&x, &y, |a, b| (-b).atan2(a)));
    radius[0][0] = 1.0;
    let sintheta = map2(&theta, f64::sin);
    let costheta = map2(&theta, f64::cos);
    let lp = lowpassfilter(rows, cols, 0.45, 15);
    let mut log_gabor = Vec::new();
    for s in 0..nscale {
        let wavelength = min_wl * mult.powi(s as i32);
        let fo = 1.0 / wavelength;
        let mut g = map2(&radius, |r| {
            (-(r / fo).ln().powi(2) / (2.0 * sigma_onf.ln().powi(2))).exp()
        });
        g = zip2(&g, &lp, |a, b| a * b);
        g[0][0] = 0.0;
        log_gabor.push(g);
    }
    let mut spread = Vec::new();
    for o in 0..norient {
        let angl = o as f64 * PI / norient as f64;
        let ds = zip2(&sintheta, &costheta, |s, c| s * angl.cos() - c * angl.sin());
        let dc = zip2(&costheta, &sintheta, |c, s| c * angl.cos() + s * angl.sin());
        let dtheta = zip2(&ds, &dc, |a, b| a.atan2(b).abs());
        spread.push(map2(&dtheta, |d| (-d * d / (2.0 * theta_sigma * theta_sigma)).exp()));
    }
    let mut energy_all = zero.clone();
    let mut an_all = zero.clone();
    for o in 0..norient {
        let mut sum_e = zero.clone();
        let mut sum_o = zero.clone();
        let mut sum_an = zero.clone();
        let mut energy = zero.clone();
        let mut eo = Vec::new();
        let mut ifft_filter_array = Vec::new();
        let mut em_n = 0.0;
        for s in 0..nscale {
            let filter = zip2(&log_gabor[s], &spread[o], |a, b| a * b);
            let fc: Vec<Vec<C>> = filter
                .iter()
                .map(|r| r.iter().map(|&v| C::new(v, 0.0)).collect())
                .collect();
            let ifft_filt: Grid = dft2(&fc, true)
                .iter()
                .map(|r| r.iter().map(|c| c.re * ((rows * cols) as f64).sqrt()).collect())
                .collect();
            ifft_filter_array.push(ifft_filt);
            let prod: Vec<Vec<C>> = imagefft
                .iter()
                .zip(&filter)
                .map(|(a, b)| a.iter().zip(b).map(|(z, &h)| C::new(z.re * h, z.im * h)).collect())
                .collect();
            let e = dft2(&prod, true);
            for r in 0..rows {
                for c in 0..cols {
                    sum_an[r][c] += e[r][c].abs();
                    sum_e[r][c] += e[r][c].re;
                    sum_o[r][c] += e[r][c].im;
                }
            }
            if s == 0 {
                em_n = filter.iter().flatten().map(|v| v * v).sum();
            }
            eo.push(e);
        }
        let x_energy = zip2(&sum_e, &sum_o, |e, o| (e * e + o * o).sqrt() + eps);
        let mean_e = zip2(&sum_e, &x_energy, |a, b| a / b);
        let mean_o = zip2(&sum_o, &x_energy, |a, b| a / b);
        for e in &eo {
            for r in 0..rows {
                for c in 0..cols {
                    let (ev, ov) = (e[r][c].re, e[r][c].im);
                    energy[r][c] +=
                        ev * mean_e[r][c] + ov * mean_o[r][c] - (ev * mean_o[r][c] - ov * mean_e[r][c]).abs();
                }
            }
        }
        let mut sq: Vec<f64> = eo[0].iter().flatten().map(|c| c.abs().powi(2)).collect();
        sq.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = sq.len();
        let median = if m % 2 == 1 {
            sq[m / 2]
        } else {
            0.5 * (sq[m / 2 - 1] + sq[m / 2])
        };
        let mean_e2n = -median / 0.5f64.ln();
        let noise_power = mean_e2n / em_n;
        let mut est_sum_an2 = zero.clone();
        for f in &ifft_filter_array {
            est_sum_an2 = zip2(&est_sum_an2, f, |a, b| a + b * b);
        }
        let mut est_sum_aiaj = zero.clone();
        for si in 0..nscale - 1 {
            for sj in si + 1..nscale {
                let p = zip2(&ifft_filter_array[si], &ifft_filter_array[sj], |a, b| a * b);
                est_sum_aiaj = zip2(&est_sum_aiaj, &p, |a, b| a + b);
            }
        }
        let s1: f64 = est_sum_an2.iter().flatten().sum();
        let s2: f64 = est_sum_aiaj.iter().flatten().sum();
        let est_noise_energy2 = 2.0 * noise_power * s1 + 4.0 * noise_power * s2;
        let tau = (est_noise_energy2 / 2.0).sqrt();
        let est_noise_energy = tau * (PI / 2.0).sqrt();
        let est_noise_energy_sigma = ((2.0 - PI / 2.0) * tau * tau).sqrt();
        let mut t = est_noise_energy + k * est_noise_energy_sigma;
        t /= 1.7;
        energy = map2(&energy, |e| (e - t).max(0.0));
        energy_all = zip2(&energy_all, &energy, |a, b| a + b);
        an_all = zip2(&an_all, &sum_an, |a, b| a + b);
    }
    zip2(&energy_all, &an_all, |e, a| e / a)
}

fn conv2_same(im: &Grid, k: &[[f64; 3]; 3]) -> Grid {
    let (h, w) = (im.len() as isize, im[0].len() as isize);
    let mut out = vec![vec![0.0; w as usize]; h as usize];
    for r in 0..h {
        for c in 0..w {
            let mut s = 0.0;
            // Correlate with the 180-degree rotated kernel.
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (y, x) = (r + dy, c + dx);
                    if y >= 0 && y < h && x >= 0 && x < w {
                        s += im[y as usize][x as usize] * k[(1 - dy) as usize][(1 - dx) as usize];
                    }
                }
            }
            out[r as usize][c as usize] = s;
        }
    }
    out
}

pub fn fsim(y1: &Grid, y2: &Grid) -> f64 {
    let pc1 = phasecong2(y1);
    let pc2 = phasecong2(y2);
    let dx = [
        [3.0 / 16.0, 0.0, -3.0 / 16.0],
        [10.0 / 16.0, 0.0, -10.0 / 16.0],
        [3.0 / 16.0, 0.0, -3.0 / 16.0],
    ];
    let dy = [
        [3.0 / 16.0, 10.0 / 16.0, 3.0 / 16.0],
        [0.0; 3],
        [-3.0 / 16.0, -10.0 / 16.0, -3.0 / 16.0],
    ];
    let g = |y: &Grid| zip2(&conv2_same(y, &dx), &conv2_same(y, &dy), |a, b| (a * a + b * b).sqrt());
    let (g1, g2) = (g(y1), g(y2));
    let (t1, t2) = (0.85, 160.0);
    let pcs = zip2(&pc1, &pc2, |a, b| (2.0 * a * b + t1) / (a * a + b * b + t1));
    let gs = zip2(&g1, &g2, |a, b| (2.0 * a * b + t2) / (a * a + b * b + t2));
    let pcm = zip2(&pc1, &pc2, f64::max);
    let sim = zip2(&zip2(&gs, &pcs, |a, b| a * b), &pcm, |a, b| a * b);
    sim.iter().flatten().sum::<f64>() / pcm.iter().flatten().sum::<f64>()
}
