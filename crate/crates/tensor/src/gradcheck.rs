//! Central finite-difference checks of reverse-mode gradients.

use rand::Rng as _;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::rng_from_seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub step: f32,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            step: 1e-3,
            rtol: 1e-3,
            atol: 1e-4,
        }
    }
}

/// Largest disagreement found by [`check`].
#[derive(Clone, Debug)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare analytic and numeric gradients of `f(inputs)` for every input element.
///
/// The output is reduced with fixed random weights, so the check covers the
/// whole Jacobian rather than one row of it. An element passes when
/// `|a - n| <= atol + noise + rtol * max(|a|, |n|)`, where `noise` is the
/// error a single `f32` rounding of every output contributes to the
/// difference quotient: `eps_f32 * Σ|wᵢ yᵢ| / step`.
pub fn check<F>(inputs: &[Tensor], tol: Tolerance, seed: u64, f: F) -> Result<Option<Mismatch>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor], grad: bool| -> Result<(Graph, Var, Vec<Var>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone().with_requires_grad(grad))).collect();
        let out = f(&mut g, &vars)?;
        Ok((g, out, vars))
    };

    let (g, out, vars) = eval(inputs, true)?;
    let mut rng = rng_from_seed(seed);
    let weights: Vec<f32> = (0..g.value(out).numel())
        .map(|_| rng.random_range(0.5f32..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let grads = g.backward_with(out, weights.clone())?;

    let noise = f32::EPSILON as f64
        * g.value(out)
            .data()
            .iter()
            .zip(&weights)
            .map(|(&y, &w)| (y as f64 * w as f64).abs())
            .sum::<f64>()
        / tol.step as f64;

    let reduce = |xs: &[Tensor]| -> Result<f64> {
        let (g, out, _) = eval(xs, false)?;
        Ok(g.value(out)
            .data()
            .iter()
            .zip(&weights)
            .map(|(&y, &w)| y as f64 * w as f64)
            .sum())
    };

    let mut worst: Option<(f64, Mismatch)> = None;
    let mut xs = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            let (xp, xm) = (x0 + tol.step, x0 - tol.step);
            xs[i].data_mut()[j] = xp;
            let fp = reduce(&xs)?;
            xs[i].data_mut()[j] = xm;
            let fm = reduce(&xs)?;
            xs[i].data_mut()[j] = x0;
            let numeric = (fp - fm) / (xp as f64 - xm as f64);
            let a = analytic[j] as f64;
            let excess = (a - numeric).abs() - (tol.atol + noise + tol.rtol * a.abs().max(numeric.abs()));
            if excess > 0.0 && worst.as_ref().is_none_or(|(e, _)| excess > *e) {
                worst = Some((
                    excess,
                    Mismatch {
                        input: i,
                        index: j,
                        analytic: a,
                        numeric,
                    },
                ));
            }
        }
    }
    Ok(worst.map(|(_, m)| m))
}
