use indexmap::IndexMap;

use crate::error::{Result, TensorError};
use crate::params::{GradMap, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are created lazily, zero-initialized.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: IndexMap<String, Vec<f32>>,
    v: IndexMap<String, Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        let in_unit = |b: f32| b > 0.0 && b < 1.0;
        if !in_unit(config.beta1) || !in_unit(config.beta2) {
            return Err(TensorError::invalid(
                "adam",
                format!("betas must lie in (0, 1), got {} and {}", config.beta1, config.beta2),
            ));
        }
        Ok(Adam {
            config,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.config.lr = lr;
    }

    /// Apply one update to every parameter that has a gradient.
    ///
    /// All gradients are checked before anything is modified, so a non-finite
    /// gradient leaves both parameters and optimizer state untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradMap) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params.require(name)?;
            if p.shape() != g.shape() {
                return Err(TensorError::mismatch("adam", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(TensorError::NonFiniteGradient(name.to_string()));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - (beta1 as f64).powi(t);
        let bc2 = 1.0 - (beta2 as f64).powi(t);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name).expect("checked above");
            let n = g.numel();
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi as f64 / bc1;
                let vhat = *vi as f64 / bc2;
                *w -= (lr as f64 * mhat / (vhat.sqrt() + eps as f64)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Graph, Tensor};

    fn scalar_store(w: f32) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_vec(vec![w], &[1]).unwrap());
        p
    }

    fn grad(v: f32) -> GradMap {
        let mut g = GradMap::new();
        g.insert("w", Tensor::from_vec(vec![v], &[1]).unwrap());
        g
    }

    #[test]
    fn zero_gradient_keeps_params_and_counts_step() {
        let mut p = scalar_store(1.5);
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        opt.step(&mut p, &grad(0.0)).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.5]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_store(0.0);
        let mut opt = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        })
        .unwrap();
        opt.step(&mut p, &grad(1.0)).unwrap();
        assert!((p.get("w").unwrap().item() + 0.1).abs() < 1e-6);
    }

    #[test]
    fn quadratic_converges() {
        let mut p = scalar_store(0.0);
        let mut opt = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        })
        .unwrap();
        for _ in 0..100 {
            let mut g = Graph::new();
            let w = g.param_from(&p, "w").unwrap();
            let d = g.add_scalar(w, -3.0);
            let sq = g.mul(d, d).unwrap();
            let loss = g.sum(sq);
            let grads = g.backward(loss).unwrap().into_param_grads();
            opt.step(&mut p, &grads).unwrap();
        }
        // Independent plain-Adam recurrence in f64 on the analytic gradient 2(w-3).
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let gr = 2.0 * (w - 3.0);
            m = 0.9 * m + 0.1 * gr;
            v = 0.999 * v + 0.001 * gr * gr;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        let got = p.get("w").unwrap().item() as f64;
        assert!((got - w).abs() < 1e-3, "{got} vs oracle {w}");
        assert!((got - 3.0).abs() < 0.05, "w = {got}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = scalar_store(0.0);
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let err = opt.step(&mut p, &grad(f32::NAN)).unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
        assert_eq!(opt.step_count(), 0);
        assert_eq!(p.get("w").unwrap().item(), 0.0);
    }

    #[test]
    fn rejects_betas_outside_unit_interval() {
        assert!(Adam::new(AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        })
        .is_err());
    }
}
