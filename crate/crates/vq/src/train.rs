use std::time::Instant;

use atvc_tensor::{rng_from_seed, Adam, AdamConfig, Graph, Rng, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::Variant;
use crate::error::{Result, VqError};
use crate::loss::{feature_matching, gan_losses};
use crate::model::{stack, VqModel, CODEBOOK};

/// Scalar losses from one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub total: f32,
    pub rec: f32,
    pub codebook: f32,
    pub commit: f32,
    pub perceptual: Option<f32>,
    pub gen: Option<f32>,
    pub disc: Option<f32>,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f32,
    pub steps: u64,
    pub train_loss: f64,
    pub train_rec: f64,
    pub heldout_mse: Option<f64>,
    pub disc_loss: Option<f64>,
    pub reseeded_codes: usize,
    pub seconds_per_step: f64,
}

/// Stateful stage-1 optimizer loop over caller-supplied batches.
pub struct Stage1Trainer {
    pub model: VqModel,
    opt: Adam,
    disc_opt: Option<Adam>,
    usage: Vec<u64>,
    last_features: Vec<f32>,
    last_good: VqModel,
    steps: u64,
    epoch: usize,
    rng: Rng,
}

impl Stage1Trainer {
    pub fn new(model: VqModel) -> Result<Self> {
        let cfg = &model.config;
        let opt = Adam::new(AdamConfig {
            lr: cfg.lr_at(0),
            ..AdamConfig::default()
        })?;
        let disc_opt = match cfg.variant {
            Variant::Vqgan => Some(Adam::new(AdamConfig {
                lr: cfg.disc_lr,
                beta1: 0.5,
                ..AdamConfig::default()
            })?),
            Variant::Vqvae => None,
        };
        Ok(Stage1Trainer {
            usage: vec![0; cfg.codebook_size],
            last_features: Vec::new(),
            last_good: model.clone(),
            rng: rng_from_seed(cfg.seed ^ 0x5eed_0001),
            opt,
            disc_opt,
            steps: 0,
            epoch: 0,
            model,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn diverged(&self, what: impl Into<String>) -> VqError {
        VqError::Diverged {
            step: self.steps,
            what: what.into(),
            last_good: Box::new(self.last_good.clone()),
        }
    }

    fn apply(&mut self, grads: &atvc_tensor::GradMap, disc: bool) -> Result<()> {
        let opt = if disc {
            self.disc_opt.as_mut().expect("vqgan has a discriminator optimizer")
        } else {
            &mut self.opt
        };
        match opt.step(&mut self.model.params, grads) {
            Ok(()) => Ok(()),
            Err(TensorError::NonFiniteGradient(name)) => Err(self.diverged(format!("non-finite gradient in {name}"))),
            Err(e) => Err(e.into()),
        }
    }

    /// One auto-encoder update (and one discriminator update for VQGAN) on `[B,3,H,W]`.
    pub fn step(&mut self, batch: &Tensor) -> Result<StepStats> {
        let cfg = self.model.config.clone();
        let mut g = Graph::new();
        let fwd = self.model.forward(&mut g, batch, true)?;
        let mut total = fwd.loss.total;
        let (mut perceptual, mut gen) = (None, None);
        if cfg.variant == Variant::Vqgan {
            let real = self.model.discriminate(&mut g, fwd.target, false)?;
            let fake = self.model.discriminate(&mut g, fwd.recon, false)?;
            let fm = feature_matching(&mut g, &real.features, &fake.features)?;
            let (_, gl) = gan_losses(&mut g, real.logits, fake.logits);
            perceptual = Some(g.value(fm).item());
            gen = Some(g.value(gl).item());
            let fm_w = g.scale(fm, cfg.perceptual_weight);
            total = g.add(total, fm_w)?;
            if self.steps >= cfg.gan_warmup {
                let gl_w = g.scale(gl, cfg.gan_weight);
                total = g.add(total, gl_w)?;
            }
        }
        let stats = StepStats {
            total: g.value(total).item(),
            rec: g.value(fwd.loss.rec).item(),
            codebook: g.value(fwd.loss.codebook).item(),
            commit: g.value(fwd.loss.commit).item(),
            perceptual,
            gen,
            disc: None,
        };
        if !stats.total.is_finite() {
            return Err(self.diverged(format!("loss {}", stats.total)));
        }
        for &i in &fwd.indices {
            self.usage[i] += 1;
        }
        self.last_features = g.value(fwd.features).data().to_vec();
        let recon = g.value(fwd.recon).clone();
        let grads = g.backward(total)?.into_param_grads();
        self.apply(&grads, false)?;

        let mut stats = stats;
        if cfg.variant == Variant::Vqgan {
            let mut g = Graph::new();
            let real_x = g.constant(batch.clone());
            let fake_x = g.constant(recon);
            let real = self.model.discriminate(&mut g, real_x, true)?;
            let fake = self.model.discriminate(&mut g, fake_x, true)?;
            let (dl, _) = gan_losses(&mut g, real.logits, fake.logits);
            let d = g.value(dl).item();
            if !d.is_finite() {
                return Err(self.diverged(format!("discriminator loss {d}")));
            }
            stats.disc = Some(d);
            let grads = g.backward(dl)?.into_param_grads();
            self.apply(&grads, true)?;
        }
        self.steps += 1;
        Ok(stats)
    }

    /// Close the epoch: reseed unused codes from recent encoder outputs,
    /// remember the parameters as the last good state, and decay the lr.
    pub fn end_epoch(&mut self) -> usize {
        let dim = self.model.config.dim;
        let cells = self.last_features.len() / dim;
        let mut reseeded = 0;
        if cells > 0 {
            let cb = self.model.params.get_mut(CODEBOOK).expect("codebook present");
            for (k, &n) in self.usage.iter().enumerate() {
                if n == 0 {
                    let c = self.rng.random_range(0..cells);
                    cb.data_mut()[k * dim..(k + 1) * dim].copy_from_slice(&self.last_features[c * dim..(c + 1) * dim]);
                    reseeded += 1;
                }
            }
        }
        self.usage.iter_mut().for_each(|u| *u = 0);
        self.last_good = self.model.clone();
        self.epoch += 1;
        self.opt.set_lr(self.model.config.lr_at(self.epoch));
        reseeded
    }

    /// Run epochs over `train` until the configured epoch or step budget is spent.
    pub fn fit<F: FnMut(&EpochLog)>(
        &mut self,
        train: &[Tensor],
        heldout: &[Tensor],
        mut on_epoch: F,
    ) -> Result<Vec<EpochLog>> {
        let cfg = self.model.config.clone();
        if train.is_empty() {
            return Err(VqError::Config("empty training set".into()));
        }
        let mut log = Vec::new();
        let mut order: Vec<usize> = (0..train.len()).collect();
        while self.epoch < cfg.epochs && cfg.max_steps.is_none_or(|m| self.steps < m) {
            let lr = cfg.lr_at(self.epoch);
            order.shuffle(&mut self.rng);
            let (mut tl, mut tr, mut dl, mut n, mut nd) = (0.0f64, 0.0f64, 0.0f64, 0u64, 0u64);
            let start = Instant::now();
            for chunk in order.chunks(cfg.batch_size) {
                if cfg.max_steps.is_some_and(|m| self.steps >= m) {
                    break;
                }
                let items: Vec<Tensor> = chunk.iter().map(|&i| train[i].clone()).collect();
                let s = self.step(&stack(&items)?)?;
                tl += s.total as f64;
                tr += s.rec as f64;
                n += 1;
                if let Some(d) = s.disc {
                    dl += d as f64;
                    nd += 1;
                }
            }
            let secs = start.elapsed().as_secs_f64();
            let epoch = self.epoch;
            let reseeded = self.end_epoch();
            let heldout_mse = if heldout.is_empty() {
                None
            } else {
                Some(reconstruction_mse(&self.model, heldout)?)
            };
            let entry = EpochLog {
                epoch,
                lr,
                steps: self.steps,
                train_loss: tl / n.max(1) as f64,
                train_rec: tr / n.max(1) as f64,
                heldout_mse,
                disc_loss: (nd > 0).then(|| dl / nd as f64),
                reseeded_codes: reseeded,
                seconds_per_step: secs / n.max(1) as f64,
            };
            on_epoch(&entry);
            log.push(entry);
        }
        Ok(log)
    }
}

/// Per-element MSE between `[3,H,W]` images and their clamped encode/decode round-trip.
pub fn reconstruction_mse(model: &VqModel, images: &[Tensor]) -> Result<f64> {
    let grids = model.encode_batch(images)?;
    let recon = model.decode_batch(&grids)?;
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (a, b) in images.iter().zip(&recon) {
        for (&x, &y) in a.data().iter().zip(b.data()) {
            sum += ((x - y.clamp(0.0, 1.0)) as f64).powi(2);
        }
        n += a.numel();
    }
    Ok(sum / n.max(1) as f64)
}
