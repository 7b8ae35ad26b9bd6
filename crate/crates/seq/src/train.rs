use atvc_tensor::{rng_from_seed, Adam, AdamConfig, Graph, Rng, TensorError};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Result, SeqError};
use crate::infer::{generate, Decoding};
use crate::layout::{Segment, TokenSequence};
use crate::model::{shifted_targets, Transformer};

/// One line of the stage-2 training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub loss: f32,
    pub lr: f32,
    pub perplexity: f64,
    pub accuracy: f64,
}

/// Weighted next-token accuracy of full-vocabulary argmax predictions.
pub fn weighted_accuracy(logits: &[f32], vocab: usize, targets: &[usize], weights: &[f32]) -> f64 {
    let (mut hit, mut total) = (0.0f64, 0.0f64);
    for (r, row) in logits.chunks_exact(vocab).enumerate() {
        let w = weights[r] as f64;
        if w == 0.0 {
            continue;
        }
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        total += w;
        if best == targets[r] {
            hit += w;
        }
    }
    if total == 0.0 {
        1.0
    } else {
        hit / total
    }
}

/// Loss and weighted accuracy on `seqs` without recording gradients.
pub fn evaluate(model: &Transformer, seqs: &[TokenSequence], batch_size: usize) -> Result<(f64, f64)> {
    let (mut loss_num, mut w_sum, mut hit) = (0.0f64, 0.0f64, 0.0f64);
    for chunk in seqs.chunks(batch_size.max(1)) {
        let refs: Vec<&TokenSequence> = chunk.iter().collect();
        let mut g = Graph::new();
        let (loss, logits) = model.loss(&mut g, &refs, false)?;
        let (targets, weights) = shifted_targets(&refs);
        let w: f64 = weights.iter().map(|&x| x as f64).sum();
        let acc = weighted_accuracy(g.value(logits).data(), model.config.vocab_size(), &targets, &weights);
        loss_num += g.value(loss).item() as f64 * w;
        hit += acc * w;
        w_sum += w;
    }
    if w_sum == 0.0 {
        return Ok((0.0, 1.0));
    }
    Ok((loss_num / w_sum, hit / w_sum))
}

/// Weighted next-token accuracy split by the segment of the predicted token.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentAccuracy {
    pub loss: f64,
    pub overall: f64,
    /// `[hits, weight]` for T, V, M and A targets.
    pub by_segment: [[f64; 2]; 4],
}

impl SegmentAccuracy {
    pub fn segment(&self, seg: Segment) -> Option<f64> {
        let [hit, total] = self.by_segment[seg.id()];
        (total > 0.0).then(|| hit / total)
    }

    /// Accuracy over targets outside the given segments.
    pub fn excluding(&self, skip: &[Segment]) -> f64 {
        let (mut hit, mut total) = (0.0, 0.0);
        for seg in [Segment::T, Segment::V, Segment::M, Segment::A] {
            if !skip.contains(&seg) {
                hit += self.by_segment[seg.id()][0];
                total += self.by_segment[seg.id()][1];
            }
        }
        if total == 0.0 {
            1.0
        } else {
            hit / total
        }
    }
}

/// Loss and argmax accuracy per target segment, without recording gradients.
pub fn segment_accuracy(model: &Transformer, seqs: &[TokenSequence], batch_size: usize) -> Result<SegmentAccuracy> {
    let vocab = model.config.vocab_size();
    let mut out = SegmentAccuracy::default();
    let (mut loss_num, mut w_sum) = (0.0f64, 0.0f64);
    for chunk in seqs.chunks(batch_size.max(1)) {
        let refs: Vec<&TokenSequence> = chunk.iter().collect();
        let mut g = Graph::new();
        let (loss, logits) = model.loss(&mut g, &refs, false)?;
        let (targets, weights) = shifted_targets(&refs);
        let w: f64 = weights.iter().map(|&x| x as f64).sum();
        loss_num += g.value(loss).item() as f64 * w;
        w_sum += w;
        let data = g.value(logits).data();
        let mut row = 0;
        for s in &refs {
            for i in 0..s.ids.len() {
                let wt = weights[row] as f64;
                if wt > 0.0 {
                    let r = &data[row * vocab..(row + 1) * vocab];
                    let best = (0..vocab).fold(0, |b, k| if r[k] > r[b] { k } else { b });
                    let cell = &mut out.by_segment[s.segments[i + 1].id()];
                    cell[1] += wt;
                    if best == targets[row] {
                        cell[0] += wt;
                    }
                }
                row += 1;
            }
        }
    }
    let (hit, total) = out.by_segment.iter().fold((0.0, 0.0), |(h, t), c| (h + c[0], t + c[1]));
    out.overall = if total == 0.0 { 1.0 } else { hit / total };
    out.loss = if w_sum == 0.0 { 0.0 } else { loss_num / w_sum };
    Ok(out)
}

/// Highest weighted next-token accuracy any predictor can reach on `seqs`:
/// targets sharing an identical prefix must receive the same prediction, so
/// each prefix scores only its most frequent continuation.
pub fn memorization_ceiling(seqs: &[TokenSequence]) -> f64 {
    use std::collections::HashMap;
    let mut groups: HashMap<&[usize], HashMap<usize, f64>> = HashMap::new();
    let mut total = 0.0;
    for s in seqs {
        for i in 1..s.ids.len() {
            let w = s.loss_weights[i] as f64;
            if w > 0.0 {
                *groups.entry(&s.ids[..i]).or_default().entry(s.ids[i]).or_default() += w;
                total += w;
            }
        }
    }
    if total == 0.0 {
        return 1.0;
    }
    groups
        .values()
        .map(|next| next.values().cloned().fold(0.0, f64::max))
        .sum::<f64>()
        / total
}

/// Stage-2 optimizer loop.
pub struct Stage2Trainer {
    pub model: Transformer,
    pub config: TrainConfig,
    opt: Adam,
    rng: Rng,
    steps: u64,
}

impl Stage2Trainer {
    pub fn new(model: Transformer, config: TrainConfig) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(SeqError::Config("batch_size must be positive".into()));
        }
        let opt = Adam::new(AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        })?;
        Ok(Stage2Trainer {
            rng: rng_from_seed(config.seed ^ 0x5eed_0002),
            model,
            config,
            opt,
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One Adam update on `batch`.
    pub fn step(&mut self, batch: &[&TokenSequence]) -> Result<LogRecord> {
        let mut g = Graph::new();
        let (loss, logits) = self.model.loss(&mut g, batch, true)?;
        let l = g.value(loss).item();
        if !l.is_finite() {
            return Err(SeqError::Diverged {
                step: self.steps,
                loss: l,
                detail: format!("batch of {} sequences", batch.len()),
            });
        }
        let (targets, weights) = shifted_targets(batch);
        let accuracy = weighted_accuracy(
            g.value(logits).data(),
            self.model.config.vocab_size(),
            &targets,
            &weights,
        );
        let mut grads = g.backward(loss)?.into_param_grads();
        if let Some(c) = self.config.grad_clip {
            grads.clip_global_norm(c);
        }
        match self.opt.step(&mut self.model.params, &grads) {
            Ok(()) => {}
            Err(TensorError::NonFiniteGradient(name)) => {
                return Err(SeqError::Diverged {
                    step: self.steps,
                    loss: l,
                    detail: format!("non-finite gradient in {name}"),
                })
            }
            Err(e) => return Err(e.into()),
        }
        self.steps += 1;
        Ok(LogRecord {
            step: self.steps,
            loss: l,
            lr: self.config.lr,
            perplexity: (l as f64).exp(),
            accuracy,
        })
    }

    /// Copy of a rejected sequence whose M slot holds the model's own greedy M.
    pub fn regenerate_placeholder(&self, seq: &TokenSequence) -> Result<TokenSequence> {
        let lay = self.model.layout();
        let off = self.model.config.code_offset();
        let question: Vec<u32> = seq.ids[lay.range(Segment::T)].iter().map(|&t| t as u32).collect();
        let v: Vec<usize> = seq.ids[lay.range(Segment::V)].iter().map(|&c| c - off).collect();
        let out = generate(&self.model, &question, &v, Decoding::Greedy)?;
        let mut copy = seq.clone();
        for (slot, c) in copy.ids[lay.range(Segment::M)].iter_mut().zip(out.m_codes) {
            *slot = c + off;
        }
        Ok(copy)
    }

    /// Train for the configured number of steps over shuffled mini-batches,
    /// stopping early once a full pass reaches `target_accuracy`.
    pub fn fit<F: FnMut(&LogRecord)>(&mut self, data: &[TokenSequence], mut on_step: F) -> Result<Vec<LogRecord>> {
        if data.is_empty() {
            return Err(SeqError::Config("empty training set".into()));
        }
        if self.config.placeholder_refresh == Some(0) {
            return Err(SeqError::Config("placeholder_refresh must be positive".into()));
        }
        let mut log = Vec::new();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let full_batch = self.config.batch_size >= data.len();
        let mut regenerated: Vec<Option<TokenSequence>> = vec![None; data.len()];
        'outer: while self.steps < self.config.steps {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.config.batch_size) {
                if self.steps >= self.config.steps {
                    break 'outer;
                }
                if let Some(every) = self.config.placeholder_refresh {
                    if self.steps % every == 0 {
                        for (i, s) in data.iter().enumerate().filter(|(_, s)| s.rejected) {
                            regenerated[i] = Some(self.regenerate_placeholder(s)?);
                        }
                    }
                }
                let mut batch: Vec<&TokenSequence> = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let pick = match &regenerated[i] {
                        Some(r) if self.rng.random_bool(0.5) => r,
                        _ => &data[i],
                    };
                    batch.push(pick);
                }
                let rec = self.step(&batch)?;
                on_step(&rec);
                // With a single full batch the pre-update accuracy is a full-pass measurement.
                let reached = full_batch && self.config.target_accuracy.is_some_and(|t| rec.accuracy >= t);
                log.push(rec);
                if reached {
                    break 'outer;
                }
            }
        }
        Ok(log)
    }
}
