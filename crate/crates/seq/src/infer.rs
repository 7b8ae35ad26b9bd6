use atvc_tensor::rng_from_seed;
use atvc_text::{EOS, PAD, SEPA};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SeqError};
use crate::layout::Segment;
use crate::model::{pos_kind, PosKind, Transformer, LN_EPS};

/// `x·W + b` for a row vector `x` and row-major `W [in, out]`.
fn vecmat(x: &[f32], w: &[f32], b: &[f32]) -> Vec<f32> {
    let out = b.len();
    let mut y = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * out..(i + 1) * out];
        for (yj, &wj) in y.iter_mut().zip(row) {
            *yj += xi * wj;
        }
    }
    y
}

fn layer_norm(x: &[f32], g: &[f32], b: &[f32]) -> Vec<f32> {
    let n = x.len() as f32;
    let mean = x.iter().sum::<f32>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter()
        .zip(g)
        .zip(b)
        .map(|((&v, &gi), &bi)| (v - mean) * inv * gi + bi)
        .collect()
}

/// Incremental decoder holding per-layer key/value caches.
pub struct Cached<'a> {
    model: &'a Transformer,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    pos: usize,
}

impl<'a> Cached<'a> {
    pub fn new(model: &'a Transformer) -> Self {
        let n = model.config.layers;
        Cached {
            model,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
            pos: 0,
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    fn p(&self, name: &str) -> &'a [f32] {
        self.model
            .params
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` present by construction"))
            .data()
    }

    fn row(&self, name: &str, i: usize) -> &'a [f32] {
        let d = self.model.config.model_dim;
        &self.p(name)[i * d..(i + 1) * d]
    }

    /// Feed the token at the next position; returns logits for the position after it.
    pub fn push(&mut self, token: usize) -> Result<Vec<f32>> {
        let m = self.model;
        let cfg = &m.config;
        let lay = m.layout();
        let pos = self.pos;
        if pos >= lay.len() {
            return Err(SeqError::Sequence(format!(
                "sequence already holds {} tokens",
                lay.len()
            )));
        }
        if token >= cfg.vocab_size() {
            return Err(SeqError::Sequence(format!("token {token} outside vocabulary")));
        }
        let (d, h, hd, a) = (cfg.model_dim, cfg.heads, cfg.head_dim, cfg.attn_dim());
        let mut x: Vec<f32> = self.row("tok_emb", token).to_vec();
        let pe: Vec<f32> = match pos_kind(&lay, pos) {
            PosKind::Text(i) => self.row("text_pos", i).to_vec(),
            PosKind::Image { row, col, seg } => {
                let (r, c, s) = (
                    self.row("row_emb", row),
                    self.row("col_emb", col),
                    self.row("seg_emb", seg),
                );
                (0..d).map(|k| (r[k] + c[k]) + s[k]).collect()
            }
        };
        x.iter_mut().zip(&pe).for_each(|(xi, pi)| *xi += pi);
        let scale = 1.0 / (hd as f32).sqrt();
        for l in 0..cfg.layers {
            let pre = format!("layer{l}");
            let n = |s: &str| format!("{pre}.{s}");
            let hn = layer_norm(&x, self.p(&n("ln1.g")), self.p(&n("ln1.b")));
            let q = vecmat(&hn, self.p(&n("wq")), self.p(&n("bq")));
            let k = vecmat(&hn, self.p(&n("wk")), self.p(&n("bk")));
            let v = vecmat(&hn, self.p(&n("wv")), self.p(&n("bv")));
            self.keys[l].extend_from_slice(&k);
            self.values[l].extend_from_slice(&v);
            let visible: Vec<usize> = (0..=pos).filter(|&j| m.masks.get(l, pos, j)).collect();
            let mut o = vec![0.0f32; a];
            for head in 0..h {
                let qs = &q[head * hd..(head + 1) * hd];
                let scores: Vec<f32> = visible
                    .iter()
                    .map(|&j| {
                        let ks = &self.keys[l][j * a + head * hd..j * a + (head + 1) * hd];
                        qs.iter().zip(ks).map(|(x, y)| x * y).sum::<f32>() * scale
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let exps: Vec<f32> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f32 = exps.iter().sum();
                let out = &mut o[head * hd..(head + 1) * hd];
                for (&j, &e) in visible.iter().zip(&exps) {
                    let vs = &self.values[l][j * a + head * hd..j * a + (head + 1) * hd];
                    for (oi, &vi) in out.iter_mut().zip(vs) {
                        *oi += e / z * vi;
                    }
                }
            }
            let o = vecmat(&o, self.p(&n("wo")), self.p(&n("bo")));
            x.iter_mut().zip(&o).for_each(|(xi, oi)| *xi += oi);
            let h2 = layer_norm(&x, self.p(&n("ln2.g")), self.p(&n("ln2.b")));
            let mut f = vecmat(&h2, self.p(&n("w1")), self.p(&n("b1")));
            f.iter_mut().for_each(|v| *v = v.max(0.0));
            let f = vecmat(&f, self.p(&n("w2")), self.p(&n("b2")));
            x.iter_mut().zip(&f).for_each(|(xi, fi)| *xi += fi);
        }
        let xf = layer_norm(&x, self.p("ln_f.g"), self.p("ln_f.b"));
        self.pos += 1;
        Ok(vecmat(&xf, self.p("head.w"), self.p("head.b")))
    }
}

/// Token selection rule for generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Decoding {
    Greedy,
    TopK { k: usize, temperature: f32, seed: u64 },
}

/// Generated re-creation codes (in `[0, K)`) and answer text ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generated {
    pub m_codes: Vec<usize>,
    pub answer: Vec<u32>,
}

/// Highest logit in `range`, lowest index on ties.
fn argmax(logits: &[f32], range: std::ops::Range<usize>) -> usize {
    let mut best = range.start;
    for i in range {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    best
}

fn sample_top_k(logits: &[f32], range: std::ops::Range<usize>, k: usize, temp: f32, rng: &mut impl Rng) -> usize {
    let mut cand: Vec<usize> = range.collect();
    cand.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    cand.truncate(k.max(1));
    let t = temp.max(1e-6);
    let max = logits[cand[0]];
    let w: Vec<f64> = cand.iter().map(|&i| (((logits[i] - max) / t) as f64).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in cand.iter().zip(&w) {
        if u < *wi {
            return *i;
        }
        u -= wi;
    }
    *cand.last().expect("non-empty candidates")
}

/// Autoregressively emit the M grid and the answer from `question` and `v`.
///
/// Image positions may only emit codebook tokens and answer positions only
/// text tokens; the answer opens with [SEPA] and is padded after [EOS].
pub fn generate(model: &Transformer, question: &[u32], v: &[usize], decoding: Decoding) -> Result<Generated> {
    let cfg = &model.config;
    let lay = model.layout();
    if question.len() != cfg.text_len || v.len() != cfg.image_tokens() {
        return Err(SeqError::Sequence(format!(
            "prompt needs {} text ids and {} codes",
            cfg.text_len,
            cfg.image_tokens()
        )));
    }
    if v.iter().any(|&c| c >= cfg.codebook_size) || question.iter().any(|&t| t as usize >= cfg.text_vocab) {
        return Err(SeqError::Sequence("prompt id out of range".into()));
    }
    let mut rng = match decoding {
        Decoding::TopK { seed, .. } => Some(rng_from_seed(seed)),
        Decoding::Greedy => None,
    };
    let off = cfg.code_offset();
    let mut pick = |logits: &[f32], range: std::ops::Range<usize>| match decoding {
        Decoding::Greedy => argmax(logits, range),
        Decoding::TopK { k, temperature, .. } => {
            sample_top_k(logits, range, k, temperature, rng.as_mut().expect("sampling rng"))
        }
    };
    let mut dec = Cached::new(model);
    let mut logits = Vec::new();
    for &t in question {
        logits = dec.push(t as usize)?;
    }
    for &c in v {
        logits = dec.push(c + off)?;
    }
    let mut m_codes = Vec::with_capacity(cfg.image_tokens());
    for _ in lay.range(Segment::M) {
        let tok = pick(&logits, off..off + cfg.codebook_size);
        m_codes.push(tok - off);
        logits = dec.push(tok)?;
    }
    let mut answer = Vec::with_capacity(cfg.answer_len);
    let mut ended = false;
    for j in 0..cfg.answer_len {
        let tok = if j == 0 {
            SEPA
        } else if ended {
            PAD
        } else {
            pick(&logits, 0..cfg.text_vocab) as u32
        };
        ended |= tok == EOS;
        answer.push(tok);
        if j + 1 < cfg.answer_len {
            logits = dec.push(tok as usize)?;
        }
    }
    Ok(Generated { m_codes, answer })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.0, 2.0, 1.0, 2.0], 0..4), 1);
        assert_eq!(argmax(&[5.0, 2.0, 1.0, 2.0], 1..4), 1);
    }

    #[test]
    fn top_k_one_is_greedy() {
        let mut rng = rng_from_seed(0);
        let l = [0.1, 3.0, 2.9, -1.0];
        for _ in 0..20 {
            assert_eq!(sample_top_k(&l, 0..4, 1, 1.0, &mut rng), 1);
        }
        for _ in 0..50 {
            let s = sample_top_k(&l, 0..4, 2, 1.0, &mut rng);
            assert!(s == 1 || s == 2);
        }
    }

    #[test]
    fn layer_norm_standardizes() {
        let y = layer_norm(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4], &[0.0; 4]);
        let mean: f32 = y.iter().sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
    }
}
