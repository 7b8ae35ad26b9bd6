use std::path::{Path, PathBuf};

use atvc_tensor::{rng_from_seed, Graph, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::TransformerConfig;
use crate::error::{Result, SeqError};
use crate::layout::{Layout, Segment, TokenSequence};
use crate::mask::MaskStack;

pub const LN_EPS: f32 = 1e-5;
const INIT_STD: f32 = 0.02;

/// Decoder-only transformer parameters plus the masks they run under.
#[derive(Clone, Debug)]
pub struct Transformer {
    pub config: TransformerConfig,
    pub params: ParamStore,
    pub masks: MaskStack,
}

/// Per-position token-embedding ingredients shared by the graph and cached paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum PosKind {
    Text(usize),
    Image { row: usize, col: usize, seg: usize },
}

pub(crate) fn pos_kind(lay: &Layout, pos: usize) -> PosKind {
    match lay.cell(pos) {
        Some((row, col)) => PosKind::Image {
            row,
            col,
            seg: lay.segment(pos).id(),
        },
        None => PosKind::Text(lay.text_index(pos).expect("text position")),
    }
}

impl Transformer {
    pub fn new(config: TransformerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(config.seed);
        let d = config.model_dim;
        let a = config.attn_dim();
        let v = config.vocab_size();
        let mut p = ParamStore::new();
        let mut normal = |shape: &[usize]| Tensor::randn(shape, INIT_STD, &mut rng);
        p.insert("tok_emb", normal(&[v, d]));
        p.insert("text_pos", normal(&[config.text_len + config.answer_len, d]));
        p.insert("row_emb", normal(&[config.grid, d]));
        p.insert("col_emb", normal(&[config.grid, d]));
        p.insert("seg_emb", normal(&[4, d]));
        for l in 0..config.layers {
            let pre = format!("layer{l}");
            for (name, shape) in [
                ("wq", [d, a]),
                ("wk", [d, a]),
                ("wv", [d, a]),
                ("wo", [a, d]),
                ("w1", [d, 4 * d]),
                ("w2", [4 * d, d]),
            ] {
                p.insert(format!("{pre}.{name}"), normal(&shape));
            }
            for (name, n) in [("bq", a), ("bk", a), ("bv", a), ("bo", d), ("b1", 4 * d), ("b2", d)] {
                p.insert(format!("{pre}.{name}"), Tensor::zeros(&[n]));
            }
            for ln in ["ln1", "ln2"] {
                p.insert(format!("{pre}.{ln}.g"), Tensor::ones(&[d]));
                p.insert(format!("{pre}.{ln}.b"), Tensor::zeros(&[d]));
            }
        }
        p.insert("ln_f.g", Tensor::ones(&[d]));
        p.insert("ln_f.b", Tensor::zeros(&[d]));
        p.insert("head.w", normal(&[d, v]));
        p.insert("head.b", Tensor::zeros(&[v]));
        let masks = MaskStack::new(&config);
        Ok(Transformer {
            config,
            params: p,
            masks,
        })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    fn var(&self, g: &mut Graph, name: &str, train: bool) -> Result<Var> {
        if train {
            Ok(g.param_from(&self.params, name)?)
        } else {
            Ok(g.constant(self.params.require(name)?.clone()))
        }
    }

    fn linear(&self, g: &mut Graph, x: Var, w: &str, b: &str, train: bool) -> Result<Var> {
        let wv = self.var(g, w, train)?;
        let bv = self.var(g, b, train)?;
        let y = g.matmul(x, wv)?;
        Ok(g.add_broadcast(y, bv)?)
    }

    fn layer_norm(&self, g: &mut Graph, x: Var, pre: &str, train: bool) -> Result<Var> {
        let gm = self.var(g, &format!("{pre}.g"), train)?;
        let bt = self.var(g, &format!("{pre}.b"), train)?;
        Ok(g.layer_norm(x, gm, bt, LN_EPS)?)
    }

    /// `[L, d]` positional embeddings for the whole layout.
    fn positions(&self, g: &mut Graph, train: bool) -> Result<Var> {
        let lay = self.layout();
        let text = self.var(g, "text_pos", train)?;
        let row = self.var(g, "row_emb", train)?;
        let col = self.var(g, "col_emb", train)?;
        let seg = self.var(g, "seg_emb", train)?;
        let mut parts = Vec::new();
        for s in [Segment::T, Segment::V, Segment::M, Segment::A] {
            let r = lay.range(s);
            if s.is_image() {
                let cells: Vec<(usize, usize)> = r.clone().map(|p| lay.cell(p).unwrap()).collect();
                let rows: Vec<usize> = cells.iter().map(|c| c.0).collect();
                let cols: Vec<usize> = cells.iter().map(|c| c.1).collect();
                let re = g.embedding(row, &rows)?;
                let ce = g.embedding(col, &cols)?;
                let se = g.embedding(seg, &vec![s.id(); r.len()])?;
                let rc = g.add(re, ce)?;
                parts.push(g.add(rc, se)?);
            } else {
                let idx: Vec<usize> = r.map(|p| lay.text_index(p).unwrap()).collect();
                parts.push(g.embedding(text, &idx)?);
            }
        }
        Ok(g.concat(&parts, 0)?)
    }

    /// Logits `[B·L, V]` for a batch of full-length id sequences; row `b·L + i`
    /// scores the token at position `i + 1`.
    pub fn forward(&self, g: &mut Graph, batch: &[&[usize]], train: bool) -> Result<Var> {
        let cfg = &self.config;
        let len = self.masks.len;
        let bsz = batch.len();
        if bsz == 0 {
            return Err(SeqError::Sequence("empty batch".into()));
        }
        let mut flat = Vec::with_capacity(bsz * len);
        for ids in batch {
            if ids.len() != len {
                return Err(SeqError::MaskLength {
                    mask: len,
                    seq: ids.len(),
                });
            }
            if let Some(&bad) = ids.iter().find(|&&t| t >= cfg.vocab_size()) {
                return Err(SeqError::Sequence(format!("token {bad} outside vocabulary")));
            }
            flat.extend_from_slice(ids);
        }
        let (d, h, hd) = (cfg.model_dim, cfg.heads, cfg.head_dim);
        let tok = self.var(g, "tok_emb", train)?;
        let e = g.embedding(tok, &flat)?;
        let e = g.reshape(e, &[bsz, len, d])?;
        let pos = self.positions(g, train)?;
        let mut x = g.add_broadcast(e, pos)?;
        let scale = 1.0 / (hd as f32).sqrt();
        for l in 0..cfg.layers {
            let pre = format!("layer{l}");
            let hn = self.layer_norm(g, x, &format!("{pre}.ln1"), train)?;
            let split = |g: &mut Graph, t: Var| -> Result<Var> {
                let r = g.reshape(t, &[bsz, len, h, hd])?;
                let p = g.permute(r, &[0, 2, 1, 3])?;
                Ok(g.reshape(p, &[bsz * h, len, hd])?)
            };
            let q = self.linear(g, hn, &format!("{pre}.wq"), &format!("{pre}.bq"), train)?;
            let k = self.linear(g, hn, &format!("{pre}.wk"), &format!("{pre}.bk"), train)?;
            let v = self.linear(g, hn, &format!("{pre}.wv"), &format!("{pre}.bv"), train)?;
            let (q, k, v) = (split(g, q)?, split(g, k)?, split(g, v)?);
            let s = g.bmm(q, k, true)?;
            let s = g.scale(s, scale);
            let bias = g.constant(self.masks.bias(l));
            let s = g.add_broadcast(s, bias)?;
            let att = g.softmax(s)?;
            let o = g.bmm(att, v, false)?;
            let o = g.reshape(o, &[bsz, h, len, hd])?;
            let o = g.permute(o, &[0, 2, 1, 3])?;
            let o = g.reshape(o, &[bsz, len, h * hd])?;
            let o = self.linear(g, o, &format!("{pre}.wo"), &format!("{pre}.bo"), train)?;
            x = g.add(x, o)?;
            let h2 = self.layer_norm(g, x, &format!("{pre}.ln2"), train)?;
            let m = self.linear(g, h2, &format!("{pre}.w1"), &format!("{pre}.b1"), train)?;
            let m = g.relu(m);
            let m = self.linear(g, m, &format!("{pre}.w2"), &format!("{pre}.b2"), train)?;
            x = g.add(x, m)?;
        }
        let x = self.layer_norm(g, x, "ln_f", train)?;
        let logits = self.linear(g, x, "head.w", "head.b", train)?;
        Ok(g.reshape(logits, &[bsz * len, cfg.vocab_size()])?)
    }

    /// Weighted next-token cross-entropy over a batch, with the logits node.
    pub fn loss(&self, g: &mut Graph, batch: &[&TokenSequence], train: bool) -> Result<(Var, Var)> {
        let ids: Vec<&[usize]> = batch.iter().map(|s| s.ids.as_slice()).collect();
        let logits = self.forward(g, &ids, train)?;
        let (targets, weights) = shifted_targets(batch);
        let loss = g.cross_entropy(logits, &targets, &weights)?;
        Ok((loss, logits))
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<()> {
        atvc_tensor::write_checkpoint(path, &self.params)?;
        let side = sidecar_path(path);
        let json = serde_json::to_string_pretty(meta).expect("meta serializes");
        std::fs::write(&side, json + "\n").map_err(|source| SeqError::Io { path: side, source })
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|source| SeqError::Io {
            path: side.clone(),
            source,
        })?;
        let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| SeqError::Checkpoint {
            path: side.clone(),
            msg: e.to_string(),
        })?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(SeqError::Checkpoint {
                path: side,
                msg: format!("expected a `{CHECKPOINT_KIND}` checkpoint, found `{}`", meta.kind),
            });
        }
        let params = atvc_tensor::read_checkpoint(path)?;
        let mut model = Transformer::new(meta.config.clone())?;
        if params.len() != model.params.len() {
            return Err(SeqError::Checkpoint {
                path: path.to_path_buf(),
                msg: format!("{} parameters, expected {}", params.len(), model.params.len()),
            });
        }
        for (name, t) in model.params.iter() {
            let ok = params
                .get(name)
                .is_some_and(|p| p.shape() == t.shape() && p.is_finite());
            if !ok {
                return Err(SeqError::Checkpoint {
                    path: path.to_path_buf(),
                    msg: format!("parameter `{name}` missing, misshapen or non-finite"),
                });
            }
        }
        model.params = params;
        Ok((model, meta))
    }
}

/// Targets and weights aligned with [`Transformer::forward`] rows.
pub fn shifted_targets(batch: &[&TokenSequence]) -> (Vec<usize>, Vec<f32>) {
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for s in batch {
        let n = s.ids.len();
        for i in 0..n {
            if i + 1 < n {
                targets.push(s.ids[i + 1]);
                weights.push(s.loss_weights[i + 1]);
            } else {
                targets.push(0);
                weights.push(0.0);
            }
        }
    }
    (targets, weights)
}

pub const CHECKPOINT_KIND: &str = "atvc-seq";

/// Sidecar metadata stored next to a checkpoint as `<checkpoint>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub config: TransformerConfig,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub steps: u64,
    pub final_loss: Option<f32>,
}

impl CheckpointMeta {
    pub fn new(config: &TransformerConfig, steps: u64, final_loss: Option<f32>) -> Self {
        CheckpointMeta {
            kind: CHECKPOINT_KIND.into(),
            config: config.clone(),
            config_hash: config.hash(),
            seed: config.seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            steps,
            final_loss,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}
