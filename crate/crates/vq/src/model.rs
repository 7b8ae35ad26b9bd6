use std::path::{Path, PathBuf};

use atvc_tensor::{rng_from_seed, Graph, ParamStore, Tensor, Var};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::config::{Variant, VqConfig};
use crate::error::{Result, VqError};
use crate::loss::{vq_loss, VqLoss};
use crate::quantize::{nearest_codes, LatentGrid};

pub const CODEBOOK: &str = "codebook";
const DISC_SLOPE: f32 = 0.2;

/// Encoder, codebook, decoder and (for VQGAN) the patch discriminator.
#[derive(Clone, Debug)]
pub struct VqModel {
    pub config: VqConfig,
    pub params: ParamStore,
}

/// Everything a training step needs from one forward pass.
pub struct Forward {
    /// Encoder output as `N×D` cells, N = batch · G².
    pub features: Var,
    pub indices: Vec<usize>,
    /// Selected codebook rows, differentiable w.r.t. the codebook.
    pub quantized: Var,
    /// Straight-through node fed to the decoder: value of `quantized`, gradient to `features`.
    pub latent: Var,
    pub recon: Var,
    pub target: Var,
    pub loss: VqLoss,
}

/// Discriminator output: patch logits and intermediate activations.
pub struct DiscOut {
    pub logits: Var,
    pub features: Vec<Var>,
}

fn kaiming(shape: &[usize], fan_in: usize, rng: &mut atvc_tensor::Rng) -> Tensor {
    Tensor::randn(shape, (2.0 / fan_in as f32).sqrt(), rng)
}

impl VqModel {
    pub fn new(config: VqConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(config.seed);
        let mut p = ParamStore::new();
        let d = config.dim;
        let ch = &config.channels;
        let last = *ch.last().expect("validated non-empty");

        let mut cin = 3;
        for (i, &c) in ch.iter().enumerate() {
            p.insert(format!("enc.down{i}.w"), kaiming(&[c, cin, 4, 4], cin * 16, &mut rng));
            p.insert(format!("enc.down{i}.b"), Tensor::zeros(&[c]));
            cin = c;
        }
        for prefix in ["enc", "dec"] {
            for r in 0..config.res_blocks {
                for j in 0..2 {
                    let std_scale = if j == 1 { 0.1 } else { 1.0 };
                    let mut w = kaiming(&[last, last, 3, 3], last * 9, &mut rng);
                    w.data_mut().iter_mut().for_each(|x| *x *= std_scale);
                    p.insert(format!("{prefix}.res{r}.conv{j}.w"), w);
                    p.insert(format!("{prefix}.res{r}.conv{j}.b"), Tensor::zeros(&[last]));
                }
            }
        }
        p.insert("enc.proj.w", kaiming(&[d, last, 1, 1], last, &mut rng));
        p.insert("enc.proj.b", Tensor::zeros(&[d]));
        let k = config.codebook_size as f32;
        p.insert(
            CODEBOOK,
            Tensor::uniform(&[config.codebook_size, d], -1.0 / k, 1.0 / k, &mut rng),
        );
        p.insert("dec.proj.w", kaiming(&[last, d, 1, 1], d, &mut rng));
        p.insert("dec.proj.b", Tensor::zeros(&[last]));
        let ins: Vec<usize> = ch.iter().rev().copied().collect();
        let mut outs: Vec<usize> = ch.iter().rev().skip(1).copied().collect();
        outs.push(3);
        for (i, (&ci, &co)) in ins.iter().zip(&outs).enumerate() {
            // Each output pixel of a stride-2, 4x4 transposed conv sees 2x2 taps per input channel.
            p.insert(format!("dec.up{i}.w"), kaiming(&[ci, co, 4, 4], ci * 4, &mut rng));
            p.insert(format!("dec.up{i}.b"), Tensor::zeros(&[co]));
        }
        if config.variant == Variant::Vqgan {
            p.insert("disc.conv0.w", kaiming(&[32, 3, 4, 4], 48, &mut rng));
            p.insert("disc.conv0.b", Tensor::zeros(&[32]));
            p.insert("disc.conv1.w", kaiming(&[64, 32, 4, 4], 512, &mut rng));
            p.insert("disc.conv1.b", Tensor::zeros(&[64]));
            p.insert("disc.conv2.w", kaiming(&[1, 64, 3, 3], 576, &mut rng));
            p.insert("disc.conv2.b", Tensor::zeros(&[1]));
        }
        Ok(VqModel { config, params: p })
    }

    pub fn grid_size(&self) -> usize {
        self.config.grid_size()
    }

    pub fn codebook(&self) -> &Tensor {
        self.params.get(CODEBOOK).expect("codebook is always present")
    }

    /// Names of the auto-encoder parameters (everything except the discriminator).
    pub fn autoencoder_params(&self) -> impl Iterator<Item = &str> {
        self.params.names().filter(|n| !n.starts_with("disc."))
    }

    pub fn var(&self, g: &mut Graph, name: &str, train: bool) -> Result<Var> {
        if train {
            Ok(g.param_from(&self.params, name)?)
        } else {
            Ok(g.constant(self.params.require(name)?.clone()))
        }
    }

    fn conv(&self, g: &mut Graph, x: Var, name: &str, stride: usize, pad: usize, train: bool) -> Result<Var> {
        let w = self.var(g, &format!("{name}.w"), train)?;
        let b = self.var(g, &format!("{name}.b"), train)?;
        let y = g.conv2d(x, w, stride, pad)?;
        Ok(g.add_channel_bias(y, b)?)
    }

    fn res_stack(&self, g: &mut Graph, mut x: Var, prefix: &str, train: bool) -> Result<Var> {
        for r in 0..self.config.res_blocks {
            let h = g.relu(x);
            let h = self.conv(g, h, &format!("{prefix}.res{r}.conv0"), 1, 1, train)?;
            let h = g.relu(h);
            let h = self.conv(g, h, &format!("{prefix}.res{r}.conv1"), 1, 1, train)?;
            x = g.add(x, h)?;
        }
        Ok(x)
    }

    /// `[B,3,H,W]` images to `[B,D,G,G]` continuous features.
    pub fn encode_features(&self, g: &mut Graph, x: Var, train: bool) -> Result<Var> {
        // Centre pixels on zero; the decoder undoes this on its output.
        let h = g.scale(x, 2.0);
        let mut h = g.add_scalar(h, -1.0);
        for i in 0..self.config.channels.len() {
            h = self.conv(g, h, &format!("enc.down{i}"), 2, 1, train)?;
            h = g.relu(h);
        }
        h = self.res_stack(g, h, "enc", train)?;
        self.conv(g, h, "enc.proj", 1, 0, train)
    }

    /// `[B,D,G,G]` latent features to `[B,3,H,W]` images.
    pub fn decode(&self, g: &mut Graph, z: Var, train: bool) -> Result<Var> {
        let mut h = self.conv(g, z, "dec.proj", 1, 0, train)?;
        h = self.res_stack(g, h, "dec", train)?;
        let n = self.config.channels.len();
        for i in 0..n {
            h = g.relu(h);
            let w = self.var(g, &format!("dec.up{i}.w"), train)?;
            let b = self.var(g, &format!("dec.up{i}.b"), train)?;
            h = g.conv_transpose2d(h, w, 2, 1)?;
            h = g.add_channel_bias(h, b)?;
        }
        let h = g.add_scalar(h, 1.0);
        Ok(g.scale(h, 0.5))
    }

    /// `[B,D,G,G]` to `N×D` cells in (batch, row, col) order.
    pub fn to_cells(&self, g: &mut Graph, f: Var) -> Result<Var> {
        let s = g.shape(f).to_vec();
        let p = g.permute(f, &[0, 2, 3, 1])?;
        Ok(g.reshape(p, &[s[0] * s[2] * s[3], s[1]])?)
    }

    /// Inverse of [`to_cells`](Self::to_cells) for a batch of `batch` grids.
    pub fn from_cells(&self, g: &mut Graph, cells: Var, batch: usize) -> Result<Var> {
        let gs = self.grid_size();
        let r = g.reshape(cells, &[batch, gs, gs, self.config.dim])?;
        Ok(g.permute(r, &[0, 3, 1, 2])?)
    }

    pub fn check_images(&self, images: &Tensor) -> Result<usize> {
        let s = images.shape();
        let want = self.config.image_size;
        if s.len() != 4 || s[1] != 3 || s[2] != want || s[3] != want {
            return Err(VqError::ImageShape { got: s.to_vec(), want });
        }
        Ok(s[0])
    }

    /// Full auto-encoder pass on `[B,3,H,W]` images in `[0,1]`.
    pub fn forward(&self, g: &mut Graph, images: &Tensor, train: bool) -> Result<Forward> {
        let batch = self.check_images(images)?;
        let target = g.constant(images.clone());
        let f = self.encode_features(g, target, train)?;
        let features = self.to_cells(g, f)?;
        let indices = nearest_codes(g.value(features).data(), self.codebook().data(), self.config.dim);
        let cb = self.var(g, CODEBOOK, train)?;
        let quantized = g.embedding(cb, &indices)?;
        let st = g.straight_through(features, quantized)?;
        let z = self.from_cells(g, st, batch)?;
        let recon = self.decode(g, z, train)?;
        let loss = vq_loss(g, target, features, quantized, recon, self.config.beta)?;
        Ok(Forward {
            features,
            indices,
            quantized,
            latent: st,
            recon,
            target,
            loss,
        })
    }

    /// Patch discriminator: logits `[B,1,H/4,W/4]` and the two hidden activations.
    pub fn discriminate(&self, g: &mut Graph, x: Var, train: bool) -> Result<DiscOut> {
        if self.config.variant != Variant::Vqgan {
            return Err(VqError::Config("discriminator requested on a vqvae model".into()));
        }
        let h0 = self.conv(g, x, "disc.conv0", 2, 1, train)?;
        let h0 = g.leaky_relu(h0, DISC_SLOPE);
        let h1 = self.conv(g, h0, "disc.conv1", 2, 1, train)?;
        let h1 = g.leaky_relu(h1, DISC_SLOPE);
        let logits = self.conv(g, h1, "disc.conv2", 1, 1, train)?;
        Ok(DiscOut {
            logits,
            features: vec![h0, h1],
        })
    }

    /// Latent grids for a batch of `[3,H,W]` images.
    pub fn encode_batch(&self, images: &[Tensor]) -> Result<Vec<LatentGrid>> {
        let mut out = Vec::with_capacity(images.len());
        let gs = self.grid_size();
        for chunk in images.chunks(32) {
            let batch = stack(chunk)?;
            self.check_images(&batch)?;
            let mut g = Graph::new();
            let x = g.constant(batch);
            let f = self.encode_features(&mut g, x, false)?;
            let cells = self.to_cells(&mut g, f)?;
            let idx = nearest_codes(g.value(cells).data(), self.codebook().data(), self.config.dim);
            for grid in idx.chunks(gs * gs) {
                out.push(LatentGrid::new(gs, grid.to_vec(), self.config.codebook_size)?);
            }
        }
        Ok(out)
    }

    pub fn encode_image(&self, img: &RgbImage) -> Result<LatentGrid> {
        let t = image_to_tensor(img);
        Ok(self.encode_batch(&[t])?.remove(0))
    }

    /// Decode grids to `[3,H,W]` tensors (unclamped).
    pub fn decode_batch(&self, grids: &[LatentGrid]) -> Result<Vec<Tensor>> {
        let gs = self.grid_size();
        let k = self.config.codebook_size;
        let mut out = Vec::with_capacity(grids.len());
        for chunk in grids.chunks(32) {
            let mut idx = Vec::with_capacity(chunk.len() * gs * gs);
            for grid in chunk {
                if grid.size != gs {
                    return Err(VqError::Latents(format!("grid size {} but model uses {gs}", grid.size)));
                }
                LatentGrid::new(grid.size, grid.indices.clone(), k)?;
                idx.extend_from_slice(&grid.indices);
            }
            let mut g = Graph::new();
            let cb = g.constant(self.codebook().clone());
            let q = g.embedding(cb, &idx)?;
            let z = self.from_cells(&mut g, q, chunk.len())?;
            let img = self.decode(&mut g, z, false)?;
            out.extend(unstack(g.value(img))?);
        }
        Ok(out)
    }

    pub fn decode_latents(&self, grid: &LatentGrid) -> Result<RgbImage> {
        let t = self.decode_batch(std::slice::from_ref(grid))?.remove(0);
        Ok(tensor_to_image(&t))
    }

    pub fn reconstruct(&self, img: &RgbImage) -> Result<RgbImage> {
        self.decode_latents(&self.encode_image(img)?)
    }

    /// Write parameters plus a JSON sidecar holding the config and provenance.
    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<()> {
        atvc_tensor::write_checkpoint(path, &self.params)?;
        let side = sidecar_path(path);
        let json = serde_json::to_string_pretty(meta).expect("meta serializes");
        std::fs::write(&side, json + "\n").map_err(|source| VqError::Io { path: side, source })
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|source| VqError::Io {
            path: side.clone(),
            source,
        })?;
        let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| VqError::Checkpoint {
            path: side.clone(),
            msg: e.to_string(),
        })?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(VqError::Checkpoint {
                path: side,
                msg: format!("expected a `{CHECKPOINT_KIND}` checkpoint, found `{}`", meta.kind),
            });
        }
        meta.config.validate()?;
        let params = atvc_tensor::read_checkpoint(path)?;
        let fresh = VqModel::new(meta.config.clone())?;
        for (name, t) in fresh.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() && p.is_finite() => {}
                Some(p) => {
                    return Err(VqError::Checkpoint {
                        path: path.to_path_buf(),
                        msg: format!("parameter `{name}` has shape {:?} or non-finite values", p.shape()),
                    })
                }
                None => {
                    return Err(VqError::Checkpoint {
                        path: path.to_path_buf(),
                        msg: format!("missing parameter `{name}`"),
                    })
                }
            }
        }
        if params.len() != fresh.params.len() {
            return Err(VqError::Checkpoint {
                path: path.to_path_buf(),
                msg: "unexpected extra parameters".into(),
            });
        }
        Ok((
            VqModel {
                config: meta.config.clone(),
                params,
            },
            meta,
        ))
    }
}

pub const CHECKPOINT_KIND: &str = "atvc-vq";

/// Sidecar metadata stored next to a checkpoint as `<checkpoint>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub config: VqConfig,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub steps: u64,
    pub epochs: usize,
}

impl CheckpointMeta {
    pub fn new(config: &VqConfig, steps: u64, epochs: usize) -> Self {
        CheckpointMeta {
            kind: CHECKPOINT_KIND.into(),
            config: config.clone(),
            config_hash: config.hash(),
            seed: config.seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            steps,
            epochs,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// RGB image to a `[3,H,W]` tensor in `[0,1]`.
pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = p.0[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(data, &[3, h, w]).expect("length matches shape")
}

/// `[3,H,W]` tensor to an RGB image, clamping to `[0,1]` and rounding.
pub fn tensor_to_image(t: &Tensor) -> RgbImage {
    let s = t.shape();
    assert!(
        s.len() == 3 && s[0] == 3,
        "tensor_to_image: expected [3,H,W], got {s:?}"
    );
    let (h, w) = (s[1], s[2]);
    let d = t.data();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| {
            let v = d[(c * h + y as usize) * w + x as usize];
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// Stack equally shaped tensors along a new leading axis.
pub fn stack(items: &[Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| VqError::Latents("cannot stack an empty batch".into()))?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(items.len() * first.numel());
    for t in items {
        if t.shape() != first.shape() {
            return Err(VqError::ImageShape {
                got: t.shape().to_vec(),
                want: first.shape().last().copied().unwrap_or(0),
            });
        }
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::from_vec(data, &shape)?)
}

/// Split along the leading axis.
pub fn unstack(t: &Tensor) -> Result<Vec<Tensor>> {
    let s = t.shape();
    let inner: Vec<usize> = s[1..].to_vec();
    let n: usize = inner.iter().product();
    t.data()
        .chunks_exact(n.max(1))
        .take(s[0])
        .map(|c| Ok(Tensor::from_vec(c.to_vec(), &inner)?))
        .collect()
}
