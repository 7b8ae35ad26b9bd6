//! Forward operations recorded on a [`Graph`] and their vector-Jacobian products.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::kernels::{col2im, gemm, im2col, ConvGeom};
use crate::tensor::Tensor;

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `b`'s shape is a suffix of `a`'s; `b` is repeated over the leading dims.
    AddSuffix(Var, Var),
    /// `[B, C, ...] + [C]`.
    AddChannel(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f32),
    Abs(Var),
    Sigmoid(Var),
    MatMul(Var, Var),
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    StraightThrough {
        x: Var,
    },
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f32>,
        probs: Vec<f32>,
        norm: f32,
    },
    BceWithLogits {
        logits: Var,
        target: f32,
    },
}

fn same_shape(g: &Graph, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(TensorError::mismatch(op, g.shape(a), g.shape(b)));
    }
    Ok(())
}

fn zip_map(g: &Graph, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
    g.value(a)
        .data()
        .iter()
        .zip(g.value(b).data())
        .map(|(&x, &y)| f(x, y))
        .collect()
}

fn map(g: &Graph, a: Var, f: impl Fn(f32) -> f32) -> Vec<f32> {
    g.value(a).data().iter().map(|&x| f(x)).collect()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// `out[perm-index] = x[index]` for a row-major permutation of axes.
fn permute_data(data: &[f32], shape: &[usize], perm: &[usize]) -> (Vec<f32>, Vec<usize>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

impl Graph {
    fn unary(&mut self, x: Var, data: Vec<f32>, op: Op) -> Var {
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        self.push(Tensor::raw(shape, data), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let data = zip_map(self, a, b, |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::raw(shape, data), Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let data = zip_map(self, a, b, |x, y| x - y);
        let rg = self.any_grad(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::raw(shape, data), Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let data = zip_map(self, a, b, |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::raw(shape, data), Op::Mul(a, b), rg))
    }

    /// Add `b` to every trailing block of `a` (bias over the last dims, masks over batches).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(TensorError::mismatch("add_broadcast", sa, sb));
        }
        let bd = self.value(b).data();
        let n = bd.len();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % n])
            .collect();
        let rg = self.any_grad(&[a, b]);
        let shape = sa.to_vec();
        Ok(self.push(Tensor::raw(shape, data), Op::AddSuffix(a, b), rg))
    }

    /// Per-channel bias for `[B, C, ...]` activations.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() < 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(TensorError::mismatch("add_channel_bias", sx, sb));
        }
        let c = sx[1];
        let inner: usize = sx[2..].iter().product();
        let bd = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[(i / inner) % c])
            .collect();
        let rg = self.any_grad(&[x, bias]);
        let shape = sx.to_vec();
        Ok(self.push(Tensor::raw(shape, data), Op::AddChannel(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let data = map(self, x, |v| v * s);
        self.unary(x, data, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f32) -> Var {
        let data = map(self, x, |v| v + s);
        self.unary(x, data, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = map(self, x, |v| v.max(0.0));
        self.unary(x, data, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let data = map(self, x, |v| if v > 0.0 { v } else { slope * v });
        self.unary(x, data, Op::LeakyRelu(x, slope))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let data = map(self, x, f32::abs);
        self.unary(x, data, Op::Abs(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = map(self, x, sigmoid);
        self.unary(x, data, Op::Sigmoid(x))
    }

    /// `[..., m, k] × [k, n] → [..., m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(TensorError::mismatch("matmul", &sa, &sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m: usize = sa[..sa.len() - 1].iter().product();
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::raw(shape, out), Op::MatMul(a, b), rg))
    }

    /// Batched product: `[B, m, k] × [B, k, n]`, or `× [B, n, k]ᵀ` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || TensorError::mismatch("bmm", &sa, &sb);
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(bad());
        }
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &ad[i * m * k..(i + 1) * m * k],
                false,
                &bd[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::raw(vec![batch, m, n], out), Op::Bmm { a, b, trans_b }, rg))
    }

    /// Softmax over the last dimension. `-inf` entries get exactly zero weight.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape
            .last()
            .ok_or_else(|| TensorError::invalid("softmax", "needs rank >= 1"))?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_row(row);
        }
        Ok(self.unary(x, out, Op::Softmax(x)))
    }

    /// Layer normalization over the last dimension with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape
            .last()
            .ok_or_else(|| TensorError::invalid("layer_norm", "needs rank >= 1"))?;
        for p in [gamma, beta] {
            if self.shape(p) != [n] {
                return Err(TensorError::mismatch("layer_norm", &shape, self.shape(p)));
            }
        }
        let xd = self.value(x).data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xd.len() / n;
        let mut xhat = vec![0.0; xd.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * n..(r + 1) * n];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps as f64).sqrt();
            rstd[r] = rs as f32;
            for j in 0..n {
                let h = ((row[j] as f64 - mean) * rs) as f32;
                xhat[r * n + j] = h;
                out[r * n + j] = h * gd[j] + bd[j];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::raw(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Row lookup: `table [V, d]`, `ids` of length `n` → `[n, d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::invalid("embedding", "table must be rank 2"));
        }
        let (vocab, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(TensorError::invalid(
                "embedding",
                format!("id {bad} out of range for table of {vocab} rows"),
            ));
        }
        if ids.is_empty() {
            return Err(TensorError::invalid("embedding", "no ids"));
        }
        let td = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let rg = self.requires_grad(table);
        Ok(self.push(
            Tensor::raw(vec![ids.len(), d], out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() || shape.contains(&0) {
            return Err(TensorError::mismatch("reshape", self.shape(x), shape));
        }
        let data = self.value(x).data().to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::raw(shape.to_vec(), data), Op::Reshape(x), rg))
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(TensorError::invalid(
                "permute",
                format!("{perm:?} is not a permutation of {} axes", shape.len()),
            ));
        }
        let (data, out_shape) = permute_data(self.value(x).data(), &shape, perm);
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::raw(out_shape, data), Op::Permute { x, perm: perm.to_vec() }, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(
                *xs.first()
                    .ok_or_else(|| TensorError::invalid("concat", "needs at least one input"))?,
            )
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::invalid("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len() || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(TensorError::mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.any_grad(xs);
        Ok(self.push(Tensor::raw(shape, out), Op::Concat { xs: xs.to_vec(), axis }, rg))
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(TensorError::invalid(
                "slice",
                format!("range {start}..{end} on axis {axis} of {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner;
            out.extend_from_slice(&xd[base + start * inner..base + end * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = end - start;
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::raw(oshape, out), Op::Slice { x, axis, start }, rg))
    }

    /// 2D convolution, `x [B, Cin, H, W]`, `w [Cout, Cin, kh, kw]`, no bias.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(TensorError::mismatch("conv2d", &sx, &sw));
        }
        let geom = ConvGeom::new(sx[1], sx[2], sx[3], sw[2], sw[3], stride, pad)
            .ok_or_else(|| TensorError::mismatch("conv2d", &sx, &sw))?;
        let (batch, cout) = (sx[0], sw[0]);
        let plane = sx[1] * sx[2] * sx[3];
        let ncols = geom.col_cols();
        let mut cols = vec![0.0; geom.col_rows() * ncols];
        let mut out = vec![0.0; batch * cout * ncols];
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        for b in 0..batch {
            im2col(&xd[b * plane..(b + 1) * plane], &geom, &mut cols);
            gemm(
                cout,
                geom.col_rows(),
                ncols,
                wd,
                false,
                &cols,
                false,
                &mut out[b * cout * ncols..(b + 1) * cout * ncols],
                false,
            );
        }
        let rg = self.any_grad(&[x, w]);
        Ok(self.push(
            Tensor::raw(vec![batch, cout, geom.out_h, geom.out_w], out),
            Op::Conv2d { x, w, stride, pad },
            rg,
        ))
    }

    /// Transposed 2D convolution, `x [B, Cin, H, W]`, `w [Cin, Cout, kh, kw]`.
    /// Output side is `(H - 1)·stride - 2·pad + kh`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[0] || stride == 0 {
            return Err(TensorError::mismatch("conv_transpose2d", &sx, &sw));
        }
        let (batch, cin, h, wdt) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, kh, kw) = (sw[1], sw[2], sw[3]);
        let oh = ((h - 1) * stride + kh).checked_sub(2 * pad).filter(|&v| v > 0);
        let ow = ((wdt - 1) * stride + kw).checked_sub(2 * pad).filter(|&v| v > 0);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(TensorError::mismatch("conv_transpose2d", &sx, &sw));
        };
        let geom = ConvGeom::new(cout, oh, ow, kh, kw, stride, pad)
            .filter(|g| g.out_h == h && g.out_w == wdt)
            .ok_or_else(|| TensorError::mismatch("conv_transpose2d", &sx, &sw))?;
        let hw = h * wdt;
        let ckk = geom.col_rows();
        let mut cols = vec![0.0; ckk * hw];
        let out_plane = cout * oh * ow;
        let mut out = vec![0.0; batch * out_plane];
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        for b in 0..batch {
            gemm(
                ckk,
                cin,
                hw,
                wd,
                true,
                &xd[b * cin * hw..(b + 1) * cin * hw],
                false,
                &mut cols,
                false,
            );
            col2im(&cols, &geom, &mut out[b * out_plane..(b + 1) * out_plane]);
        }
        let rg = self.any_grad(&[x, w]);
        Ok(self.push(
            Tensor::raw(vec![batch, cout, oh, ow], out),
            Op::ConvTranspose2d { x, w, stride, pad },
            rg,
        ))
    }

    /// Forward value of `quantized`, gradient passed unchanged to `x`.
    pub fn straight_through(&mut self, x: Var, quantized: Var) -> Result<Var> {
        same_shape(self, "straight_through", x, quantized)?;
        let value = self.value(quantized).clone().with_requires_grad(false);
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::StraightThrough { x }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|&v| v as f64).sum::<f64>() as f32;
        let rg = self.requires_grad(x);
        self.push(Tensor::raw(vec![], vec![s]), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().map(|&v| v as f64).sum::<f64>() / t.numel() as f64;
        let rg = self.requires_grad(x);
        self.push(Tensor::raw(vec![], vec![s as f32]), Op::Mean(x), rg)
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mse", a, b)?;
        let n = self.value(a).numel() as f64;
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            / n;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::raw(vec![], vec![s as f32]), Op::Mse(a, b), rg))
    }

    /// Weighted next-token cross-entropy: `-Σ wᵢ log softmax(logitsᵢ)[tᵢ] / Σ wᵢ`
    /// over rows of `logits [N, V]`. All-zero weights give a zero loss.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f32]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || targets.len() != shape[0] || weights.len() != shape[0] {
            return Err(TensorError::mismatch(
                "cross_entropy",
                &shape,
                &[targets.len(), weights.len()],
            ));
        }
        let v = shape[1];
        if let Some(&t) = targets.iter().find(|&&t| t >= v) {
            return Err(TensorError::invalid(
                "cross_entropy",
                format!("target {t} out of range for {v} classes"),
            ));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = 0.0f64;
        let norm: f64 = weights.iter().map(|&w| w as f64).sum();
        for (r, row) in probs.chunks_mut(v).enumerate() {
            let lse = log_sum_exp(row);
            let lp = row[targets[r]] as f64 - lse;
            if weights[r] != 0.0 {
                total -= weights[r] as f64 * lp;
            }
            for p in row.iter_mut() {
                *p = ((*p as f64) - lse).exp() as f32;
            }
        }
        let loss = if norm > 0.0 { total / norm } else { 0.0 };
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Tensor::raw(vec![], vec![loss as f32]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
                norm: norm as f32,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of `logits` against a constant label.
    pub fn bce_with_logits(&mut self, logits: Var, target: f32) -> Var {
        let t = self.value(logits);
        let n = t.numel() as f64;
        let s = t
            .data()
            .iter()
            .map(|&x| {
                let x = x as f64;
                x.max(0.0) - x * target as f64 + (-x.abs()).exp().ln_1p()
            })
            .sum::<f64>()
            / n;
        let rg = self.requires_grad(logits);
        self.push(
            Tensor::raw(vec![], vec![s as f32]),
            Op::BceWithLogits { logits, target },
            rg,
        )
    }
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(row: &[f32]) -> f64 {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln()
}

fn softmax_row(row: &mut [f32]) {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = if *v == f32::NEG_INFINITY { 0.0 } else { (*v - max).exp() };
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

fn acc(graph: &Graph, grads: &mut [Option<Vec<f32>>], v: Var, f: impl FnOnce(&mut [f32])) {
    if !graph.requires_grad(v) {
        return;
    }
    let n = graph.value(v).numel();
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
    f(slot);
}

fn acc_map(graph: &Graph, grads: &mut [Option<Vec<f32>>], v: Var, g: &[f32], f: impl Fn(usize, f32) -> f32) {
    acc(graph, grads, v, |dst| {
        for (i, (d, &gi)) in dst.iter_mut().zip(g).enumerate() {
            *d += f(i, gi);
        }
    });
}

pub(crate) fn backward_op(graph: &Graph, idx: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
    let node = &graph.nodes[idx];
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc_map(graph, grads, *a, g, |_, gi| gi);
            acc_map(graph, grads, *b, g, |_, gi| gi);
        }
        Op::Sub(a, b) => {
            acc_map(graph, grads, *a, g, |_, gi| gi);
            acc_map(graph, grads, *b, g, |_, gi| -gi);
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (graph.value(*a).data(), graph.value(*b).data());
            acc_map(graph, grads, *a, g, |i, gi| gi * bd[i]);
            acc_map(graph, grads, *b, g, |i, gi| gi * ad[i]);
        }
        Op::AddSuffix(a, b) => {
            acc_map(graph, grads, *a, g, |_, gi| gi);
            let n = graph.value(*b).numel();
            acc(graph, grads, *b, |dst| {
                for (i, &gi) in g.iter().enumerate() {
                    dst[i % n] += gi;
                }
            });
        }
        Op::AddChannel(x, bias) => {
            acc_map(graph, grads, *x, g, |_, gi| gi);
            let shape = graph.shape(*x);
            let c = shape[1];
            let inner: usize = shape[2..].iter().product();
            acc(graph, grads, *bias, |dst| {
                for (i, &gi) in g.iter().enumerate() {
                    dst[(i / inner) % c] += gi;
                }
            });
        }
        Op::Scale(x, s) => acc_map(graph, grads, *x, g, |_, gi| gi * s),
        Op::AddScalar(x) => acc_map(graph, grads, *x, g, |_, gi| gi),
        Op::Relu(x) => {
            let xd = graph.value(*x).data();
            acc_map(graph, grads, *x, g, |i, gi| if xd[i] > 0.0 { gi } else { 0.0 });
        }
        Op::LeakyRelu(x, slope) => {
            let xd = graph.value(*x).data();
            acc_map(graph, grads, *x, g, |i, gi| if xd[i] > 0.0 { gi } else { gi * slope });
        }
        Op::Abs(x) => {
            let xd = graph.value(*x).data();
            acc_map(graph, grads, *x, g, |i, gi| {
                if xd[i] > 0.0 {
                    gi
                } else if xd[i] < 0.0 {
                    -gi
                } else {
                    0.0
                }
            });
        }
        Op::Sigmoid(x) => acc_map(graph, grads, *x, g, |i, gi| gi * out[i] * (1.0 - out[i])),
        Op::MatMul(a, b) => {
            let sb = graph.shape(*b);
            let (k, n) = (sb[0], sb[1]);
            let m = g.len() / n;
            let (ad, bd) = (graph.value(*a).data(), graph.value(*b).data());
            acc(graph, grads, *a, |dst| gemm(m, n, k, g, false, bd, true, dst, true));
            acc(graph, grads, *b, |dst| gemm(k, m, n, ad, true, g, false, dst, true));
        }
        Op::Bmm { a, b, trans_b } => {
            let sa = graph.shape(*a);
            let (batch, m, k) = (sa[0], sa[1], sa[2]);
            let n = g.len() / (batch * m);
            let (ad, bd) = (graph.value(*a).data(), graph.value(*b).data());
            acc(graph, grads, *a, |dst| {
                for i in 0..batch {
                    gemm(
                        m,
                        n,
                        k,
                        &g[i * m * n..(i + 1) * m * n],
                        false,
                        &bd[i * k * n..(i + 1) * k * n],
                        !trans_b,
                        &mut dst[i * m * k..(i + 1) * m * k],
                        true,
                    );
                }
            });
            acc(graph, grads, *b, |dst| {
                for i in 0..batch {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let ai = &ad[i * m * k..(i + 1) * m * k];
                    let di = &mut dst[i * k * n..(i + 1) * k * n];
                    if *trans_b {
                        gemm(n, m, k, gi, true, ai, false, di, true);
                    } else {
                        gemm(k, m, n, ai, true, gi, false, di, true);
                    }
                }
            });
        }
        Op::Softmax(x) => {
            let n = *node.value.shape().last().unwrap();
            acc(graph, grads, *x, |dst| {
                for ((d, y), gr) in dst.chunks_mut(n).zip(out.chunks(n)).zip(g.chunks(n)) {
                    let dot: f32 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        d[j] += y[j] * (gr[j] - dot);
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let gd = graph.value(*gamma).data();
            let n = gd.len();
            acc(graph, grads, *x, |dst| {
                for r in 0..rstd.len() {
                    let gr = &g[r * n..(r + 1) * n];
                    let h = &xhat[r * n..(r + 1) * n];
                    let mut mean_d = 0.0f32;
                    let mut mean_dh = 0.0f32;
                    for j in 0..n {
                        let d = gr[j] * gd[j];
                        mean_d += d;
                        mean_dh += d * h[j];
                    }
                    mean_d /= n as f32;
                    mean_dh /= n as f32;
                    for j in 0..n {
                        let d = gr[j] * gd[j];
                        dst[r * n + j] += rstd[r] * (d - mean_d - h[j] * mean_dh);
                    }
                }
            });
            acc(graph, grads, *gamma, |dst| {
                for (i, &gi) in g.iter().enumerate() {
                    dst[i % n] += gi * xhat[i];
                }
            });
            acc(graph, grads, *beta, |dst| {
                for (i, &gi) in g.iter().enumerate() {
                    dst[i % n] += gi;
                }
            });
        }
        Op::Embedding { table, ids } => {
            let d = graph.shape(*table)[1];
            acc(graph, grads, *table, |dst| {
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dst[id * d + j] += g[r * d + j];
                    }
                }
            });
        }
        Op::Reshape(x) => acc_map(graph, grads, *x, g, |_, gi| gi),
        Op::Permute { x, perm } => {
            let mut inverse = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            let (back, _) = permute_data(g, node.value.shape(), &inverse);
            acc_map(graph, grads, *x, &back, |_, gi| gi);
        }
        Op::Concat { xs, axis } => {
            let shape = node.value.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis] * inner;
            let mut offset = 0;
            for &v in xs {
                let len = graph.shape(v)[*axis] * inner;
                acc(graph, grads, v, |dst| {
                    for o in 0..outer {
                        let src = &g[o * total + offset..o * total + offset + len];
                        for (d, s) in dst[o * len..(o + 1) * len].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                });
                offset += len;
            }
        }
        Op::Slice { x, axis, start } => {
            let in_shape = graph.shape(*x);
            let outer: usize = in_shape[..*axis].iter().product();
            let inner: usize = in_shape[axis + 1..].iter().product();
            let in_block = in_shape[*axis] * inner;
            let len = node.value.shape()[*axis] * inner;
            acc(graph, grads, *x, |dst| {
                for o in 0..outer {
                    let base = o * in_block + start * inner;
                    for (d, s) in dst[base..base + len].iter_mut().zip(&g[o * len..(o + 1) * len]) {
                        *d += s;
                    }
                }
            });
        }
        Op::Conv2d { x, w, stride, pad } => {
            let (sx, sw) = (graph.shape(*x), graph.shape(*w));
            let geom = ConvGeom::new(sx[1], sx[2], sx[3], sw[2], sw[3], *stride, *pad).unwrap();
            let (batch, cout) = (sx[0], sw[0]);
            let plane = sx[1] * sx[2] * sx[3];
            let (rows, ncols) = (geom.col_rows(), geom.col_cols());
            let (xd, wd) = (graph.value(*x).data(), graph.value(*w).data());
            let mut cols = vec![0.0; rows * ncols];
            if graph.requires_grad(*w) {
                acc(graph, grads, *w, |dst| {
                    for b in 0..batch {
                        im2col(&xd[b * plane..(b + 1) * plane], &geom, &mut cols);
                        let gb = &g[b * cout * ncols..(b + 1) * cout * ncols];
                        gemm(cout, ncols, rows, gb, false, &cols, true, dst, true);
                    }
                });
            }
            acc(graph, grads, *x, |dst| {
                for b in 0..batch {
                    let gb = &g[b * cout * ncols..(b + 1) * cout * ncols];
                    gemm(rows, cout, ncols, wd, true, gb, false, &mut cols, false);
                    col2im(&cols, &geom, &mut dst[b * plane..(b + 1) * plane]);
                }
            });
        }
        Op::ConvTranspose2d { x, w, stride, pad } => {
            let (sx, sw) = (graph.shape(*x), graph.shape(*w));
            let (batch, cin, hw) = (sx[0], sx[1], sx[2] * sx[3]);
            let os = node.value.shape();
            let geom = ConvGeom::new(sw[1], os[2], os[3], sw[2], sw[3], *stride, *pad).unwrap();
            let ckk = geom.col_rows();
            let out_plane = os[1] * os[2] * os[3];
            let (xd, wd) = (graph.value(*x).data(), graph.value(*w).data());
            let mut cols = vec![0.0; ckk * hw];
            let need_x = graph.requires_grad(*x);
            let need_w = graph.requires_grad(*w);
            let mut dx = need_x.then(|| vec![0.0; xd.len()]);
            let mut dw = need_w.then(|| vec![0.0; wd.len()]);
            for b in 0..batch {
                im2col(&g[b * out_plane..(b + 1) * out_plane], &geom, &mut cols);
                if let Some(dx) = dx.as_mut() {
                    gemm(
                        cin,
                        ckk,
                        hw,
                        wd,
                        false,
                        &cols,
                        false,
                        &mut dx[b * cin * hw..(b + 1) * cin * hw],
                        false,
                    );
                }
                if let Some(dw) = dw.as_mut() {
                    let xb = &xd[b * cin * hw..(b + 1) * cin * hw];
                    gemm(cin, hw, ckk, xb, false, &cols, true, dw, true);
                }
            }
            if let Some(dx) = dx {
                acc_map(graph, grads, *x, &dx, |_, gi| gi);
            }
            if let Some(dw) = dw {
                acc_map(graph, grads, *w, &dw, |_, gi| gi);
            }
        }
        Op::StraightThrough { x } => acc_map(graph, grads, *x, g, |_, gi| gi),
        Op::Sum(x) => {
            let s = g[0];
            acc(graph, grads, *x, |dst| dst.iter_mut().for_each(|d| *d += s));
        }
        Op::Mean(x) => {
            let s = g[0] / graph.value(*x).numel() as f32;
            acc(graph, grads, *x, |dst| dst.iter_mut().for_each(|d| *d += s));
        }
        Op::Mse(a, b) => {
            let (ad, bd) = (graph.value(*a).data(), graph.value(*b).data());
            let s = 2.0 * g[0] / ad.len() as f32;
            acc_map(graph, grads, *a, ad, |i, _| s * (ad[i] - bd[i]));
            acc_map(graph, grads, *b, bd, |i, _| -s * (ad[i] - bd[i]));
        }
        Op::CrossEntropy {
            logits,
            targets,
            weights,
            probs,
            norm,
        } => {
            if *norm <= 0.0 {
                return;
            }
            let v = graph.shape(*logits)[1];
            let s = g[0] / norm;
            acc(graph, grads, *logits, |dst| {
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let row = &mut dst[r * v..(r + 1) * v];
                    let p = &probs[r * v..(r + 1) * v];
                    for j in 0..v {
                        row[j] += s * w * p[j];
                    }
                    row[t] -= s * w;
                }
            });
        }
        Op::BceWithLogits { logits, target } => {
            let xd = graph.value(*logits).data();
            let s = g[0] / xd.len() as f32;
            acc_map(graph, grads, *logits, xd, |i, _| s * (sigmoid(xd[i]) - target));
        }
    }
}
