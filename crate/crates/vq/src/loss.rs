use atvc_tensor::{Graph, Var};

use crate::error::Result;

/// Stage-1 objective and its parts, all scalar graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct VqLoss {
    pub total: Var,
    /// Mean over cells of `‖sg[e] − q‖²`; moves only the codebook.
    pub codebook: Var,
    /// Mean over cells of `‖e − sg[q]‖²`; moves only the encoder.
    pub commit: Var,
    /// Per-element mean squared reconstruction error.
    pub rec: Var,
}

/// Mean over rows of the squared row distance between two `N×D` nodes.
fn mean_row_sq(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let rows = g.shape(a).first().copied().unwrap_or(1).max(1);
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / rows as f32))
}

/// `L_codebook + β·L_commit + L_rec` for encoder cells `features`, their
/// selected codebook rows `quantized`, and the reconstruction of `target`.
pub fn vq_loss(g: &mut Graph, target: Var, features: Var, quantized: Var, recon: Var, beta: f32) -> Result<VqLoss> {
    let e_sg = g.detach(features);
    let codebook = mean_row_sq(g, e_sg, quantized)?;
    let q_sg = g.detach(quantized);
    let commit = mean_row_sq(g, features, q_sg)?;
    let rec = g.mse(recon, target)?;
    let bc = g.scale(commit, beta);
    let t = g.add(codebook, bc)?;
    let total = g.add(t, rec)?;
    Ok(VqLoss {
        total,
        codebook,
        commit,
        rec,
    })
}

/// Discriminator loss (real → 1, fake → 0) and non-saturating generator loss,
/// each a mean binary cross-entropy over patches.
pub fn gan_losses(g: &mut Graph, real_logits: Var, fake_logits: Var) -> (Var, Var) {
    let real = g.bce_with_logits(real_logits, 1.0);
    let fake = g.bce_with_logits(fake_logits, 0.0);
    let disc = g.add(real, fake).expect("scalar losses");
    let gen = g.bce_with_logits(fake_logits, 1.0);
    (disc, gen)
}

/// Mean L1 distance between matching discriminator activations.
pub fn feature_matching(g: &mut Graph, real: &[Var], fake: &[Var]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (&r, &f) in real.iter().zip(fake) {
        let r = g.detach(r);
        let d = g.sub(f, r)?;
        let a = g.abs(d);
        let m = g.mean(a);
        acc = Some(match acc {
            Some(s) => g.add(s, m)?,
            None => m,
        });
    }
    let n = real.len().max(1) as f32;
    let s = acc.unwrap_or_else(|| g.constant(atvc_tensor::Tensor::scalar(0.0)));
    Ok(g.scale(s, 1.0 / n))
}
