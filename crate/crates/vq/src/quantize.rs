use atvc_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VqError};

/// `size × size` codebook indices in row-major order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentGrid {
    pub size: usize,
    pub indices: Vec<usize>,
}

impl LatentGrid {
    pub fn new(size: usize, indices: Vec<usize>, codebook_size: usize) -> Result<Self> {
        if indices.len() != size * size {
            return Err(VqError::Latents(format!(
                "{} indices for a {size}x{size} grid",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= codebook_size) {
            return Err(VqError::Latents(format!(
                "index {bad} outside codebook of size {codebook_size}"
            )));
        }
        Ok(LatentGrid { size, indices })
    }

    pub fn at(&self, row: usize, col: usize) -> usize {
        self.indices[row * self.size + col]
    }
}

/// Index of the nearest row of `codebook` (`K×dim`, row-major) for each
/// `dim`-vector in `features`, by squared Euclidean distance. Ties go to the
/// lowest index.
pub fn nearest_codes(features: &[f32], codebook: &[f32], dim: usize) -> Vec<usize> {
    assert!(dim > 0, "nearest_codes: zero dim");
    assert_eq!(features.len() % dim, 0, "nearest_codes: ragged features");
    assert_eq!(codebook.len() % dim, 0, "nearest_codes: ragged codebook");
    assert!(!codebook.is_empty(), "nearest_codes: empty codebook");
    features
        .chunks_exact(dim)
        .map(|f| {
            let mut best = f32::INFINITY;
            let mut arg = 0;
            for (k, c) in codebook.chunks_exact(dim).enumerate() {
                let d: f32 = f.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best {
                    best = d;
                    arg = k;
                }
            }
            arg
        })
        .collect()
}

/// Quantize `N×D` features against a `K×D` codebook: indices and the selected rows.
pub fn quantize(features: &Tensor, codebook: &Tensor) -> Result<(Vec<usize>, Tensor)> {
    let (fs, cs) = (features.shape(), codebook.shape());
    if fs.len() != 2 || cs.len() != 2 || fs[1] != cs[1] || cs[0] == 0 {
        return Err(VqError::Latents(format!(
            "quantize needs N×D features and K×D codebook, got {fs:?} and {cs:?}"
        )));
    }
    if !features.is_finite() {
        return Err(VqError::Latents("non-finite features".into()));
    }
    let dim = fs[1];
    let idx = nearest_codes(features.data(), codebook.data(), dim);
    let mut rows = Vec::with_capacity(idx.len() * dim);
    for &i in &idx {
        rows.extend_from_slice(&codebook.data()[i * dim..(i + 1) * dim]);
    }
    Ok((idx, Tensor::from_vec(rows, fs)?))
}
