use atvc_tensor::Tensor;

use crate::config::{MaskMode, TransformerConfig};
use crate::layout::Layout;

/// Image-to-image restriction used by one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Causal,
    Row,
    Column,
    Conv,
}

/// Layer pattern for sparse attention, cycled over depth.
pub const SPARSE_CYCLE: [MaskKind; 4] = [MaskKind::Row, MaskKind::Column, MaskKind::Row, MaskKind::Conv];

/// Per-layer boolean attention masks (`allowed[i * len + j]`: query i may read key j).
#[derive(Clone, Debug, PartialEq)]
pub struct MaskStack {
    pub len: usize,
    pub kinds: Vec<MaskKind>,
    pub allowed: Vec<Vec<bool>>,
}

/// Whether query `i` may attend to key `j` under `kind`.
///
/// Everything is causal. Text queries see their whole prefix. Image queries
/// see all text and all earlier segments; inside their own segment they see
/// only the row, column or k×k neighbourhood the layer allows.
pub fn allowed(lay: &Layout, kind: MaskKind, conv_kernel: usize, i: usize, j: usize) -> bool {
    if j > i {
        return false;
    }
    if j == i {
        return true;
    }
    let (si, sj) = (lay.segment(i), lay.segment(j));
    if !si.is_image() || si != sj {
        return true;
    }
    let (ri, ci) = lay.cell(i).expect("image position");
    let (rj, cj) = lay.cell(j).expect("image position");
    let half = conv_kernel / 2;
    match kind {
        MaskKind::Causal => true,
        MaskKind::Row => ri == rj,
        MaskKind::Column => ci == cj,
        MaskKind::Conv => ri.abs_diff(rj) <= half && ci.abs_diff(cj) <= half,
    }
}

impl MaskStack {
    pub fn new(cfg: &TransformerConfig) -> Self {
        let lay = Layout::new(cfg);
        let len = lay.len();
        let kinds: Vec<MaskKind> = (0..cfg.layers)
            .map(|l| match cfg.mask {
                MaskMode::Sparse => SPARSE_CYCLE[l % SPARSE_CYCLE.len()],
                MaskMode::DenseCausal => MaskKind::Causal,
            })
            .collect();
        let allowed = kinds
            .iter()
            .map(|&k| {
                let mut m = vec![false; len * len];
                for i in 0..len {
                    for j in 0..=i {
                        m[i * len + j] = allowed(&lay, k, cfg.conv_kernel, i, j);
                    }
                }
                m
            })
            .collect();
        MaskStack { len, kinds, allowed }
    }

    pub fn get(&self, layer: usize, i: usize, j: usize) -> bool {
        self.allowed[layer][i * self.len + j]
    }

    /// Additive `[len, len]` bias: 0 where allowed, −∞ elsewhere.
    pub fn bias(&self, layer: usize) -> Tensor {
        let data = self.allowed[layer]
            .iter()
            .map(|&a| if a { 0.0 } else { f32::NEG_INFINITY })
            .collect();
        Tensor::from_vec(data, &[self.len, self.len]).expect("square mask")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Segment;

    fn cfg() -> TransformerConfig {
        TransformerConfig {
            text_len: 3,
            answer_len: 2,
            grid: 3,
            ..TransformerConfig::default()
        }
    }

    #[test]
    fn masks_are_causal_with_diagonal() {
        let ms = MaskStack::new(&cfg());
        for l in 0..4 {
            for i in 0..ms.len {
                assert!(ms.get(l, i, i));
                for j in i + 1..ms.len {
                    assert!(!ms.get(l, i, j));
                }
            }
        }
        assert_eq!(ms.kinds, SPARSE_CYCLE.to_vec());
    }

    #[test]
    fn conv_neighbourhood_is_the_causal_3x3_window() {
        let c = cfg();
        let lay = Layout::new(&c);
        let m0 = lay.start(Segment::M);
        // M cell (1,1) is position m0+4.
        let support: Vec<(usize, usize)> = (m0..m0 + 9)
            .filter(|&j| allowed(&lay, MaskKind::Conv, 3, m0 + 4, j))
            .map(|j| lay.cell(j).unwrap())
            .collect();
        assert_eq!(support, vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]);
    }

    #[test]
    fn dense_mode_is_plain_causal() {
        let c = TransformerConfig {
            mask: MaskMode::DenseCausal,
            ..cfg()
        };
        let ms = MaskStack::new(&c);
        for i in 0..ms.len {
            for j in 0..=i {
                assert!(ms.get(2, i, j));
            }
        }
    }

    #[test]
    fn bias_marks_forbidden_entries() {
        let ms = MaskStack::new(&cfg());
        let b = ms.bias(0);
        assert_eq!(b.data()[1], f32::NEG_INFINITY);
        assert_eq!(b.data()[0], 0.0);
    }
}
