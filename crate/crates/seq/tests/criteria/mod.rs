//! Causality of the attention masks and zero-weight handling of rejected re-creation targets.

use atvc_seq::{
    build_sequence, shifted_targets, Layout, MaskMode, Segment, TokenSequence, Transformer, TransformerConfig,
};
use atvc_tensor::{rng_from_seed, Graph};
use rand::Rng;

pub const TEXT_VOCAB: usize = 20;

pub fn small(mask: MaskMode) -> TransformerConfig {
    TransformerConfig {
        layers: 4,
        heads: 2,
        head_dim: 8,
        model_dim: 16,
        text_len: 6,
        answer_len: 5,
        grid: 3,
        text_vocab: TEXT_VOCAB,
        codebook_size: 12,
        mask,
        seed: 3,
        ..TransformerConfig::default()
    }
}

pub fn random_seq(cfg: &TransformerConfig, rng: &mut impl Rng, rejected: bool) -> TokenSequence {
    let n = cfg.image_tokens();
    let q: Vec<u32> = (0..cfg.text_len)
        .map(|_| rng.random_range(0..TEXT_VOCAB as u32))
        .collect();
    let a: Vec<u32> = (0..cfg.answer_len)
        .map(|_| rng.random_range(0..TEXT_VOCAB as u32))
        .collect();
    let v: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.codebook_size)).collect();
    let m: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.codebook_size)).collect();
    build_sequence(cfg, "q", &q, &v, (!rejected).then_some(&m[..]), &a, rejected).unwrap()
}

pub fn random_token(cfg: &TransformerConfig, seg: Segment, rng: &mut impl Rng) -> usize {
    if seg.is_image() {
        cfg.code_offset() + rng.random_range(0..cfg.codebook_size)
    } else {
        rng.random_range(0..cfg.text_vocab)
    }
}

pub fn logits(model: &Transformer, ids: &[usize]) -> Vec<f32> {
    let mut g = Graph::new();
    let l = model.forward(&mut g, &[ids], false).unwrap();
    g.value(l).data().to_vec()
}

pub fn later_edits_never_change_earlier_outputs() {
    let mut rng = rng_from_seed(17);
    for mask in [MaskMode::Sparse, MaskMode::DenseCausal] {
        let cfg = small(mask);
        let model = Transformer::new(cfg.clone()).unwrap();
        let lay = Layout::new(&cfg);
        let vocab = cfg.vocab_size();
        let cases = if mask == MaskMode::Sparse { 100 } else { 20 };
        for _ in 0..cases {
            let rejected = rng.random_bool(0.5);
            let s = random_seq(&cfg, &mut rng, rejected);
            let i = rng.random_range(0..lay.len() - 1);
            let mut edited = s.ids.clone();
            for (p, slot) in edited.iter_mut().enumerate().skip(i + 1) {
                *slot = random_token(&cfg, lay.segment(p), &mut rng);
            }
            let a = logits(&model, &s.ids);
            let b = logits(&model, &edited);
            assert_eq!(&a[..(i + 1) * vocab], &b[..(i + 1) * vocab], "position {i}");
            assert_ne!(&a[(i + 1) * vocab..], &b[(i + 1) * vocab..]);
        }
    }
}

pub fn rejected_m_targets_get_exactly_zero_gradient() {
    let cfg = small(MaskMode::Sparse);
    let model = Transformer::new(cfg.clone()).unwrap();
    let lay = Layout::new(&cfg);
    let mut rng = rng_from_seed(5);
    let s = random_seq(&cfg, &mut rng, true);
    let mut g = Graph::new();
    let (loss, logits) = model.loss(&mut g, &[&s], true).unwrap();
    let grads = g.backward(loss).unwrap();
    let gl = grads.get(logits).unwrap().data();
    let vocab = cfg.vocab_size();
    let m = lay.range(Segment::M);
    for row in 0..lay.len() {
        let rg = &gl[row * vocab..(row + 1) * vocab];
        let target_in_m = m.contains(&(row + 1));
        if target_in_m || row + 1 == lay.len() {
            assert!(rg.iter().all(|&x| x == 0.0), "row {row}");
        } else {
            assert!(rg.iter().any(|&x| x != 0.0), "row {row}");
        }
    }
    // Relabelling zero-weighted targets leaves the loss bit-identical.
    let (targets, weights) = shifted_targets(&[&s]);
    let mut relabelled = targets.clone();
    for row in m.start - 1..m.end - 1 {
        relabelled[row] = (relabelled[row] + 1) % vocab;
    }
    let mut g2 = Graph::new();
    let l2 = model.forward(&mut g2, &[&s.ids], false).unwrap();
    let a = g2.cross_entropy(l2, &targets, &weights).unwrap();
    let b = g2.cross_entropy(l2, &relabelled, &weights).unwrap();
    assert_eq!(g2.value(a).item().to_bits(), g2.value(b).item().to_bits());
    assert_eq!(g2.value(a).item().to_bits(), g.value(loss).item().to_bits());
}
