//! Codebook lookup against brute force and stop-gradient isolation of the loss terms.

use atvc_tensor::{rng_from_seed, Adam, AdamConfig, Graph, Tensor};
use atvc_vq::{quantize, Variant, VqConfig, VqModel, CODEBOOK};
use rand::Rng;

/// Exhaustive nearest neighbour in f64; ties and near-ties are reported as a set.
pub fn oracle(f: &[f32], cb: &[f32], dim: usize) -> (usize, Vec<usize>) {
    let d: Vec<f64> = cb
        .chunks(dim)
        .map(|c| f.iter().zip(c).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum())
        .collect();
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let best = d.iter().position(|&x| x == min).unwrap();
    let near: Vec<usize> = (0..d.len()).filter(|&k| d[k] - min <= 1e-5 * (1.0 + min)).collect();
    (best, near)
}

pub fn quantize_matches_brute_force_on_1000_cases() {
    let mut rng = rng_from_seed(11);
    let mut disagreements = 0;
    for case in 0..1000 {
        let dim = rng.random_range(1..9);
        let k = rng.random_range(1..40);
        let n = rng.random_range(1..20);
        let cb = Tensor::uniform(&[k, dim], -1.0, 1.0, &mut rng);
        let f = Tensor::uniform(&[n, dim], -1.2, 1.2, &mut rng);
        let (idx, q) = quantize(&f, &cb).unwrap();
        assert_eq!(q.shape(), &[n, dim]);
        for (i, &got) in idx.iter().enumerate() {
            assert!(got < k);
            let row = &f.data()[i * dim..(i + 1) * dim];
            let (best, near) = oracle(row, cb.data(), dim);
            assert!(near.contains(&got), "case {case} row {i}: got {got}, oracle {best}");
            if got != best {
                disagreements += 1;
            }
            assert_eq!(
                &q.data()[i * dim..(i + 1) * dim],
                &cb.data()[got * dim..(got + 1) * dim]
            );
        }
    }
    assert_eq!(disagreements, 0);
}

pub fn small_config(variant: Variant) -> VqConfig {
    VqConfig {
        variant,
        image_size: 16,
        codebook_size: 16,
        dim: 8,
        downsample: 4,
        channels: vec![8, 8],
        res_blocks: 1,
        batch_size: 4,
        seed: 5,
        ..VqConfig::default()
    }
}

pub fn random_images(n: usize, size: usize, seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::uniform(&[n, 3, size, size], 0.0, 1.0, &mut rng)
}

/// Apply one Adam step driven by the chosen loss part and report which parameters moved.
pub fn moved_after(part: &str) -> Vec<(String, bool)> {
    let mut model = VqModel::new(small_config(Variant::Vqvae)).unwrap();
    // Pull the codebook onto the feature scale so every term is non-trivial.
    let imgs = random_images(2, 16, 9);
    let mut g = Graph::new();
    let x = g.constant(imgs.clone());
    let f = model.encode_features(&mut g, x, false).unwrap();
    let cells = model.to_cells(&mut g, f).unwrap();
    let feats = g.value(cells).data().to_vec();
    model
        .params
        .get_mut(CODEBOOK)
        .unwrap()
        .data_mut()
        .copy_from_slice(&feats[..16 * 8]);
    model
        .params
        .get_mut(CODEBOOK)
        .unwrap()
        .data_mut()
        .iter_mut()
        .for_each(|v| *v += 0.05);

    let before = model.params.clone();
    let mut g = Graph::new();
    let fwd = model.forward(&mut g, &imgs, true).unwrap();
    let loss = match part {
        "codebook" => fwd.loss.codebook,
        "commit" => fwd.loss.commit,
        _ => unreachable!(),
    };
    assert!(g.value(loss).item() > 0.0);
    let grads = g.backward(loss).unwrap().into_param_grads();
    let mut opt = Adam::new(AdamConfig::default()).unwrap();
    opt.step(&mut model.params, &grads).unwrap();
    before
        .iter()
        .map(|(n, t)| (n.to_string(), model.params.get(n).unwrap().data() != t.data()))
        .collect()
}

pub fn codebook_term_moves_only_the_codebook() {
    for (name, moved) in moved_after("codebook") {
        assert_eq!(moved, name == CODEBOOK, "{name}");
    }
}

pub fn commit_term_leaves_codebook_and_decoder_bit_unchanged() {
    let moved = moved_after("commit");
    for (name, m) in &moved {
        if name == CODEBOOK || name.starts_with("dec.") {
            assert!(!m, "{name} moved");
        }
    }
    assert!(moved.iter().any(|(n, m)| n.starts_with("enc.") && *m));
}

pub fn straight_through_passes_reconstruction_gradient_unchanged() {
    let model = VqModel::new(small_config(Variant::Vqvae)).unwrap();
    let imgs = random_images(2, 16, 4);
    let mut g = Graph::new();
    let fwd = model.forward(&mut g, &imgs, true).unwrap();
    let grads = g.backward(fwd.loss.rec).unwrap();
    let a = grads.get(fwd.features).unwrap();
    let b = grads.get(fwd.latent).unwrap();
    assert_eq!(a.data(), b.data());
    assert!(a.data().iter().any(|&v| v != 0.0));
    // The codebook receives no reconstruction gradient through the straight-through path.
    assert!(grads.param(CODEBOOK).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)));
}
