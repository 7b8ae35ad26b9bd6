//! Finite-difference checks for every differentiable op, 100 random cases each.

use atvc_tensor::gradcheck::{check, Tolerance};
use atvc_tensor::{rng_from_seed, Graph, Result, Rng, Tensor, Var};
use rand::Rng as _;

const CASES: u64 = 100;

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn rand_t(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Values bounded away from zero so kinked ops stay differentiable under perturbation.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_t(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    t
}

fn dim(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn run(op: &str, gen: impl Fn(&mut Rng) -> (Vec<Tensor>, Build)) {
    for case in 0..CASES {
        let mut rng = rng_from_seed(case * 7919 + op.len() as u64);
        let (inputs, build) = gen(&mut rng);
        let shapes: Vec<_> = inputs.iter().map(|t| t.shape().to_vec()).collect();
        let worst = check(&inputs, Tolerance::default(), case, build).unwrap();
        if let Some(m) = worst {
            panic!("{op} case {case} shapes {shapes:?}: {m:?}");
        }
    }
}

pub fn elementwise_binary() {
    run("add", |rng| {
        let s = [dim(rng, 1, 4), dim(rng, 1, 5)];
        (
            vec![rand_t(rng, &s), rand_t(rng, &s)],
            Box::new(|g, v| g.add(v[0], v[1])),
        )
    });
    run("sub", |rng| {
        let s = [dim(rng, 1, 4), dim(rng, 1, 5)];
        (
            vec![rand_t(rng, &s), rand_t(rng, &s)],
            Box::new(|g, v| g.sub(v[0], v[1])),
        )
    });
    run("mul", |rng| {
        let s = [dim(rng, 1, 4), dim(rng, 1, 5)];
        (
            vec![rand_t(rng, &s), rand_t(rng, &s)],
            Box::new(|g, v| g.mul(v[0], v[1])),
        )
    });
    run("mul_self", |rng| {
        let s = [dim(rng, 1, 6)];
        (vec![rand_t(rng, &s)], Box::new(|g, v| g.mul(v[0], v[0])))
    });
}

pub fn broadcasting_adds() {
    run("add_broadcast", |rng| {
        let (a, b, c) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 4));
        (
            vec![rand_t(rng, &[a, b, c]), rand_t(rng, &[b, c])],
            Box::new(|g, v| g.add_broadcast(v[0], v[1])),
        )
    });
    run("add_channel_bias", |rng| {
        let (b, c, h, w) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3));
        (
            vec![rand_t(rng, &[b, c, h, w]), rand_t(rng, &[c])],
            Box::new(|g, v| g.add_channel_bias(v[0], v[1])),
        )
    });
}

pub fn elementwise_unary() {
    run("scale", |rng| {
        let s: f32 = rng.random_range(-2.0..2.0);
        let n = dim(rng, 1, 8);
        (vec![rand_t(rng, &[n])], Box::new(move |g, v| Ok(g.scale(v[0], s))))
    });
    run("add_scalar", |rng| {
        let s: f32 = rng.random_range(-2.0..2.0);
        let n = dim(rng, 1, 8);
        (vec![rand_t(rng, &[n])], Box::new(move |g, v| Ok(g.add_scalar(v[0], s))))
    });
    run("relu", |rng| {
        let n = dim(rng, 1, 8);
        (vec![away_from_zero(rng, &[n])], Box::new(|g, v| Ok(g.relu(v[0]))))
    });
    run("leaky_relu", |rng| {
        let n = dim(rng, 1, 8);
        (
            vec![away_from_zero(rng, &[n])],
            Box::new(|g, v| Ok(g.leaky_relu(v[0], 0.2))),
        )
    });
    run("abs", |rng| {
        let n = dim(rng, 1, 8);
        (vec![away_from_zero(rng, &[n])], Box::new(|g, v| Ok(g.abs(v[0]))))
    });
    run("sigmoid", |rng| {
        let n = dim(rng, 1, 8);
        (vec![rand_t(rng, &[n])], Box::new(|g, v| Ok(g.sigmoid(v[0]))))
    });
}

pub fn matrix_products() {
    run("matmul", |rng| {
        let (b, m, k, n) = (dim(rng, 1, 2), dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
        (
            vec![rand_t(rng, &[b, m, k]), rand_t(rng, &[k, n])],
            Box::new(|g, v| g.matmul(v[0], v[1])),
        )
    });
    for trans_b in [false, true] {
        run(if trans_b { "bmm_t" } else { "bmm" }, move |rng| {
            let (b, m, k, n) = (dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
            let bs = if trans_b { [b, n, k] } else { [b, k, n] };
            (
                vec![rand_t(rng, &[b, m, k]), rand_t(rng, &bs)],
                Box::new(move |g, v| g.bmm(v[0], v[1], trans_b)),
            )
        });
    }
}

pub fn normalizers() {
    run("softmax", |rng| {
        let s = [dim(rng, 1, 3), dim(rng, 1, 6)];
        (vec![rand_t(rng, &s)], Box::new(|g, v| g.softmax(v[0])))
    });
    run("softmax_masked", |rng| {
        let (r, n) = (dim(rng, 1, 3), dim(rng, 2, 6));
        let mut mask = Tensor::zeros(&[r, n]);
        for i in 0..r {
            mask.data_mut()[i * n + n - 1] = f32::NEG_INFINITY;
        }
        (
            vec![rand_t(rng, &[r, n])],
            Box::new(move |g, v| {
                let m = g.constant(mask.clone());
                let x = g.add_broadcast(v[0], m)?;
                g.softmax(x)
            }),
        )
    });
    run("layer_norm", |rng| {
        let (r, n) = (dim(rng, 1, 3), dim(rng, 3, 6));
        (
            vec![rand_t(rng, &[r, n]), rand_t(rng, &[n]), rand_t(rng, &[n])],
            Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
        )
    });
}

pub fn indexing_and_layout() {
    run("embedding", |rng| {
        let (vocab, d, n) = (dim(rng, 1, 5), dim(rng, 1, 4), dim(rng, 1, 6));
        let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..vocab)).collect();
        (
            vec![rand_t(rng, &[vocab, d])],
            Box::new(move |g, v| g.embedding(v[0], &ids)),
        )
    });
    run("reshape", |rng| {
        let (a, b) = (dim(rng, 1, 4), dim(rng, 1, 4));
        (
            vec![rand_t(rng, &[a, b])],
            Box::new(move |g, v| g.reshape(v[0], &[b, a])),
        )
    });
    run("permute", |rng| {
        let s = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 2)];
        let mut perm = vec![0, 1, 2, 3];
        for i in (1..4).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        (vec![rand_t(rng, &s)], Box::new(move |g, v| g.permute(v[0], &perm)))
    });
    run("concat", |rng| {
        let axis = rng.random_range(0..3);
        let base = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)];
        let mut s2 = base;
        s2[axis] = dim(rng, 1, 3);
        (
            vec![rand_t(rng, &base), rand_t(rng, &s2), rand_t(rng, &base)],
            Box::new(move |g, v| g.concat(v, axis)),
        )
    });
    run("slice", |rng| {
        let s = [dim(rng, 1, 3), dim(rng, 2, 5), dim(rng, 1, 3)];
        let axis = rng.random_range(0..3);
        let start = rng.random_range(0..s[axis]);
        let end = rng.random_range(start + 1..=s[axis]);
        (
            vec![rand_t(rng, &s)],
            Box::new(move |g, v| g.slice(v[0], axis, start, end)),
        )
    });
}

pub fn convolutions() {
    run("conv2d", |rng| {
        let (b, cin, cout) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3));
        let k = dim(rng, 1, 4);
        let stride = dim(rng, 1, 2);
        let pad = rng.random_range(0..k);
        let h = dim(rng, k.saturating_sub(2 * pad).max(1), 6);
        let w = dim(rng, k.saturating_sub(2 * pad).max(1), 6);
        (
            vec![rand_t(rng, &[b, cin, h, w]), rand_t(rng, &[cout, cin, k, k])],
            Box::new(move |g, v| g.conv2d(v[0], v[1], stride, pad)),
        )
    });
    run("conv_transpose2d", |rng| {
        let (b, cin, cout) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3));
        let stride = dim(rng, 1, 2);
        let k = dim(rng, stride, 4);
        let pad = rng.random_range(0..=(k - 1) / 2);
        let (h, w) = (dim(rng, 1, 4), dim(rng, 1, 4));
        let ok = (h - 1) * stride + k > 2 * pad && (w - 1) * stride + k > 2 * pad;
        let (h, w) = if ok { (h, w) } else { (2, 2) };
        (
            vec![rand_t(rng, &[b, cin, h, w]), rand_t(rng, &[cin, cout, k, k])],
            Box::new(move |g, v| g.conv_transpose2d(v[0], v[1], stride, pad)),
        )
    });
}

pub fn reductions_and_losses() {
    run("sum", |rng| {
        let s = [dim(rng, 1, 4), dim(rng, 1, 4)];
        (vec![rand_t(rng, &s)], Box::new(|g, v| Ok(g.sum(v[0]))))
    });
    run("mean", |rng| {
        let s = [dim(rng, 1, 4), dim(rng, 1, 4)];
        (vec![rand_t(rng, &s)], Box::new(|g, v| Ok(g.mean(v[0]))))
    });
    run("mse", |rng| {
        let s = [dim(rng, 1, 4), dim(rng, 1, 4)];
        (
            vec![rand_t(rng, &s), rand_t(rng, &s)],
            Box::new(|g, v| g.mse(v[0], v[1])),
        )
    });
    run("cross_entropy", |rng| {
        let (n, classes) = (dim(rng, 1, 5), dim(rng, 2, 6));
        let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let weights: Vec<f32> = (0..n).map(|_| rng.random_range(0..2) as f32).collect();
        (
            vec![rand_t(rng, &[n, classes])],
            Box::new(move |g, v| g.cross_entropy(v[0], &targets, &weights)),
        )
    });
    run("bce_with_logits", |rng| {
        let n = dim(rng, 1, 8);
        let t = rng.random_range(0..2) as f32;
        (
            vec![rand_t(rng, &[n])],
            Box::new(move |g, v| Ok(g.bce_with_logits(v[0], t))),
        )
    });
}

pub fn three_layer_mlp() {
    run("mlp", |rng| {
        let (n, d0, d1, d2, d3) = (
            dim(rng, 1, 3),
            dim(rng, 2, 5),
            dim(rng, 2, 5),
            dim(rng, 2, 5),
            dim(rng, 1, 3),
        );
        let inputs = vec![
            rand_t(rng, &[n, d0]),
            rand_t(rng, &[d0, d1]),
            rand_t(rng, &[d1]),
            rand_t(rng, &[d1, d2]),
            rand_t(rng, &[d2]),
            rand_t(rng, &[d2, d3]),
        ];
        (
            inputs,
            Box::new(|g, v| {
                let h = g.matmul(v[0], v[1])?;
                let h = g.add_broadcast(h, v[2])?;
                let h = g.sigmoid(h);
                let h = g.matmul(h, v[3])?;
                let h = g.add_broadcast(h, v[4])?;
                let h = g.leaky_relu(h, 0.5);
                let h = g.matmul(h, v[5])?;
                Ok(g.mean(h))
            }),
        )
    });
}

pub fn detects_a_wrong_gradient() {
    // Straight-through deliberately reports a gradient the forward value does not have.
    let x = Tensor::from_vec(vec![0.3, -0.2], &[2]).unwrap();
    let q = Tensor::from_vec(vec![1.0, 1.0], &[2]).unwrap();
    let worst = check(&[x, q], Tolerance::default(), 0, |g, v| {
        let q = g.detach(v[1]);
        g.straight_through(v[0], q)
    })
    .unwrap();
    assert!(worst.is_some());
}
