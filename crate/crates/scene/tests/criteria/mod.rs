//! Rule engine against an independent matcher, and the per-scene answer split.

use std::collections::BTreeSet;

use atvc_scene::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn cfg() -> SceneConfig {
    SceneConfig::default()
}

/// Independent brute-force re-statement of the answer rules.
pub fn oracle(scene: &Scene, action: Action, a: &Descriptor, b: &Descriptor) -> (AnswerType, Vec<Descriptor>) {
    let present = |d: &Descriptor| {
        scene
            .objects
            .iter()
            .any(|o| o.size == d.size && o.color == d.color && o.material == d.material && o.shape == d.shape)
    };
    let mut missing = vec![];
    if !present(a) {
        missing.push(*a);
    }
    if !present(b) && a != b {
        missing.push(*b);
    }
    let forbidden = (action == Action::PutUnder && a.shape == Shape::Sphere)
        || (action == Action::PutOnTop && b.shape == Shape::Sphere);
    let t = if forbidden {
        AnswerType::Forbidden
    } else if !missing.is_empty() {
        AnswerType::Cannot
    } else {
        AnswerType::Can
    };
    (t, missing)
}

pub fn rule_engine_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let all: Vec<Descriptor> = Descriptor::all().collect();
    let mut checked = 0;
    for seed in 0..1_000u64 {
        let scene = sample_scene(seed, &cfg()).unwrap();
        let plan = enumerate_queries(&scene, &mut rng, false).unwrap();
        for q in &plan.queries {
            let (t, m) = oracle(&scene, q.action, &q.operands[0], &q.operands[1]);
            assert_eq!((q.answer_type, &q.conjuncts), (t, &m), "{}", q.question);
            checked += 1;
        }
        // Random queries, biased towards present operands.
        for _ in 0..10 {
            let pick = |rng: &mut ChaCha8Rng| {
                if rng.random_bool(0.5) {
                    scene.objects[rng.random_range(0..scene.objects.len())].descriptor()
                } else {
                    all[rng.random_range(0..all.len())]
                }
            };
            let action = Action::ALL[rng.random_range(0..4)];
            let (a, b) = (pick(&mut rng), pick(&mut rng));
            let c = classify(&scene, action, &a, &b);
            assert_eq!((c.answer_type, c.missing), oracle(&scene, action, &a, &b));
            checked += 1;
        }
    }
    assert!(checked >= 10_000);
}

pub fn split_and_record_invariants() {
    let mut fallbacks = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..1_000u64 {
        let scene = sample_scene(seed, &cfg()).unwrap();
        let plan = enumerate_queries(&scene, &mut rng, false).unwrap();
        assert_eq!(plan.queries.len(), QUERIES_PER_SCENE);
        let keys: BTreeSet<_> = plan.queries.iter().map(|q| (q.action, q.operands)).collect();
        assert_eq!(keys.len(), QUERIES_PER_SCENE, "duplicate query");
        let mut counts = [0usize; 3];
        for q in &plan.queries {
            match q.answer_type {
                AnswerType::Can => {
                    counts[0] += 1;
                    let r = q.recreated.as_ref().expect("can carries a re-creation");
                    r.validate(None).unwrap();
                    for d in q.operands {
                        assert_eq!(scene.count(&d), 1, "can-queries use unique descriptors");
                    }
                    if q.action == Action::ExchangeColor {
                        assert_ne!(q.operands[0].color, q.operands[1].color);
                    }
                }
                AnswerType::Cannot => {
                    counts[1] += 1;
                    assert!(q.recreated.is_none() && !q.conjuncts.is_empty() && q.reason.is_none());
                }
                AnswerType::Forbidden => {
                    counts[2] += 1;
                    assert!(q.recreated.is_none() && q.reason.is_some());
                }
            }
        }
        if plan.fallback {
            fallbacks += 1;
        } else {
            assert_eq!(counts, SPLIT, "seed {seed}");
        }
    }
    assert!(fallbacks < 100, "{fallbacks} fallbacks");
}
