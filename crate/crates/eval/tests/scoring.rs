use std::collections::BTreeSet;

use atvc_eval::{
    aggregate, auto_rank, export_hr_manifest, import_hr_ranks, score_pair, EvalError, ManifestRow, PairResult, Rank,
    RankConfig, ScoreFormula,
};
use atvc_scene::{render, AnswerType, Dataset};
use proptest::prelude::*;

mod scoring_criteria;

use scoring_criteria::{dataset, first_of};

#[test]
fn correct_can_answer_with_rank_a_scores_one() {
    scoring_criteria::correct_can_answer_with_rank_a_scores_one();
}

#[test]
fn correct_can_answer_with_rank_b_scores_three_quarters() {
    scoring_criteria::correct_can_answer_with_rank_b_scores_three_quarters();
}

#[test]
fn fully_correct_forbidden_answer_scores_one() {
    scoring_criteria::fully_correct_forbidden_answer_scores_one();
}

#[test]
fn cannot_pair_with_one_extra_missing_object_scores_three_quarters() {
    scoring_criteria::cannot_pair_with_one_extra_missing_object_scores_three_quarters();
}

#[test]
fn weighted_score_reproduces_published_arithmetic() {
    scoring_criteria::weighted_score_reproduces_published_arithmetic();
}

#[test]
fn wrong_type_and_invalid_text_score_zero_type() {
    let (_, q) = first_of(&dataset(3), AnswerType::Cannot);
    let r = score_pair(&q, "No problem.", None, None).unwrap();
    assert!(!r.type_correct);
    let r = score_pair(&q, "gibberish words", None, None).unwrap();
    assert!(!r.type_correct && !r.exp_exact);
    assert_eq!(r.fm, 0.0);
}

fn gold_echo(ds: &Dataset) -> Vec<PairResult> {
    ds.pairs()
        .map(|(_, q)| {
            let img = q.recreated.as_ref().map(|s| render(s).unwrap());
            score_pair(q, &q.answer, img.as_ref(), Some(Rank::A)).unwrap()
        })
        .collect()
}

#[test]
fn gold_echo_gives_perfect_rates() {
    let ds = dataset(4);
    let results = gold_echo(&ds);
    let rep = aggregate(&results, ScoreFormula::default()).unwrap();
    assert_eq!(rep.total, 40);
    assert_eq!(rep.can.count + rep.cannot.count + rep.forbidden.count, rep.total);
    for c in [&rep.can, &rep.cannot, &rep.forbidden] {
        assert_eq!(c.type_acc, 1.0);
        assert!(c.exp_acc.is_none_or(|e| e == 1.0));
    }
    assert_eq!(rep.score, 1.0);
    assert_eq!(rep.fm, 1.0);
    let hr = rep.hr.unwrap();
    assert_eq!((hr.a, hr.score, hr.ranked), (1.0, 1.0, rep.can.count));
    assert_eq!(rep.image.unwrap().pairs, rep.can.count);
    for r in &results {
        assert_eq!(r.fm, r.recompute_fm());
        assert_eq!(r.image.is_some(), r.answer_type == AnswerType::Can);
    }
    let table = rep.render_table();
    assert!(table.contains("forbidden") && table.contains("100.0"));
    let json = serde_json::to_string(&rep).unwrap();
    assert_eq!(serde_json::from_str::<atvc_eval::EvalReport>(&json).unwrap(), rep);
}

#[test]
fn single_correct_pair_has_every_rate_one() {
    let (_, q) = first_of(&dataset(2), AnswerType::Forbidden);
    let r = score_pair(&q, &q.answer, None, None).unwrap();
    let rep = aggregate(&[r], ScoreFormula::default()).unwrap();
    assert_eq!(
        (rep.forbidden.type_acc, rep.forbidden.exp_acc, rep.score, rep.fm),
        (1.0, Some(1.0), 1.0, 1.0)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn aggregate_is_permutation_invariant(seed in any::<u64>()) {
        use rand::seq::{IndexedRandom, SliceRandom};
        use rand::SeedableRng;
        let ds = dataset(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let answers = ["No problem.", "nonsense", "This action cannot be done. Because there is no large red rubber cube."];
        let results: Vec<PairResult> = ds
            .pairs()
            .map(|(_, q)| {
                let a = *answers.choose(&mut rng).unwrap();
                score_pair(q, a, None, [Some(Rank::A), Some(Rank::C), None].choose(&mut rng).copied().flatten()).unwrap()
            })
            .collect();
        let base = aggregate(&results, ScoreFormula::default()).unwrap();
        let mut shuffled = results.clone();
        shuffled.shuffle(&mut rng);
        let other = aggregate(&shuffled, ScoreFormula::default()).unwrap();
        prop_assert_eq!(base.can, other.can);
        prop_assert_eq!(base.cannot, other.cannot);
        prop_assert_eq!(base.forbidden, other.forbidden);
        prop_assert!((base.score - other.score).abs() < 1e-12);
        prop_assert!((base.fm - other.fm).abs() < 1e-12);
        for c in [&base.can, &base.cannot, &base.forbidden] {
            prop_assert!((0.0..=1.0).contains(&c.type_acc));
        }
        for r in &results {
            prop_assert!(r.exp_exact == (r.pred == r.gold));
        }
    }
}

#[test]
fn auto_rank_grades_gold_perfect_and_flags_damage() {
    let ds = dataset(180);
    let cfg = RankConfig::default();
    let (mut a, mut c, mut total) = (0, 0, 0);
    let mut b_checked = 0;
    for (scene, q) in ds.pairs().filter(|(_, q)| q.answer_type == AnswerType::Can) {
        total += 1;
        let gold = q.recreated.as_ref().unwrap();
        if auto_rank(&render(gold).unwrap(), scene, q, &cfg).unwrap() == Rank::A {
            a += 1;
        }
        if auto_rank(&render(scene).unwrap(), scene, q, &cfg).unwrap() == Rank::C {
            c += 1;
        } else {
            println!("unmodified input not ranked C: {} {}", q.query_id, q.question);
        }
        // Recolor one object the action leaves alone.
        let untouched = gold
            .objects
            .iter()
            .find(|o| scene.objects.iter().any(|b| b.index == o.index && b == *o) && o.bbox[2] - o.bbox[0] >= 4);
        if let Some(o) = untouched {
            let mut damaged = gold.clone();
            let obj = damaged.objects.iter_mut().find(|x| x.index == o.index).unwrap();
            obj.color = atvc_scene::Color::from_id((obj.color.id() + 3) % 8).unwrap();
            let img = render(&damaged).unwrap();
            let action_bboxes: Vec<[u32; 4]> = gold
                .objects
                .iter()
                .filter(|g| scene.objects.iter().any(|b| b.index == g.index && b != *g))
                .flat_map(|g| [g.bbox, scene.objects.iter().find(|b| b.index == g.index).unwrap().bbox])
                .collect();
            let overlaps = action_bboxes
                .iter()
                .any(|bb| !(o.bbox[2] < bb[0] || bb[2] < o.bbox[0] || o.bbox[3] < bb[1] || bb[3] < o.bbox[1]));
            if !overlaps {
                assert_eq!(auto_rank(&img, scene, q, &cfg).unwrap(), Rank::B, "{}", q.query_id);
                b_checked += 1;
            }
        }
    }
    assert!(total >= 1000, "{total}");
    assert_eq!(a, total);
    assert!(b_checked > 100, "{b_checked}");
    println!("unmodified input ranked C for {c}/{total} can-pairs");
    assert!(c as f64 >= 0.95 * total as f64, "{c}/{total}");
}

#[test]
fn auto_rank_needs_a_gold_scene() {
    let ds = dataset(2);
    let (scene, q) = first_of(&ds, AnswerType::Cannot);
    let img = render(&scene).unwrap();
    assert!(matches!(
        auto_rank(&img, &scene, &q, &RankConfig::default()),
        Err(EvalError::MissingGold(_))
    ));
}

fn manifest_rows(ds: &Dataset) -> Vec<ManifestRow> {
    ds.pairs()
        .filter(|(_, q)| q.answer_type == AnswerType::Can)
        .map(|(s, q)| ManifestRow {
            query_id: q.query_id.clone(),
            v_path: format!("images/{}.png", s.scene_id),
            question: q.question.clone(),
            pred_m_path: format!("pred/{}.png", q.query_id),
            gold_m_path: format!("recreations/{}.png", q.query_id),
            pred_answer: "No problem.".into(),
            gold_answer: q.answer.clone(),
            rank: None,
        })
        .collect()
}

#[test]
fn manifest_round_trip_preserves_ids() {
    let ds = dataset(3);
    let mut rows = manifest_rows(&ds);
    let can = ds.pairs().filter(|(_, q)| q.answer_type == AnswerType::Can).count();
    assert_eq!(rows.len(), can);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hr.jsonl");
    export_hr_manifest(&rows, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), can);
    let ids: BTreeSet<String> = rows.iter().map(|r| r.query_id.clone()).collect();
    // Unranked rows are not accepted.
    assert!(matches!(
        import_hr_ranks(&path, &ids),
        Err(EvalError::Manifest { line: 1, .. })
    ));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = Some([Rank::A, Rank::B, Rank::C][i % 3]);
    }
    export_hr_manifest(&rows, &path).unwrap();
    let ranks = import_hr_ranks(&path, &ids).unwrap();
    assert_eq!(ranks.keys().cloned().collect::<BTreeSet<_>>(), ids);
    assert_eq!(ranks[&rows[1].query_id], Rank::B);
}

#[test]
fn manifest_import_rejects_bad_rank_unknown_id_and_gaps() {
    let ds = dataset(3);
    let rows = manifest_rows(&ds);
    let ids: BTreeSet<String> = rows.iter().map(|r| r.query_id.clone()).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hr.jsonl");
    let line = |id: &str, rank: &str| format!("{{\"query_id\":\"{id}\",\"rank\":\"{rank}\"}}\n");

    let mut text: String = rows.iter().map(|r| line(&r.query_id, "A")).collect();
    text.push_str(&line(&rows[0].query_id, "B"));
    std::fs::write(&path, &text).unwrap();
    assert!(matches!(import_hr_ranks(&path, &ids), Err(EvalError::Manifest { line, .. }) if line == rows.len() + 1));

    let text = line(&rows[0].query_id, "A") + &line(&rows[1].query_id, "D");
    std::fs::write(&path, text).unwrap();
    let err = import_hr_ranks(&path, &ids).unwrap_err();
    assert!(matches!(err, EvalError::Manifest { line: 2, .. }), "{err}");
    assert!(err.to_string().contains(":2:"));

    std::fs::write(&path, line("nope_0_00", "A")).unwrap();
    assert!(matches!(
        import_hr_ranks(&path, &ids),
        Err(EvalError::Manifest { line: 1, .. })
    ));

    std::fs::write(&path, line(&rows[0].query_id, "A")).unwrap();
    match import_hr_ranks(&path, &ids) {
        Err(EvalError::Coverage { missing, .. }) => assert_eq!(missing.len(), ids.len() - 1),
        other => panic!("{other:?}"),
    }
}
