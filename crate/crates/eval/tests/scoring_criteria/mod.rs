//! Per-pair FM values and the weighted score arithmetic.

use atvc_eval::{hr_score, score_pair, weighted_score, CategoryStats, Rank, ScoreFormula};
use atvc_scene::{generate_dataset, render, AnswerType, Dataset, DatasetConfig, QueryRecord, Scene};

pub fn dataset(scenes: usize) -> Dataset {
    generate_dataset(&DatasetConfig {
        seed: 11,
        scenes,
        ..DatasetConfig::default()
    })
    .unwrap()
}

pub fn first_of(ds: &Dataset, t: AnswerType) -> (Scene, QueryRecord) {
    ds.pairs()
        .find(|(_, q)| q.answer_type == t)
        .map(|(s, q)| (s.clone(), q.clone()))
        .unwrap()
}

pub fn correct_can_answer_with_rank_a_scores_one() {
    let (_, q) = first_of(&dataset(3), AnswerType::Can);
    let img = render(q.recreated.as_ref().unwrap()).unwrap();
    let r = score_pair(&q, "No problem.", Some(&img), Some(Rank::A)).unwrap();
    assert_eq!(r.fm, 1.0);
    assert!(r.type_correct && r.exp_exact);
    let i = r.image.unwrap();
    assert_eq!((i.psnr, i.ssim, i.fsim), (100.0, 1.0, 1.0));
}

pub fn correct_can_answer_with_rank_b_scores_three_quarters() {
    let (_, q) = first_of(&dataset(3), AnswerType::Can);
    let r = score_pair(&q, "no problem .", None, Some(Rank::B)).unwrap();
    assert_eq!(r.fm, 0.75);
    assert!(r.image.is_none());
}

pub fn fully_correct_forbidden_answer_scores_one() {
    let (_, q) = first_of(&dataset(3), AnswerType::Forbidden);
    let r = score_pair(&q, &q.answer.clone(), None, Some(Rank::A)).unwrap();
    assert_eq!(r.fm, 1.0);
    assert!(r.type_correct && r.exp_exact);
    assert!(r.image.is_none() && r.hr_rank.is_none());
}

pub fn cannot_pair_with_one_extra_missing_object_scores_three_quarters() {
    let (_, mut q) = first_of(&dataset(3), AnswerType::Cannot);
    q.answer = "This action cannot be done. Because there is no bottle.".into();
    let r = score_pair(
        &q,
        "This action cannot be done. Because there is no kiwi and no bottle.",
        None,
        None,
    )
    .unwrap();
    assert!(r.type_correct);
    assert!(!r.exp_exact);
    assert_eq!(r.exp_score, 0.5);
    assert_eq!(r.fm, 0.75);
}

pub fn weighted_score_reproduces_published_arithmetic() {
    let can = CategoryStats {
        count: 950,
        type_acc: 0.783,
        exp_acc: None,
    };
    let cannot = CategoryStats {
        count: 922,
        type_acc: 0.772,
        exp_acc: Some(0.25),
    };
    let s = 100.0 * weighted_score(&[can, cannot], ScoreFormula::MeanTypeExp);
    assert!((s - 64.9).abs() < 0.3, "{s}");
    assert_eq!(format!("{s:.1}"), "64.9");
    assert!((hr_score(12.8, 29.4) - 27.5).abs() < 1e-12);
}
