use std::fmt::Write as _;

use atvc_scene::AnswerType;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::scoring::{PairResult, Rank};

/// How a rejected category's type and explanation accuracies combine into the
/// category value used by the weighted score. Can-pairs always contribute
/// their answer accuracy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFormula {
    #[default]
    MeanTypeExp,
    TypeOnly,
    ExpOnly,
}

/// One row of the per-category table. Rates are fractions in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub count: usize,
    pub type_acc: f64,
    /// `None` for the can category, which has no explanation.
    pub exp_acc: Option<f64>,
}

impl CategoryStats {
    pub fn value(&self, formula: ScoreFormula) -> f64 {
        match (self.exp_acc, formula) {
            (None, _) | (Some(_), ScoreFormula::TypeOnly) => self.type_acc,
            (Some(e), ScoreFormula::MeanTypeExp) => (self.type_acc + e) / 2.0,
            (Some(e), ScoreFormula::ExpOnly) => e,
        }
    }
}

/// Count-weighted mean of the category values; 0 when there are no pairs.
pub fn weighted_score(rows: &[CategoryStats], formula: ScoreFormula) -> f64 {
    let total: usize = rows.iter().map(|r| r.count).sum();
    if total == 0 {
        return 0.0;
    }
    rows.iter().map(|r| r.count as f64 * r.value(formula)).sum::<f64>() / total as f64
}

/// `A + B / 2` on fractions (or percentages; the unit carries through).
pub fn hr_score(a: f64, b: f64) -> f64 {
    a + 0.5 * b
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HrSummary {
    pub ranked: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSummary {
    pub pairs: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub fsim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub can: CategoryStats,
    pub cannot: CategoryStats,
    pub forbidden: CategoryStats,
    pub formula: ScoreFormula,
    pub score: f64,
    pub image: Option<ImageSummary>,
    pub hr: Option<HrSummary>,
    pub fm: f64,
}

fn rate(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

fn category(results: &[PairResult], t: AnswerType) -> CategoryStats {
    let rows: Vec<&PairResult> = results.iter().filter(|r| r.answer_type == t).collect();
    let n = rows.len();
    let type_hits = rows.iter().filter(|r| r.type_correct).count();
    let exp_hits = rows.iter().filter(|r| r.exp_exact).count();
    CategoryStats {
        count: n,
        type_acc: rate(type_hits, n),
        exp_acc: (t != AnswerType::Can).then(|| rate(exp_hits, n)),
    }
}

/// Summarize scored pairs. Explanation accuracy uses exact set equality.
pub fn aggregate(results: &[PairResult], formula: ScoreFormula) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let can = category(results, AnswerType::Can);
    let cannot = category(results, AnswerType::Cannot);
    let forbidden = category(results, AnswerType::Forbidden);
    let score = weighted_score(&[can, cannot, forbidden], formula);

    let imgs: Vec<_> = results.iter().filter_map(|r| r.image).collect();
    let image = (!imgs.is_empty()).then(|| {
        let n = imgs.len() as f64;
        ImageSummary {
            pairs: imgs.len(),
            psnr: imgs.iter().map(|s| s.psnr).sum::<f64>() / n,
            ssim: imgs.iter().map(|s| s.ssim).sum::<f64>() / n,
            fsim: imgs.iter().map(|s| s.fsim).sum::<f64>() / n,
        }
    });

    let ranks: Vec<Rank> = results.iter().filter_map(|r| r.hr_rank).collect();
    let hr = (!ranks.is_empty()).then(|| {
        let n = ranks.len();
        let frac = |k: Rank| rate(ranks.iter().filter(|&&r| r == k).count(), n);
        let (a, b, c) = (frac(Rank::A), frac(Rank::B), frac(Rank::C));
        HrSummary {
            ranked: n,
            a,
            b,
            c,
            score: hr_score(a, b),
        }
    });

    let fm = results.iter().map(|r| r.fm).sum::<f64>() / results.len() as f64;
    Ok(EvalReport {
        total: results.len(),
        can,
        cannot,
        forbidden,
        formula,
        score,
        image,
        hr,
        fm,
    })
}

impl EvalReport {
    /// Plain-text tables with rates as percentages.
    pub fn render_table(&self) -> String {
        let pct = |v: f64| format!("{:.1}", 100.0 * v);
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>6} {:>9} {:>9}", "Category", "Num", "Type Acc", "Exp Acc");
        for (name, c) in [
            ("can", &self.can),
            ("cannot", &self.cannot),
            ("forbidden", &self.forbidden),
        ] {
            let exp = c.exp_acc.map(pct).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "{:<10} {:>6} {:>9} {:>9}", name, c.count, pct(c.type_acc), exp);
        }
        let _ = writeln!(s, "{:<10} {:>6} {:>9}", "Score", self.total, pct(self.score));
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>8} {:>8} {:>8} {:>6} {:>6} {:>6} {:>8} {:>8}",
            "PSNR", "SSIM", "FSIM", "A", "B", "C", "HR", "FM"
        );
        let (p, ss, f) = match &self.image {
            Some(i) => (
                format!("{:.2}", i.psnr),
                format!("{:.4}", i.ssim),
                format!("{:.4}", i.fsim),
            ),
            None => ("-".into(), "-".into(), "-".into()),
        };
        let (a, b, c, hr) = match &self.hr {
            Some(h) => (pct(h.a), pct(h.b), pct(h.c), pct(h.score)),
            None => ("-".into(), "-".into(), "-".into(), "-".into()),
        };
        let _ = writeln!(
            s,
            "{p:>8} {ss:>8} {f:>8} {a:>6} {b:>6} {c:>6} {hr:>8} {:>8}",
            pct(self.fm)
        );
        s
    }
}
