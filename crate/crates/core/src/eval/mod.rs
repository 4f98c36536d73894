//! Graded relevance, DCG/NDCG@K and the comparison reports.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::ProductId;
use crate::error::{Error, Result};
use crate::util::{cmp_score_desc, rng};

pub use report::{
    plot_ablation_svg, AblationGrid, BaselineComparison, CrossTargetMatrix, SegmentComparison,
    Summary, SummaryEntry,
};

pub const DEFAULT_K: usize = 48;
pub const DEFAULT_BINS: u8 = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// `2^rel - 1`.
    #[default]
    Exponential,
    /// `2^(rel - 1)`, with grade 0 still contributing nothing.
    Literal,
}

impl Gain {
    pub fn of(self, grade: u8) -> f64 {
        match (self, grade) {
            (_, 0) => 0.0,
            (Gain::Exponential, g) => 2f64.powi(i32::from(g)) - 1.0,
            (Gain::Literal, g) => 2f64.powi(i32::from(g) - 1),
        }
    }
}

/// `1 / log2(position + 1)` inside the cutoff, zero beyond it.
pub fn discount(position: usize, k: usize) -> f64 {
    if position == 0 || position > k {
        0.0
    } else {
        1.0 / ((position + 1) as f64).log2()
    }
}

/// Grades for one query: `ceil(b * m / max m)` for positive metrics, 0 for
/// zero. `None` when no metric is positive.
pub fn bin_grades(metrics: &[f64], bins: u8) -> Result<Option<Vec<u8>>> {
    if bins < 2 {
        return Err(Error::InvalidConfig("relevance binning needs b >= 2".into()));
    }
    if metrics.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(Error::InvalidInput("relevance metrics must be finite and non-negative".into()));
    }
    let max = metrics.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(None);
    }
    let b = f64::from(bins);
    Ok(Some(
        metrics
            .iter()
            .map(|&m| {
                if m <= 0.0 {
                    return 0;
                }
                let x = b * m / max;
                // absorb rounding noise on exact multiples before the ceiling
                let x = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() };
                x.clamp(1.0, b) as u8
            })
            .collect(),
    ))
}

/// Grades by query and product, with the queries that had no positive metric.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RelevanceGrades {
    pub bins: u8,
    pub by_query: BTreeMap<String, BTreeMap<ProductId, u8>>,
    pub excluded: Vec<String>,
}

impl RelevanceGrades {
    pub fn from_metrics(metrics: &BTreeMap<String, Vec<(ProductId, f64)>>, bins: u8) -> Result<Self> {
        let mut out = RelevanceGrades {
            bins,
            ..Default::default()
        };
        for (q, rows) in metrics {
            let values: Vec<f64> = rows.iter().map(|(_, m)| *m).collect();
            match bin_grades(&values, bins)? {
                Some(g) => {
                    out.by_query
                        .insert(q.clone(), rows.iter().map(|(p, _)| *p).zip(g).collect());
                }
                None => out.excluded.push(q.clone()),
            }
        }
        Ok(out)
    }
}

/// DCG of grades listed in ranked order, truncated at `k`.
pub fn dcg(grades: &[u8], k: usize, gain: Gain) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain.of(g) * discount(i + 1, k))
        .sum()
}

/// DCG of the grade-descending ordering.
pub fn ideal_dcg(grades: &[u8], k: usize, gain: Gain) -> f64 {
    let mut ideal = grades.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    dcg(&ideal, k, gain)
}

/// NDCG@k of grades in ranked order; `None` when the ideal DCG is zero.
pub fn ndcg(ranked_grades: &[u8], k: usize, gain: Gain) -> Option<f64> {
    let idcg = ideal_dcg(ranked_grades, k, gain);
    (idcg > 0.0).then(|| dcg(ranked_grades, k, gain) / idcg)
}

/// Indices ordered by score descending, ties by product id ascending.
pub fn rank_order(ids: &[ProductId], scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    idx.sort_by(|&a, &b| cmp_score_desc((scores[a], ids[a]), (scores[b], ids[b])));
    idx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub target: String,
    pub segment: String,
    pub k: usize,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    /// Queries dropped because their ideal DCG is zero.
    pub excluded: usize,
    /// 95% bootstrap interval of the mean.
    pub ci: (f64, f64),
}

/// One query's candidates: product ids with model scores.
pub struct Scored<'a> {
    pub query: &'a str,
    pub ids: &'a [ProductId],
    pub scores: &'a [f64],
}

pub struct EvalOptions {
    pub k: usize,
    pub gain: Gain,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            gain: Gain::Exponential,
            bootstrap: 1000,
            seed: 0,
        }
    }
}

pub fn evaluate<'a>(
    labels: (&str, &str, &str),
    scored: impl IntoIterator<Item = Scored<'a>>,
    grades: &RelevanceGrades,
    opts: &EvalOptions,
) -> EvalReport {
    let (model, target, segment) = labels;
    let mut per_query = BTreeMap::new();
    let mut excluded = 0;
    for s in scored {
        let Some(g) = grades.by_query.get(s.query) else {
            excluded += 1;
            continue;
        };
        let order = rank_order(s.ids, s.scores);
        let ranked: Vec<u8> = order
            .iter()
            .map(|&i| g.get(&s.ids[i]).copied().unwrap_or(0))
            .collect();
        match ndcg(&ranked, opts.k, opts.gain) {
            Some(v) => {
                per_query.insert(s.query.to_string(), v);
            }
            None => excluded += 1,
        }
    }
    let values: Vec<f64> = per_query.values().copied().collect();
    let mean = crate::util::mean(&values);
    EvalReport {
        model: model.to_string(),
        target: target.to_string(),
        segment: segment.to_string(),
        k: opts.k,
        per_query,
        mean,
        excluded,
        ci: bootstrap_ci(&values, opts.bootstrap, opts.seed),
    }
}

pub fn bootstrap_ci(values: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    use rand::Rng as _;
    if values.is_empty() || resamples == 0 {
        let m = crate::util::mean(values);
        return (m, m);
    }
    let mut r = rng(seed);
    let means: Vec<f64> = (0..resamples)
        .map(|_| {
            (0..values.len())
                .map(|_| values[r.gen_range(0..values.len())])
                .sum::<f64>()
                / values.len() as f64
        })
        .collect();
    (
        crate::util::quantile(&means, 0.025),
        crate::util::quantile(&means, 0.975),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grades_follow_ceiling_rule() {
        assert_eq!(bin_grades(&[0.4, 0.2, 0.1], 5).unwrap(), Some(vec![5, 3, 2]));
        assert_eq!(bin_grades(&[0.3, 0.1, 0.0], 3).unwrap(), Some(vec![3, 1, 0]));
        assert_eq!(bin_grades(&[0.0, 0.0], 5).unwrap(), None);
        assert!(bin_grades(&[1.0], 1).is_err());
    }

    #[test]
    fn single_grade_one_at_top_is_one() {
        assert_eq!(dcg(&[1], 48, Gain::Exponential), 1.0);
        assert_eq!(dcg(&[0, 0], 48, Gain::Exponential), 0.0);
        assert_eq!(dcg(&[1], 48, Gain::Literal), 1.0);
        assert_eq!(Gain::Literal.of(3), 4.0);
    }

    #[test]
    fn five_doc_hand_sum() {
        let g = [3, 2, 3, 0, 1];
        let hand = 7.0 / 2f64.log2() + 3.0 / 3f64.log2() + 7.0 / 4f64.log2() + 0.0 + 1.0 / 6f64.log2();
        assert!((dcg(&g, 48, Gain::Exponential) - hand).abs() < 1e-12);
        let cut = 7.0 + 3.0 / 3f64.log2();
        assert!((dcg(&g, 2, Gain::Exponential) - cut).abs() < 1e-12);
    }

    #[test]
    fn reversed_pair() {
        let v = ndcg(&[1, 2], 48, Gain::Exponential).unwrap();
        let hand = (1.0 + 3.0 / 3f64.log2()) / (3.0 + 1.0 / 3f64.log2());
        assert!((v - hand).abs() < 1e-12);
        assert_eq!(ndcg(&[2, 1], 48, Gain::Exponential), Some(1.0));
        assert_eq!(ndcg(&[0, 0], 48, Gain::Exponential), None);
    }

    #[test]
    fn ties_broken_by_product_id() {
        assert_eq!(rank_order(&[9, 3, 5], &[1.0, 1.0, 2.0]), vec![2, 1, 0]);
    }

    #[test]
    fn evaluate_counts_exclusions() {
        let mut metrics = BTreeMap::new();
        metrics.insert("a".to_string(), vec![(1, 0.5), (2, 0.1)]);
        metrics.insert("z".to_string(), vec![(1, 0.0)]);
        let grades = RelevanceGrades::from_metrics(&metrics, 5).unwrap();
        assert_eq!(grades.excluded, vec!["z".to_string()]);
        let ids = [1, 2];
        let scored = vec![
            Scored { query: "a", ids: &ids, scores: &[0.0, 1.0] },
            Scored { query: "z", ids: &ids[..1], scores: &[0.0] },
        ];
        let r = evaluate(("m", "log_ctr", "all"), scored, &grades, &EvalOptions::default());
        assert_eq!(r.excluded, 1);
        assert_eq!(r.per_query.len(), 1);
        assert!(r.mean < 1.0 && r.ci.0 <= r.mean && r.mean <= r.ci.1);
    }
}
