//! Gradient-boosted trees fitted to lambda gradients of NDCG@K.

use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, Binned, TreeParams};
use super::{ModelKind, ModelParams, RankData, RankModel, TrainingReport};
use crate::corpus::ProductId;
use crate::error::{Error, Result};
use crate::eval::{discount, ideal_dcg, ndcg, rank_order, Gain, DEFAULT_K};
use crate::util::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LambdaMartParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub k: usize,
    pub gain: Gain,
    pub max_bins: usize,
}

impl Default for LambdaMartParams {
    fn default() -> Self {
        Self {
            n_trees: 300,
            learning_rate: 0.05,
            max_depth: 6,
            min_leaf: 5,
            k: DEFAULT_K,
            gain: Gain::Exponential,
            max_bins: 64,
        }
    }
}

/// Per-document lambdas (positive pushes a document up) and the matching
/// second-order weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lambdas {
    pub lambdas: Vec<f64>,
    pub hessians: Vec<f64>,
}

/// Lambdas for one group under the current `scores`. Pairs are restricted
/// to those with at least one member ranked inside the cutoff, since the
/// NDCG change of any other swap is zero.
pub fn lambda_gradients(scores: &[f64], grades: &[u8], ids: &[ProductId], k: usize, gain: Gain) -> Lambdas {
    let n = scores.len();
    let mut out = Lambdas {
        lambdas: vec![0.0; n],
        hessians: vec![0.0; n],
    };
    let idcg = ideal_dcg(grades, k, gain);
    if idcg <= 0.0 {
        return out;
    }
    let order = rank_order(ids, scores);
    let top = k.min(n);
    for p in 0..top {
        let a = order[p];
        let da = discount(p + 1, k);
        for (q, &b) in order.iter().enumerate().skip(p + 1) {
            if grades[a] == grades[b] {
                continue;
            }
            let (hi, lo) = if grades[a] > grades[b] { (a, b) } else { (b, a) };
            let delta = (gain.of(grades[a]) - gain.of(grades[b])).abs() * (da - discount(q + 1, k)).abs() / idcg;
            let rho = 1.0 / (1.0 + (scores[hi] - scores[lo]).exp());
            let l = delta * rho;
            let h = delta * rho * (1.0 - rho);
            out.lambdas[hi] += l;
            out.lambdas[lo] -= l;
            out.hessians[hi] += h;
            out.hessians[lo] += h;
        }
    }
    out
}

fn group_ndcg(data: &RankData, scores: &[f64], k: usize, gain: Gain) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for g in &data.groups {
        let r = g.range();
        let order = rank_order(&data.product_ids[r.clone()], &scores[r.clone()]);
        let ranked: Vec<u8> = order.iter().map(|&i| data.grades[r.start + i]).collect();
        if let Some(v) = ndcg(&ranked, k, gain) {
            sum += v;
            n += 1;
        }
    }
    (n > 0).then(|| sum / f64::from(n))
}

pub fn lambdamart_train(data: &RankData, params: &LambdaMartParams, target: &str, seed: u64) -> Result<RankModel> {
    if data.is_empty() || data.n_features == 0 {
        return Err(Error::InvalidInput("no training rows".into()));
    }
    if params.k == 0 {
        return Err(Error::InvalidConfig("lambdamart cutoff k must be positive".into()));
    }
    let positive = data
        .groups
        .iter()
        .any(|g| g.range().any(|i| data.grades[i] > 0) && g.len() >= 2);
    if !positive {
        return Err(Error::NoValidPairs("no group has two documents with different grades".into()));
    }
    let n = data.len();
    let binned = Binned::new(&data.features, data.n_features, params.max_bins);
    let rows: Vec<u32> = (0..n as u32).collect();
    let tp = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        lambda: 0.0,
        feature_fraction: 1.0,
    };
    let mut r = rng(seed);
    let mut scores = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut report = TrainingReport::default();
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let mut imbalance: f64 = 0.0;
        for g in &data.groups {
            let rg = g.range();
            let l = lambda_gradients(
                &scores[rg.clone()],
                &data.grades[rg.clone()],
                &data.product_ids[rg.clone()],
                params.k,
                params.gain,
            );
            imbalance = imbalance.max(l.lambdas.iter().sum::<f64>().abs());
            for (off, i) in rg.enumerate() {
                grad[i] = -l.lambdas[off];
                hess[i] = l.hessians[off];
            }
        }
        report.lambda_imbalance.push(imbalance);
        let tree = fit_tree(&binned, &rows, &grad, &hess, &tp, &mut r);
        for (i, s) in scores.iter_mut().enumerate() {
            *s += params.learning_rate * tree.predict(data.row(i));
        }
        if !scores.iter().all(|s| s.is_finite()) {
            return Err(Error::Divergence("lambdamart scores became non-finite".into()));
        }
        report.train_ndcg.push(group_ndcg(data, &scores, params.k, params.gain).unwrap_or(0.0));
        trees.push(tree);
    }
    Ok(RankModel {
        kind: ModelKind::LambdaMart,
        mask: data.mask,
        target: target.to_string(),
        n_features: data.n_features,
        seed,
        hyperparameters: serde_json::to_value(params)?,
        report,
        params: ModelParams::Boosted {
            base: 0.0,
            learning_rate: params.learning_rate,
            trees,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::dcg;
    use crate::rank::tests::toy_data;

    #[test]
    fn two_doc_lambda_matches_ndcg_swap() {
        let grades = [1u8, 0];
        let l = lambda_gradients(&[0.0, 0.0], &grades, &[1, 2], 48, Gain::Exponential);
        let before = ndcg(&[1, 0], 48, Gain::Exponential).unwrap();
        let after = ndcg(&[0, 1], 48, Gain::Exponential).unwrap();
        let delta = (before - after).abs();
        assert!((delta - (1.0 - 1.0 / 3f64.log2())).abs() < 1e-12);
        assert!((l.lambdas[0] - 0.5 * delta).abs() < 1e-12);
        assert!(l.lambdas[0] > 0.0 && l.lambdas[1] < 0.0);
    }

    #[test]
    fn tied_grades_zero_lambdas() {
        let l = lambda_gradients(&[0.3, -1.0, 2.0], &[2, 2, 2], &[1, 2, 3], 48, Gain::Exponential);
        assert!(l.lambdas.iter().all(|&v| v == 0.0));
        let l = lambda_gradients(&[0.3, -1.0], &[0, 0], &[1, 2], 48, Gain::Exponential);
        assert!(l.lambdas.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_matches_brute_force_swap() {
        let grades = [3u8, 0, 1, 2, 0, 1];
        let scores = [0.1, 0.9, 0.5, -0.2, 0.3, 0.0];
        let ids = [1, 2, 3, 4, 5, 6];
        let k = 4;
        let l = lambda_gradients(&scores, &grades, &ids, k, Gain::Exponential);
        let order = rank_order(&ids, &scores);
        let ranked: Vec<u8> = order.iter().map(|&i| grades[i]).collect();
        let idcg = ideal_dcg(&grades, k, Gain::Exponential);
        let base = dcg(&ranked, k, Gain::Exponential);
        let mut expected = [0.0; 6];
        for p in 0..6 {
            for q in p + 1..6 {
                let (a, b) = (order[p], order[q]);
                if grades[a] == grades[b] {
                    continue;
                }
                let mut swapped = ranked.clone();
                swapped.swap(p, q);
                let delta = (dcg(&swapped, k, Gain::Exponential) - base).abs() / idcg;
                let (hi, lo) = if grades[a] > grades[b] { (a, b) } else { (b, a) };
                let rho = 1.0 / (1.0 + (scores[hi] - scores[lo]).exp());
                expected[hi] += delta * rho;
                expected[lo] -= delta * rho;
            }
        }
        for i in 0..6 {
            assert!((l.lambdas[i] - expected[i]).abs() < 1e-12, "{i}");
        }
        assert!(l.lambdas.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn single_group_reaches_perfect_ndcg() {
        let data = toy_data(1, 30);
        let p = LambdaMartParams { n_trees: 200, learning_rate: 0.3, min_leaf: 1, ..LambdaMartParams::default() };
        let m = lambdamart_train(&data, &p, "log_ctr", 0).unwrap();
        assert!((m.report.train_ndcg.last().unwrap() - 1.0).abs() < 1e-12);
        assert!(m.report.lambda_imbalance.iter().all(|&v| v < 1e-9));
    }

    #[test]
    fn train_ndcg_improves_over_windows() {
        let data = toy_data(6, 25);
        let p = LambdaMartParams { n_trees: 60, learning_rate: 0.1, min_leaf: 2, ..LambdaMartParams::default() };
        let m = lambdamart_train(&data, &p, "log_ctr", 4).unwrap();
        let nd = &m.report.train_ndcg;
        for t in 0..nd.len() - 10 {
            assert!(nd[t + 10] >= nd[t] - 1e-9, "{t}: {} -> {}", nd[t], nd[t + 10]);
        }
    }

    #[test]
    fn all_zero_grades_rejected() {
        let mut data = toy_data(2, 5);
        data.grades.iter_mut().for_each(|g| *g = 0);
        assert!(matches!(
            lambdamart_train(&data, &LambdaMartParams::default(), "t", 0),
            Err(Error::NoValidPairs(_))
        ));
    }
}
