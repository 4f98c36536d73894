//! Pairwise neural ranker trained with the logistic pair loss.

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ModelKind, ModelParams, RankData, RankModel, TrainingReport};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Gradients, Mlp};
use crate::util::{rng, sigmoid, softplus, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankNetParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Pairs sampled per group and epoch.
    pub max_pairs: usize,
}

impl Default for RankNetParams {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            learning_rate: 1e-3,
            epochs: 20,
            max_pairs: 100,
        }
    }
}

/// `log(1 + exp(-(s_hi - s_lo)))` for a pair whose first member has the
/// higher grade.
pub fn pairwise_loss(s_hi: f64, s_lo: f64) -> f64 {
    softplus(-(s_hi - s_lo))
}

/// Derivatives of [`pairwise_loss`] with respect to both scores.
pub fn pairwise_gradient(s_hi: f64, s_lo: f64) -> (f64, f64) {
    let d = sigmoid(-(s_hi - s_lo));
    (-d, d)
}

/// Index pairs `(hi, lo)` with `grades[hi] > grades[lo]`, at most `max_pairs`
/// of them, sampled uniformly when there are more.
pub fn ranknet_pairs(grades: &[u8], max_pairs: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    let n = grades.len();
    let order = |a: usize, b: usize| if grades[a] > grades[b] { (a, b) } else { (b, a) };
    if n * n.saturating_sub(1) / 2 <= 4 * max_pairs {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .filter(|&(a, b)| grades[a] != grades[b])
            .map(|(a, b)| order(a, b))
            .collect();
        if all.len() > max_pairs {
            crate::util::shuffle(&mut all, rng);
            all.truncate(max_pairs);
            all.sort_unstable();
        }
        return all;
    }
    let mut out = Vec::with_capacity(max_pairs);
    let mut attempts = 0;
    while out.len() < max_pairs && attempts < 50 * max_pairs {
        attempts += 1;
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if grades[a] != grades[b] {
            out.push(order(a, b));
        }
    }
    out
}

/// Standardized rows of one group together with its training pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub x: Array2<f64>,
    pub pairs: Vec<(usize, usize)>,
}

impl PairBatch {
    /// Mean pair loss of `net` on this batch.
    pub fn loss(&self, net: &Mlp) -> f64 {
        let s = net.predict(self.x.view());
        self.pairs
            .iter()
            .map(|&(a, b)| pairwise_loss(s[[a, 0]], s[[b, 0]]))
            .sum::<f64>()
            / self.pairs.len().max(1) as f64
    }

    /// Gradient of [`PairBatch::loss`] with respect to every weight.
    pub fn gradient(&self, net: &Mlp) -> Gradients {
        let acts = net.forward(self.x.view());
        let s = acts.last().unwrap();
        let mut delta = Array2::zeros((self.x.nrows(), 1));
        let w = 1.0 / self.pairs.len().max(1) as f64;
        for &(a, b) in &self.pairs {
            let (ga, gb) = pairwise_gradient(s[[a, 0]], s[[b, 0]]);
            delta[[a, 0]] += w * ga;
            delta[[b, 0]] += w * gb;
        }
        let delta = delta * net.output_derivative(s);
        net.backward(&acts, delta)
    }

    /// Largest relative gap between the analytic gradient and central finite
    /// differences of step `h`, over all weights. Gradients below `floor` in
    /// magnitude are compared on an absolute scale of `floor`.
    pub fn gradient_check(&self, net: &Mlp, h: f64, floor: f64) -> f64 {
        let analytic = self.gradient(net).flat();
        let base = net.flat_params();
        let mut probe = net.clone();
        let mut params = base.clone();
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            params[i] = base[i] + h;
            probe.set_flat_params(&params);
            let up = self.loss(&probe);
            params[i] = base[i] - h;
            probe.set_flat_params(&params);
            let down = self.loss(&probe);
            params[i] = base[i];
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(floor);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        worst
    }
}

/// Per-column mean and standard deviation, unit scale for constant columns.
pub fn standardization(data: &RankData) -> (Vec<f64>, Vec<f64>) {
    let d = data.n_features;
    let n = data.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for i in 0..data.len() {
        for (m, v) in mean.iter_mut().zip(data.row(i)) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for i in 0..data.len() {
        for ((s, v), m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let scale = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
    (mean, scale)
}

/// Batches for every group with at least one valid pair.
pub fn pair_batches(data: &RankData, mean: &[f64], scale: &[f64], max_pairs: usize, rng: &mut Rng) -> Vec<PairBatch> {
    let d = data.n_features;
    data.groups
        .iter()
        .filter_map(|g| {
            let pairs = ranknet_pairs(&data.grades[g.range()], max_pairs, rng);
            if pairs.is_empty() {
                return None;
            }
            let x = Array2::from_shape_fn((g.len(), d), |(r, c)| {
                (data.features[(g.start + r) * d + c] - mean[c]) / scale[c]
            });
            Some(PairBatch { x, pairs })
        })
        .collect()
}

pub fn ranknet_train(data: &RankData, params: &RankNetParams, target: &str, seed: u64) -> Result<RankModel> {
    if data.is_empty() || data.n_features == 0 {
        return Err(Error::InvalidInput("no training rows".into()));
    }
    let mut r = rng(seed);
    let (mean, scale) = standardization(data);
    if pair_batches(data, &mean, &scale, 1, &mut r.clone()).is_empty() {
        return Err(Error::NoValidPairs("no group has two documents with different grades".into()));
    }
    let mut sizes = vec![data.n_features];
    sizes.extend(&params.hidden);
    sizes.push(1);
    let mut acts = vec![Activation::Tanh; params.hidden.len()];
    acts.push(Activation::Identity);
    let mut net = Mlp::new(&sizes, &acts, &mut r);
    let mut adam = Adam::new(&net, params.learning_rate);
    let mut report = TrainingReport::default();
    for _ in 0..params.epochs {
        let mut batches = pair_batches(data, &mean, &scale, params.max_pairs, &mut r);
        crate::util::shuffle(&mut batches, &mut r);
        let mut total = 0.0;
        for b in &batches {
            total += b.loss(&net);
            let g = b.gradient(&net);
            adam.step(&mut net, &g);
        }
        if !net.all_finite() {
            return Err(Error::Divergence("ranknet weights became non-finite".into()));
        }
        report.losses.push(total / batches.len() as f64);
    }
    Ok(RankModel {
        kind: ModelKind::RankNet,
        mask: data.mask,
        target: target.to_string(),
        n_features: data.n_features,
        seed,
        hyperparameters: serde_json::to_value(params)?,
        report,
        params: ModelParams::Net { mean, scale, net },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::FeatureMask;
    use crate::rank::tests::toy_data;
    use crate::rank::{TrainingGroup, TrainingRow};

    #[test]
    fn loss_antisymmetric_under_swap() {
        for (a, b) in [(0.3, -1.2), (2.0, 2.0), (-5.0, 4.0)] {
            assert_eq!(pairwise_loss(a, b), softplus(b - a));
            assert!((pairwise_loss(a, b) - pairwise_loss(b, a) - (b - a)).abs() < 1e-12);
            let (ga, gb) = pairwise_gradient(a, b);
            assert_eq!(ga, -gb);
        }
    }

    #[test]
    fn two_docs_ordered_after_training() {
        let rows = vec![
            TrainingRow { product_id: 1, features: vec![0.0, 1.0], target: 0.0, grade: 0 },
            TrainingRow { product_id: 2, features: vec![1.0, 0.0], target: 1.0, grade: 1 },
        ];
        let data = RankData::new(FeatureMask::ALL, 2, vec![TrainingGroup { query_id: 0, rows }]).unwrap();
        let p = RankNetParams { epochs: 50, learning_rate: 1e-2, ..RankNetParams::default() };
        let m = ranknet_train(&data, &p, "t", 5).unwrap();
        let s = m.predict(&data).unwrap();
        assert!(s[1] > s[0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = toy_data(3, 12);
        let p = RankNetParams { hidden: vec![8, 4], epochs: 3, ..RankNetParams::default() };
        let m = ranknet_train(&data, &p, "t", 1).unwrap();
        let ModelParams::Net { mean, scale, net } = &m.params else { panic!() };
        let batches = pair_batches(&data, mean, scale, 30, &mut rng(2));
        assert!(batches[0].gradient_check(net, 1e-5, 1e-6) < 1e-4);
    }

    #[test]
    fn no_pairs_rejected() {
        let mut data = toy_data(2, 5);
        data.grades.iter_mut().for_each(|g| *g = 3);
        assert!(matches!(ranknet_train(&data, &RankNetParams::default(), "t", 0), Err(Error::NoValidPairs(_))));
    }

    #[test]
    fn pair_sampling_respects_cap_and_order() {
        let grades: Vec<u8> = (0..200).map(|i| (i % 5) as u8).collect();
        let pairs = ranknet_pairs(&grades, 100, &mut rng(0));
        assert_eq!(pairs.len(), 100);
        assert!(pairs.iter().all(|&(a, b)| grades[a] > grades[b]));
        let small = ranknet_pairs(&[2, 1, 1], 100, &mut rng(0));
        assert_eq!(small, vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn seed_reproducible() {
        let data = toy_data(3, 8);
        let p = RankNetParams { hidden: vec![6], epochs: 2, ..RankNetParams::default() };
        assert_eq!(ranknet_train(&data, &p, "t", 3).unwrap(), ranknet_train(&data, &p, "t", 3).unwrap());
    }
}
