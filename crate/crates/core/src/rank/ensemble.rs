//! Pointwise tree ensembles regressing the log target.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, Binned, Tree, TreeParams};
use super::{ModelKind, ModelParams, RankData, RankModel, TrainingReport};
use crate::error::{Error, Result};
use crate::util::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of features tried at each split.
    pub feature_subsample: f64,
    pub max_bins: usize,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 8,
            min_leaf: 5,
            feature_subsample: 0.33,
            max_bins: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub max_bins: usize,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self {
            n_trees: 300,
            learning_rate: 0.05,
            max_depth: 6,
            min_leaf: 5,
            max_bins: 64,
        }
    }
}

fn check_data(data: &RankData) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no training rows".into()));
    }
    if data.n_features == 0 {
        return Err(Error::InvalidInput("no feature columns".into()));
    }
    Ok(())
}

fn constant_warning(targets: &[f64]) -> Option<String> {
    let first = targets[0];
    targets
        .iter()
        .all(|&t| t == first)
        .then(|| format!("constant training target {first}; trees collapse to single leaves"))
}

pub fn rf_train(data: &RankData, params: &RfParams, target: &str, seed: u64) -> Result<RankModel> {
    check_data(data)?;
    if params.n_trees == 0 {
        return Err(Error::InvalidConfig("rf needs at least one tree".into()));
    }
    let n = data.len();
    let binned = Binned::new(&data.features, data.n_features, params.max_bins);
    let grad: Vec<f64> = data.targets.iter().map(|t| -t).collect();
    let hess = vec![1.0; n];
    let tp = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        lambda: 0.0,
        feature_fraction: params.feature_subsample,
    };
    let mut r = rng(seed);
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut oob_sum = vec![0.0; n];
    let mut oob_count = vec![0u32; n];
    let mut in_bag = vec![false; n];
    for _ in 0..params.n_trees {
        in_bag.iter_mut().for_each(|b| *b = false);
        let rows: Vec<u32> = (0..n)
            .map(|_| {
                let i = r.gen_range(0..n);
                in_bag[i] = true;
                i as u32
            })
            .collect();
        let tree = fit_tree(&binned, &rows, &grad, &hess, &tp, &mut r);
        for i in (0..n).filter(|&i| !in_bag[i]) {
            oob_sum[i] += tree.predict(data.row(i));
            oob_count[i] += 1;
        }
        trees.push(tree);
    }
    let (se, cnt) = (0..n)
        .filter(|&i| oob_count[i] > 0)
        .fold((0.0, 0usize), |(se, c), i| {
            let e = oob_sum[i] / f64::from(oob_count[i]) - data.targets[i];
            (se + e * e, c + 1)
        });
    let mut report = TrainingReport {
        oob_mse: (cnt > 0).then(|| se / cnt as f64),
        ..TrainingReport::default()
    };
    if let Some(w) = constant_warning(&data.targets) {
        log::warn!("{w}");
        report.warnings.push(w);
    }
    Ok(RankModel {
        kind: ModelKind::RandomForest,
        mask: data.mask,
        target: target.to_string(),
        n_features: data.n_features,
        seed,
        hyperparameters: serde_json::to_value(params)?,
        report,
        params: ModelParams::Forest { trees },
    })
}

pub fn gbm_train(data: &RankData, params: &GbmParams, target: &str, seed: u64) -> Result<RankModel> {
    check_data(data)?;
    if !(0.0..=1.0).contains(&params.learning_rate) {
        return Err(Error::InvalidConfig("gbm learning rate must lie in [0, 1]".into()));
    }
    let n = data.len();
    let binned = Binned::new(&data.features, data.n_features, params.max_bins);
    let base = crate::util::mean(&data.targets);
    let mut pred = vec![base; n];
    let hess = vec![1.0; n];
    let rows: Vec<u32> = (0..n as u32).collect();
    let tp = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        lambda: 0.0,
        feature_fraction: 1.0,
    };
    let mut r = rng(seed);
    let mse = |pred: &[f64]| {
        pred.iter()
            .zip(&data.targets)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n as f64
    };
    let mut report = TrainingReport {
        losses: vec![mse(&pred)],
        ..TrainingReport::default()
    };
    let mut trees: Vec<Tree> = Vec::with_capacity(params.n_trees);
    let mut grad = vec![0.0; n];
    for _ in 0..params.n_trees {
        for i in 0..n {
            grad[i] = pred[i] - data.targets[i];
        }
        let tree = fit_tree(&binned, &rows, &grad, &hess, &tp, &mut r);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += params.learning_rate * tree.predict(data.row(i));
        }
        report.losses.push(mse(&pred));
        trees.push(tree);
    }
    if let Some(w) = constant_warning(&data.targets) {
        log::warn!("{w}");
        report.warnings.push(w);
    }
    Ok(RankModel {
        kind: ModelKind::Gbm,
        mask: data.mask,
        target: target.to_string(),
        n_features: data.n_features,
        seed,
        hyperparameters: serde_json::to_value(params)?,
        report,
        params: ModelParams::Boosted {
            base,
            learning_rate: params.learning_rate,
            trees,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::FeatureMask;
    use crate::rank::tests::toy_data;
    use crate::rank::{TrainingGroup, TrainingRow};

    fn step_data() -> RankData {
        let rows = (0..40)
            .map(|i| TrainingRow {
                product_id: i,
                features: vec![f64::from(i)],
                target: if i < 20 { -1.0 } else { 2.0 },
                grade: 1,
            })
            .collect();
        RankData::new(FeatureMask::ALL, 1, vec![TrainingGroup { query_id: 0, rows }]).unwrap()
    }

    fn r_squared(model: &RankModel, data: &RankData) -> f64 {
        let p = model.predict(data).unwrap();
        let m = crate::util::mean(&data.targets);
        let ss_res: f64 = p.iter().zip(&data.targets).map(|(p, t)| (p - t).powi(2)).sum();
        let ss_tot: f64 = data.targets.iter().map(|t| (t - m).powi(2)).sum();
        1.0 - ss_res / ss_tot
    }

    #[test]
    fn rf_fits_step_function() {
        let data = step_data();
        let p = RfParams {
            n_trees: 30,
            max_depth: 2,
            min_leaf: 1,
            feature_subsample: 1.0,
            ..RfParams::default()
        };
        let m = rf_train(&data, &p, "log_ctr", 3).unwrap();
        assert!(r_squared(&m, &data) >= 0.99);
        assert!(m.report.oob_mse.is_some());
    }

    #[test]
    fn rf_constant_target_constant_prediction() {
        let mut data = toy_data(3, 10);
        data.targets.iter_mut().for_each(|t| *t = 0.7);
        let m = rf_train(&data, &RfParams { n_trees: 5, ..RfParams::default() }, "log_ctr", 1).unwrap();
        assert!(m.predict(&data).unwrap().iter().all(|&p| (p - 0.7).abs() < 1e-12));
        assert_eq!(m.report.warnings.len(), 1);
        let ModelParams::Forest { trees } = &m.params else { panic!() };
        assert!(trees.iter().all(|t| t.n_leaves() == 1));
    }

    #[test]
    fn rf_seed_reproducible() {
        let data = toy_data(4, 12);
        let p = RfParams { n_trees: 10, ..RfParams::default() };
        assert_eq!(rf_train(&data, &p, "t", 9).unwrap(), rf_train(&data, &p, "t", 9).unwrap());
    }

    #[test]
    fn gbm_single_stump_recovers_scaled_step() {
        let data = step_data();
        let p = GbmParams {
            n_trees: 1,
            learning_rate: 0.5,
            max_depth: 1,
            min_leaf: 1,
            ..GbmParams::default()
        };
        let m = gbm_train(&data, &p, "t", 0).unwrap();
        let base = 0.5;
        assert!((m.predict_row(&[0.0]) - (base + 0.5 * (-1.0 - base))).abs() < 1e-12);
        assert!((m.predict_row(&[39.0]) - (base + 0.5 * (2.0 - base))).abs() < 1e-12);
    }

    #[test]
    fn gbm_zero_rate_is_constant() {
        let data = toy_data(3, 10);
        let p = GbmParams { n_trees: 5, learning_rate: 0.0, ..GbmParams::default() };
        let m = gbm_train(&data, &p, "t", 0).unwrap();
        let base = crate::util::mean(&data.targets);
        assert!(m.predict(&data).unwrap().iter().all(|&v| v == base));
    }

    #[test]
    fn gbm_loss_monotone_and_staged_sum() {
        let data = toy_data(5, 20);
        let p = GbmParams { n_trees: 20, learning_rate: 0.3, min_leaf: 2, ..GbmParams::default() };
        let m = gbm_train(&data, &p, "t", 0).unwrap();
        for w in m.report.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let ModelParams::Boosted { base, learning_rate, trees } = &m.params else { panic!() };
        let x = data.row(7);
        for t in 0..=trees.len() {
            let manual = base + learning_rate * trees[..t].iter().map(|tr| tr.predict(x)).sum::<f64>();
            assert!((m.staged_predict_row(x, t) - manual).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_matches_row_by_row() {
        let data = toy_data(4, 9);
        let m = gbm_train(&data, &GbmParams { n_trees: 10, ..GbmParams::default() }, "t", 2).unwrap();
        let batch = m.predict(&data).unwrap();
        for (i, b) in batch.iter().enumerate() {
            assert_eq!(*b, m.predict_row(data.row(i)));
        }
    }
}
