//! Baseline retrieval scoring and the learning-to-rank models.

mod baseline;
mod bm25;
mod ensemble;
mod lambdamart;
mod ranknet;
pub mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::ProductId;
use crate::error::{Error, Result};
use crate::featurize::FeatureMask;
use crate::nn::Mlp;

pub use baseline::{normalize_by_max, recall_score, BaselineScorer, BaselineWeights};
pub use bm25::{bm25, CorpusStats, B as BM25_B, K1 as BM25_K1};
pub use ensemble::{gbm_train, rf_train, GbmParams, RfParams};
pub use lambdamart::{lambda_gradients, lambdamart_train, LambdaMartParams, Lambdas};
pub use ranknet::{
    pair_batches, pairwise_gradient, pairwise_loss, ranknet_pairs, ranknet_train, standardization,
    PairBatch, RankNetParams,
};
use tree::Tree;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRow {
    pub product_id: ProductId,
    pub features: Vec<f64>,
    pub target: f64,
    pub grade: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingGroup {
    pub query_id: u32,
    pub rows: Vec<TrainingRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Group {
    pub query_id: u32,
    pub start: usize,
    pub end: usize,
}

impl Group {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Rows of several query groups, features already restricted to the
/// columns of `mask`.
#[derive(Clone, Debug, PartialEq)]
pub struct RankData {
    pub mask: FeatureMask,
    pub n_features: usize,
    /// Row-major.
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    pub grades: Vec<u8>,
    pub product_ids: Vec<ProductId>,
    pub groups: Vec<Group>,
}

impl RankData {
    pub fn new(mask: FeatureMask, n_features: usize, groups: Vec<TrainingGroup>) -> Result<Self> {
        let mut d = RankData {
            mask,
            n_features,
            features: Vec::new(),
            targets: Vec::new(),
            grades: Vec::new(),
            product_ids: Vec::new(),
            groups: Vec::new(),
        };
        for g in groups {
            let start = d.targets.len();
            for r in g.rows {
                if r.features.len() != n_features {
                    return Err(Error::DimensionMismatch {
                        expected: n_features,
                        actual: r.features.len(),
                    });
                }
                if !r.target.is_finite() || r.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "non-finite value in row for product {}",
                        r.product_id
                    )));
                }
                d.features.extend(r.features);
                d.targets.push(r.target);
                d.grades.push(r.grade);
                d.product_ids.push(r.product_id);
            }
            d.groups.push(Group {
                query_id: g.query_id,
                start,
                end: d.targets.len(),
            });
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[serde(rename = "rf")]
    RandomForest,
    Gbm,
    RankNet,
    LambdaMart,
    Baseline,
}

impl ModelKind {
    pub const LETOR: [ModelKind; 4] = [
        ModelKind::RandomForest,
        ModelKind::Gbm,
        ModelKind::RankNet,
        ModelKind::LambdaMart,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::RandomForest => "rf",
            ModelKind::Gbm => "gbm",
            ModelKind::RankNet => "ranknet",
            ModelKind::LambdaMart => "lambdamart",
            ModelKind::Baseline => "baseline",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rf" => Ok(ModelKind::RandomForest),
            "gbm" => Ok(ModelKind::Gbm),
            "ranknet" => Ok(ModelKind::RankNet),
            "lambdamart" => Ok(ModelKind::LambdaMart),
            "baseline" => Ok(ModelKind::Baseline),
            _ => Err(Error::InvalidInput(format!("unknown model kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelParams {
    /// Mean of the trees.
    Forest { trees: Vec<Tree> },
    /// `base + learning_rate * sum(trees)`.
    Boosted {
        base: f64,
        learning_rate: f64,
        trees: Vec<Tree>,
    },
    /// MLP over standardized inputs.
    Net {
        mean: Vec<f64>,
        scale: Vec<f64>,
        net: Mlp,
    },
}

/// Diagnostics collected during training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub losses: Vec<f64>,
    pub train_ndcg: Vec<f64>,
    pub oob_mse: Option<f64>,
    /// Largest `|sum of lambdas|` over groups, per boosting iteration.
    pub lambda_imbalance: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankModel {
    pub kind: ModelKind,
    pub mask: FeatureMask,
    pub target: String,
    pub n_features: usize,
    pub seed: u64,
    pub hyperparameters: serde_json::Value,
    pub report: TrainingReport,
    pub params: ModelParams,
}

pub const MODEL_MAGIC: &str = "SHOPRANK-MODEL 1";

impl RankModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Forest { trees } => {
                trees.iter().map(|t| t.predict(x)).sum::<f64>() / trees.len().max(1) as f64
            }
            ModelParams::Boosted {
                base,
                learning_rate,
                trees,
            } => base + learning_rate * trees.iter().map(|t| t.predict(x)).sum::<f64>(),
            ModelParams::Net { mean, scale, net } => {
                let z: Vec<f64> = x
                    .iter()
                    .zip(mean.iter().zip(scale))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect();
                let a = ndarray::Array2::from_shape_vec((1, z.len()), z).expect("row shape");
                net.predict(a.view())[[0, 0]]
            }
        }
    }

    /// Prediction after the first `n` boosting stages (all trees otherwise).
    pub fn staged_predict_row(&self, x: &[f64], n: usize) -> f64 {
        match &self.params {
            ModelParams::Boosted {
                base,
                learning_rate,
                trees,
            } => base + learning_rate * trees.iter().take(n).map(|t| t.predict(x)).sum::<f64>(),
            _ => self.predict_row(x),
        }
    }

    pub fn check_mask(&self, mask: FeatureMask, n_features: usize) -> Result<()> {
        if mask != self.mask {
            return Err(Error::MaskMismatch {
                model: self.mask.code(),
                features: mask.code(),
            });
        }
        if n_features != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: n_features,
            });
        }
        Ok(())
    }

    pub fn predict(&self, data: &RankData) -> Result<Vec<f64>> {
        self.check_mask(data.mask, data.n_features)?;
        Ok((0..data.len()).map(|i| self.predict_row(data.row(i))).collect())
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(format!("{MODEL_MAGIC}\n{}\n", serde_json::to_string(self)?))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (head, body) = text.split_once('\n').unwrap_or((text, ""));
        if head.trim_end() != MODEL_MAGIC {
            return Err(Error::ModelFormat(format!(
                "expected header `{MODEL_MAGIC}`, found `{}`",
                head.chars().take(40).collect::<String>()
            )));
        }
        let m: RankModel = serde_json::from_str(body)?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
