use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{aggregate_window, Catalogue, Counts, DayWindow, ProductId, SessionLog};
use crate::error::{Error, Result};

/// Weights of the min-max normalized product performance signals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineWeights {
    pub ctr: f64,
    pub revenue: f64,
    pub quantity: f64,
    pub inventory: f64,
}

impl Default for BaselineWeights {
    fn default() -> Self {
        Self {
            ctr: 0.4,
            revenue: 0.3,
            quantity: 0.2,
            inventory: 0.1,
        }
    }
}

impl BaselineWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.ctr, self.revenue, self.quantity, self.inventory];
        if w.iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidConfig("baseline weights must be non-negative".into()));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("baseline weights must sum to 1".into()));
        }
        Ok(())
    }
}

/// Popularity score of every catalogue product over one window.
#[derive(Clone, Debug, Default)]
pub struct BaselineScorer {
    scores: BTreeMap<ProductId, f64>,
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

impl BaselineScorer {
    pub fn new(
        catalogue: &Catalogue,
        logs: &[SessionLog],
        window: DayWindow,
        weights: &BaselineWeights,
    ) -> Result<Self> {
        let per_product = aggregate_window(logs, window).per_product();
        Self::from_counts(catalogue, &per_product, weights)
    }

    pub fn from_counts(
        catalogue: &Catalogue,
        per_product: &BTreeMap<ProductId, Counts>,
        weights: &BaselineWeights,
    ) -> Result<Self> {
        weights.validate()?;
        if per_product.is_empty() {
            return Ok(Self::default());
        }
        let products = catalogue.products();
        let get = |id| per_product.get(&id).copied().unwrap_or_default();
        let ctr = min_max(&products.iter().map(|p| get(p.id).ctr()).collect::<Vec<_>>());
        let rev = min_max(&products.iter().map(|p| get(p.id).revenue()).collect::<Vec<_>>());
        let qty = min_max(&products.iter().map(|p| get(p.id).purchases as f64).collect::<Vec<_>>());
        let inv = min_max(&products.iter().map(|p| f64::from(p.inventory)).collect::<Vec<_>>());
        let scores = products
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let s = weights.ctr * ctr[i]
                    + weights.revenue * rev[i]
                    + weights.quantity * qty[i]
                    + weights.inventory * inv[i];
                (p.id, s)
            })
            .collect();
        Ok(Self { scores })
    }

    /// Zero for unknown products and for an empty window.
    pub fn score(&self, product: ProductId) -> f64 {
        self.scores.get(&product).copied().unwrap_or(0.0)
    }
}

/// Blend of max-normalized BM25 and the popularity baseline.
pub fn recall_score(bm25_norm: f64, baseline: f64, alpha: f64) -> f64 {
    alpha * bm25_norm + (1.0 - alpha) * baseline
}

/// Divides by the largest value so the top score is 1 (all zeros stay zero).
pub fn normalize_by_max(values: &mut [f64]) {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
}
