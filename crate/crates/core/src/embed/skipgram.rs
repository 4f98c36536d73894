//! Skip-gram with negative sampling over session documents.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{EmbeddingTable, SessionDocument};
use crate::error::{Error, Result};
use crate::util::{rng, shuffle, sigmoid, softplus, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub min_count: usize,
    pub learning_rate: f64,
    /// Train on a seeded sample of at most this many documents (0 = all).
    pub max_documents: usize,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            window: 10,
            negatives: 5,
            epochs: 3,
            min_count: 2,
            learning_rate: 0.025,
            max_documents: 15_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SkipGramModel {
    pub table: EmbeddingTable,
    /// Mean negative-sampling loss on the held-out documents after each epoch.
    pub heldout_losses: Vec<f64>,
    /// Tokens dropped by the min-count filter.
    pub dropped: Vec<String>,
}

struct Noise {
    cumulative: Vec<f64>,
}

impl Noise {
    fn new(counts: &[usize]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        Self { cumulative }
    }

    fn sample(&self, rng: &mut Rng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

struct Params {
    dim: usize,
    input: Vec<f64>,
    output: Vec<f64>,
}

impl Params {
    fn score(&self, center: usize, context: usize) -> f64 {
        let d = self.dim;
        let a = &self.input[center * d..(center + 1) * d];
        let b = &self.output[context * d..(context + 1) * d];
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// One positive pair plus its negatives.
    fn update(&mut self, center: usize, targets: &[(usize, f64)], lr: f64, grad: &mut [f64]) {
        let d = self.dim;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &(t, label) in targets {
            let s = self.score(center, t);
            let g = lr * (label - sigmoid(s));
            let (ci, ti) = (center * d, t * d);
            for k in 0..d {
                grad[k] += g * self.output[ti + k];
                self.output[ti + k] += g * self.input[ci + k];
            }
        }
        let ci = center * d;
        for k in 0..d {
            self.input[ci + k] += grad[k];
        }
    }
}

fn windows(doc: &[usize], window: usize, mut f: impl FnMut(usize, usize)) {
    for i in 0..doc.len() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(doc.len());
        for j in lo..hi {
            if j != i {
                f(doc[i], doc[j]);
            }
        }
    }
}

pub fn skipgram_train(
    docs: &[SessionDocument],
    config: &SkipGramConfig,
    seed: u64,
) -> Result<SkipGramModel> {
    if docs.is_empty() {
        return Err(Error::InvalidInput("skip-gram needs at least one document".into()));
    }
    if config.dim == 0 || config.window == 0 {
        return Err(Error::InvalidConfig("skip-gram dim and window must be positive".into()));
    }
    let mut rng = rng(seed);

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        for t in &doc.tokens {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let dropped: Vec<String> = counts
        .iter()
        .filter(|(_, c)| **c < config.min_count)
        .map(|(t, _)| t.to_string())
        .collect();
    let vocab: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= config.min_count)
        .collect();
    if vocab.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "skip-gram vocabulary has {} tokens after min-count filtering",
            vocab.len()
        )));
    }
    let index: BTreeMap<&str, usize> = vocab.iter().enumerate().map(|(i, (t, _))| (*t, i)).collect();
    let noise = Noise::new(&vocab.iter().map(|(_, c)| *c).collect::<Vec<_>>());

    let mut encoded: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| d.tokens.iter().filter_map(|t| index.get(t.as_str()).copied()).collect::<Vec<_>>())
        .filter(|d| d.len() >= 2)
        .collect();
    if encoded.is_empty() {
        return Err(Error::InvalidInput("no document has two in-vocabulary tokens".into()));
    }
    shuffle(&mut encoded, &mut rng);
    if config.max_documents > 0 && encoded.len() > config.max_documents {
        encoded.truncate(config.max_documents);
    }
    let n_held = (encoded.len() / 100).max(1);
    let heldout: Vec<Vec<usize>> = if encoded.len() > 1 {
        encoded.split_off(encoded.len() - n_held)
    } else {
        encoded.clone()
    };

    // fixed negatives for the held-out loss so epochs are comparable
    let mut eval_pairs: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
    for doc in &heldout {
        windows(doc, config.window, |c, t| {
            let mut targets = vec![(t, 1.0)];
            for _ in 0..config.negatives {
                targets.push((noise.sample(&mut rng), 0.0));
            }
            eval_pairs.push((c, targets));
        });
    }

    let d = config.dim;
    let v = vocab.len();
    let mut params = Params {
        dim: d,
        input: (0..v * d).map(|_| (rng.gen::<f64>() - 0.5) / d as f64).collect(),
        output: vec![0.0; v * d],
    };
    let heldout_loss = |p: &Params| -> f64 {
        let mut total = 0.0;
        for (c, targets) in &eval_pairs {
            for &(t, label) in targets {
                let s = p.score(*c, t);
                total += if label > 0.0 { softplus(-s) } else { softplus(s) };
            }
        }
        total / eval_pairs.len().max(1) as f64
    };

    let total_steps = (config.epochs * encoded.len()).max(1) as f64;
    let mut step = 0usize;
    let mut grad = vec![0.0; d];
    let mut targets = Vec::with_capacity(config.negatives + 1);
    let mut heldout_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    for epoch in 0..config.epochs {
        shuffle(&mut order, &mut rng);
        for &di in &order {
            let lr = config.learning_rate * (1.0 - step as f64 / total_steps).max(1e-4);
            step += 1;
            let mut doc = encoded[di].clone();
            shuffle(&mut doc, &mut rng);
            let mut pairs = Vec::new();
            windows(&doc, config.window, |c, t| pairs.push((c, t)));
            for (c, t) in pairs {
                targets.clear();
                targets.push((t, 1.0));
                for _ in 0..config.negatives {
                    let n = noise.sample(&mut rng);
                    if n != t {
                        targets.push((n, 0.0));
                    }
                }
                params.update(c, &targets, lr, &mut grad);
            }
        }
        let loss = heldout_loss(&params);
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "skip-gram held-out loss is {loss} after epoch {}",
                epoch + 1
            )));
        }
        heldout_losses.push(loss);
    }

    let mut table = EmbeddingTable::new(d)?;
    for (i, (token, _)) in vocab.iter().enumerate() {
        table.insert(*token, params.input[i * d..(i + 1) * d].to_vec())?;
    }
    Ok(SkipGramModel {
        table,
        heldout_losses,
        dropped,
    })
}
