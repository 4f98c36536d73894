//! One-hot attribute encoding and the (denoising) autoencoder that compresses
//! it into a 32-dimensional product code.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Catalogue, Product, MASTER_CATEGORY};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Mlp};
use crate::util::{rng, shuffle};

pub const CODE_DIM: usize = 32;

/// Attribute vocabulary of one master category: every key with its sorted values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneHotVocab {
    pub master_category: String,
    pub keys: Vec<(String, Vec<String>)>,
}

impl OneHotVocab {
    pub fn from_catalogue(catalogue: &Catalogue, master_category: &str) -> Self {
        let mut keys: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for p in catalogue
            .products()
            .iter()
            .filter(|p| p.master_category() == master_category)
        {
            for (k, v) in p.attributes() {
                if k != MASTER_CATEGORY {
                    keys.entry(k.clone()).or_default().insert(v.clone());
                }
            }
        }
        Self {
            master_category: master_category.to_string(),
            keys: keys
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.keys.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn names(&self) -> Vec<String> {
        self.keys
            .iter()
            .flat_map(|(k, vs)| vs.iter().map(move |v| format!("{k}={v}")))
            .collect()
    }
}

/// Master categories present in a catalogue, sorted.
pub fn master_categories(catalogue: &Catalogue) -> Vec<String> {
    let set: BTreeSet<&str> = catalogue.products().iter().map(Product::master_category).collect();
    set.into_iter().map(String::from).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneHot {
    pub vector: Vec<f64>,
    /// Keys whose value is missing from the vocabulary.
    pub unknown: Vec<String>,
}

impl OneHot {
    pub fn is_flagged(&self) -> bool {
        !self.unknown.is_empty() || self.vector.iter().all(|x| *x == 0.0)
    }
}

pub fn onehot(product: &Product, vocab: &OneHotVocab) -> Result<OneHot> {
    if product.master_category() != vocab.master_category {
        return Err(Error::InvalidInput(format!(
            "product {} is {} but the vocabulary is {}",
            product.id,
            product.master_category(),
            vocab.master_category
        )));
    }
    let mut vector = vec![0.0; vocab.dim()];
    let mut unknown = Vec::new();
    let mut offset = 0;
    for (key, values) in &vocab.keys {
        if let Some(v) = product.attr(key) {
            match values.binary_search_by(|x| x.as_str().cmp(v)) {
                Ok(i) => vector[offset + i] = 1.0,
                Err(_) => unknown.push(key.clone()),
            }
        }
        offset += values.len();
    }
    for (k, _) in product.attributes() {
        if k != MASTER_CATEGORY && !vocab.keys.iter().any(|(vk, _)| vk == k) {
            unknown.push(k.clone());
        }
    }
    Ok(OneHot { vector, unknown })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaeConfig {
    /// Encoder widths between the input and the code; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Adds uniform `[0, noise_scale)` noise to every input during training.
    pub noise: bool,
    pub noise_scale: f64,
}

impl Default for DaeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 128],
            epochs: 30,
            learning_rate: 1e-3,
            batch_size: 64,
            noise: true,
            noise_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub net: Mlp,
    /// Number of layers up to and including the code layer.
    pub encoder_layers: usize,
    pub noise: bool,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
}

fn build(input_dim: usize, config: &DaeConfig, seed: u64) -> Result<Autoencoder> {
    if input_dim == 0 {
        return Err(Error::InvalidInput("autoencoder input dimension is zero".into()));
    }
    let mut sizes = vec![input_dim];
    sizes.extend(&config.hidden);
    sizes.push(CODE_DIM);
    sizes.extend(config.hidden.iter().rev());
    sizes.push(input_dim);
    let n_layers = sizes.len() - 1;
    let mut acts = vec![Activation::Relu; n_layers];
    acts[n_layers - 1] = Activation::Sigmoid;
    let mut r = rng(seed);
    Ok(Autoencoder {
        net: Mlp::new(&sizes, &acts, &mut r),
        encoder_layers: config.hidden.len() + 1,
        noise: config.noise,
        losses: Vec::new(),
    })
}

/// The network `dae_train` would start from, before any update.
pub fn untrained_autoencoder(input_dim: usize, config: &DaeConfig, seed: u64) -> Result<Autoencoder> {
    build(input_dim, config, crate::util::derive_seed(seed, "init"))
}

fn to_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

fn bce(out: &Array2<f64>, target: &Array2<f64>) -> f64 {
    const CLIP: f64 = 1e-12;
    let mut total = 0.0;
    ndarray::Zip::from(out).and(target).for_each(|&a, &y| {
        let a = a.clamp(CLIP, 1.0 - CLIP);
        total -= y * a.ln() + (1.0 - y) * (1.0 - a).ln();
    });
    total / out.len().max(1) as f64
}

pub fn dae_train(onehots: &[Vec<f64>], config: &DaeConfig, seed: u64) -> Result<Autoencoder> {
    let distinct: BTreeSet<Vec<u64>> = onehots
        .iter()
        .map(|v| v.iter().map(|x| x.to_bits()).collect())
        .collect();
    if distinct.len() < CODE_DIM {
        return Err(Error::InvalidInput(format!(
            "autoencoder needs at least {CODE_DIM} distinct inputs, got {}",
            distinct.len()
        )));
    }
    let dim = onehots[0].len();
    if let Some(v) = onehots.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: v.len(),
        });
    }
    let mut model = untrained_autoencoder(dim, config, seed)?;
    let mut opt = Adam::new(&model.net, config.learning_rate);
    let mut r = rng(crate::util::derive_seed(seed, "batches"));
    let data = to_matrix(onehots);
    let mut order: Vec<usize> = (0..onehots.len()).collect();
    let batch = config.batch_size.max(1);
    for epoch in 0..config.epochs {
        shuffle(&mut order, &mut r);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let clean = data.select(Axis(0), chunk);
            let mut input = clean.clone();
            if config.noise {
                input.mapv_inplace(|x| x + r.gen::<f64>() * config.noise_scale);
            }
            let acts = model.net.forward(input.view());
            let out = acts.last().unwrap();
            epoch_loss += bce(out, &clean) * chunk.len() as f64;
            // sigmoid output with mean cross-entropy: delta = (a - y) / count
            let delta = (out - &clean) / out.len() as f64;
            let grads = model.net.backward(&acts, delta);
            opt.step(&mut model.net, &grads);
        }
        let loss = epoch_loss / onehots.len() as f64;
        if !loss.is_finite() || !model.net.all_finite() {
            return Err(Error::Divergence(format!(
                "autoencoder loss is {loss} at epoch {} (lr {}, batch {batch})",
                epoch + 1,
                config.learning_rate
            )));
        }
        model.losses.push(loss);
    }
    Ok(model)
}

impl Autoencoder {
    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn encode_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for x in inputs {
            self.check(x)?;
        }
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let acts = self.net.forward_n(to_matrix(inputs).view(), self.encoder_layers);
        Ok(acts.last().unwrap().outer_iter().map(|r| r.to_vec()).collect())
    }

    pub fn reconstruct_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for x in inputs {
            self.check(x)?;
        }
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.net.predict(to_matrix(inputs).view());
        Ok(out.outer_iter().map(|r| r.to_vec()).collect())
    }

    /// Mean per-dimension cross-entropy of reconstructing `targets` from `inputs`.
    pub fn reconstruction_loss(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
        let out = to_matrix(&self.reconstruct_batch(inputs)?);
        Ok(bce(&out, &to_matrix(targets)))
    }

    /// Fraction of bits of `targets` matched by thresholding the
    /// reconstruction of `inputs` at 0.5.
    pub fn bit_accuracy(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
        let out = self.reconstruct_batch(inputs)?;
        let mut hits = 0usize;
        let mut total = 0usize;
        for (o, t) in out.iter().zip(targets) {
            for (a, y) in o.iter().zip(t) {
                hits += usize::from((*a >= 0.5) == (*y >= 0.5));
                total += 1;
            }
        }
        Ok(hits as f64 / total.max(1) as f64)
    }
}

/// Noise-free forward pass through the encoder.
pub fn dae_encode(model: &Autoencoder, onehot: &[f64]) -> Result<Vec<f64>> {
    Ok(model.encode_batch(&[onehot.to_vec()])?.pop().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Catalogue, Product};

    fn product(id: u32, attrs: &[(&str, &str)]) -> Product {
        let attrs = attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Product::new(id, 10.0, 1, attrs).unwrap()
    }

    fn catalogue() -> Catalogue {
        Catalogue::new(vec![
            product(1, &[("brand", "a"), ("article_type", "tee"), ("color", "red"), ("master_category", "top")]),
            product(2, &[("brand", "b"), ("article_type", "tee"), ("color", "blue"), ("fit", "slim"), ("master_category", "top")]),
            product(3, &[("brand", "c"), ("article_type", "jeans"), ("color", "red"), ("master_category", "bottom")]),
        ])
        .unwrap()
    }

    #[test]
    fn onehot_sets_one_bit_per_key() {
        let c = catalogue();
        let vocab = OneHotVocab::from_catalogue(&c, "top");
        assert_eq!(vocab.dim(), 2 + 1 + 2 + 1);
        let oh = onehot(c.get(1).unwrap(), &vocab).unwrap();
        assert_eq!(oh.vector.iter().sum::<f64>(), 3.0);
        assert!(!oh.is_flagged());
        assert!(onehot(c.get(3).unwrap(), &vocab).is_err());
    }

    #[test]
    fn unknown_values_are_flagged() {
        let c = catalogue();
        let vocab = OneHotVocab::from_catalogue(&c, "top");
        let p = product(9, &[("brand", "zzz"), ("article_type", "tee"), ("color", "red"), ("master_category", "top")]);
        let oh = onehot(&p, &vocab).unwrap();
        assert_eq!(oh.unknown, vec!["brand".to_string()]);
        assert_eq!(oh.vector.iter().sum::<f64>(), 2.0);
        let empty = OneHotVocab {
            master_category: "top".into(),
            keys: vec![("brand".into(), vec!["q".into()])],
        };
        assert!(onehot(c.get(1).unwrap(), &empty).unwrap().is_flagged());
    }

    fn basis(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
            .collect()
    }

    fn small() -> DaeConfig {
        DaeConfig {
            hidden: vec![48, 40],
            epochs: 400,
            learning_rate: 3e-3,
            batch_size: 8,
            noise: false,
            noise_scale: 1.0,
        }
    }

    #[test]
    fn basis_patterns_reconstruct() {
        let x = basis(32);
        let m = dae_train(&x, &small(), 1).unwrap();
        assert!(m.bit_accuracy(&x, &x).unwrap() >= 0.95);
        let code = dae_encode(&m, &x[0]).unwrap();
        assert_eq!(code.len(), CODE_DIM);
    }

    #[test]
    fn noisy_variant_trains_and_is_deterministic() {
        let x = basis(32);
        let cfg = DaeConfig { noise: true, epochs: 20, ..small() };
        let a = dae_train(&x, &cfg, 4).unwrap();
        let b = dae_train(&x, &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.losses.last().unwrap() < &a.losses[0]);
    }

    #[test]
    fn identical_inputs_identical_codes() {
        let x = basis(32);
        let cfg = DaeConfig { epochs: 2, ..small() };
        let m = dae_train(&x, &cfg, 2).unwrap();
        assert_eq!(dae_encode(&m, &x[3]).unwrap(), dae_encode(&m, &x[3]).unwrap());
        assert!(dae_encode(&m, &[1.0]).is_err());
    }

    #[test]
    fn too_few_distinct_inputs_rejected() {
        let x = vec![vec![1.0, 0.0]; 100];
        assert!(dae_train(&x, &small(), 0).is_err());
    }
}
