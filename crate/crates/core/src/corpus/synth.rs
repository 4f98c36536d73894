//! Synthetic catalogue and clickstream generator.
//!
//! Every session belongs to a latent query class (the query plus, for broad
//! queries, a hidden brand or article-type preference). The click probability
//! of an impression is `attractiveness(class, product) * bias(position)`, and
//! the generator returns the full table of attractiveness values as the
//! ground-truth oracle.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    Catalogue, Event, Product, ProductId, QueryRecord, RecallIndex, SessionLog, ARTICLE_TYPE,
    BRAND, COLOR, MASTER_CATEGORY,
};
use crate::embed::Synonyms;
use crate::error::{Error, Result};
use crate::segment::SegmentLabel;
use crate::util::{rng, sigmoid, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_products: usize,
    pub n_queries: usize,
    pub broad_fraction: f64,
    pub n_sessions: usize,
    pub days: u32,
    pub n_brands: usize,
    pub types_per_brand: usize,
    /// Share of sessions issued by broad queries.
    pub broad_traffic_share: f64,
    pub broad_zipf: f64,
    pub narrow_zipf: f64,
    /// Impressions per session (browse depth) for each segment.
    pub broad_depth: usize,
    pub narrow_depth: usize,
    /// `bias(i) = 1 / (1 + decay * (i - 1))`.
    pub position_decay: f64,
    pub broad_base_logit: f64,
    pub narrow_base_logit: f64,
    pub broad_appeal_weight: f64,
    pub narrow_appeal_weight: f64,
    pub broad_intent_weight: f64,
    pub narrow_intent_weight: f64,
    /// Logit boost for the hidden per-session preference of broad queries.
    pub preference_weight: f64,
    /// Log-normal noise on the weight of each broad preference class.
    pub class_weight_noise: f64,
    /// Correlation between the broad and narrow appeal of an attribute value.
    pub appeal_correlation: f64,
    pub appeal_scale: f64,
    pub idiosyncratic_scale: f64,
    pub broad_intent_prob: f64,
    pub narrow_intent_prob: f64,
    /// Attribute values each intent word prefers (1 to 4).
    pub intent_attributes: usize,
    pub cart_base_logit: f64,
    pub cart_appeal_scale: f64,
    pub purchase_base_logit: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_products: 5000,
            n_queries: 500,
            broad_fraction: 0.13,
            n_sessions: 200_000,
            days: 30,
            n_brands: 50,
            types_per_brand: 3,
            broad_traffic_share: 0.87,
            broad_zipf: 1.0,
            narrow_zipf: 0.0,
            broad_depth: 48,
            narrow_depth: 32,
            position_decay: 0.04,
            broad_base_logit: -5.0,
            narrow_base_logit: -1.2,
            broad_appeal_weight: 1.0,
            narrow_appeal_weight: 0.7,
            broad_intent_weight: 0.5,
            narrow_intent_weight: 3.0,
            preference_weight: 6.0,
            class_weight_noise: 0.5,
            appeal_correlation: 0.5,
            appeal_scale: 0.5,
            idiosyncratic_scale: 0.3,
            broad_intent_prob: 0.2,
            narrow_intent_prob: 0.8,
            intent_attributes: 3,
            cart_base_logit: -0.8,
            cart_appeal_scale: 0.7,
            purchase_base_logit: 0.4,
        }
    }
}

impl SyntheticConfig {
    pub fn n_broad(&self) -> usize {
        (self.broad_fraction * self.n_queries as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.broad_fraction > 0.0 && self.broad_fraction < 1.0) {
            return bad("broad_fraction must lie strictly inside (0, 1)");
        }
        if !(self.broad_traffic_share > 0.0 && self.broad_traffic_share < 1.0) {
            return bad("broad_traffic_share must lie strictly inside (0, 1)");
        }
        let n_broad = self.n_broad();
        if n_broad == 0 || n_broad >= self.n_queries {
            return bad("broad_fraction leaves one of the segments without queries");
        }
        if self.n_products == 0 || self.n_sessions == 0 || self.days == 0 {
            return bad("n_products, n_sessions and days must be positive");
        }
        if self.n_brands == 0 || self.types_per_brand == 0 {
            return bad("n_brands and types_per_brand must be positive");
        }
        if self.types_per_brand > ARTICLE_TYPES.iter().map(|(_, t)| t.len()).sum::<usize>() {
            return bad("types_per_brand exceeds the number of article types");
        }
        if self.broad_depth == 0 || self.narrow_depth == 0 {
            return bad("browse depths must be positive");
        }
        if !(1..=4).contains(&self.intent_attributes) {
            return bad("intent_attributes must lie in 1..=4");
        }
        if self.position_decay < 0.0 {
            return bad("position_decay must be non-negative");
        }
        Ok(())
    }
}

const ARTICLE_TYPES: [(&str, &[&str]); 2] = [
    (
        "topwear",
        &["tshirt", "shirt", "kurta", "sweater", "jacket", "top", "hoodie", "blazer"],
    ),
    (
        "bottomwear",
        &["jeans", "trousers", "shorts", "skirt", "chinos", "joggers", "leggings", "trackpants"],
    ),
];

const COLORS: &[&str] = &[
    "red", "blue", "black", "white", "green", "yellow", "pink", "grey", "navy", "maroon", "olive",
    "beige",
];

const COMMON_KEYS: [(&str, &[&str]); 4] = [
    (
        "material",
        &["cotton", "polyester", "denim", "linen", "wool", "satin", "viscose", "lycra"],
    ),
    (
        "pattern",
        &["solid", "striped", "printed", "checked", "floral", "colourblocked"],
    ),
    ("fit", &["slim", "regular", "relaxed", "skinny", "oversized"]),
    ("price_band", &["budget", "value", "mid", "premium"]),
];

const TOPWEAR_KEYS: [(&str, &[&str]); 2] = [
    ("neck", &["round", "polo", "vneck", "collar", "hooded"]),
    ("sleeve", &["short", "long", "sleeveless"]),
];

const BOTTOMWEAR_KEYS: [(&str, &[&str]); 2] = [
    ("rise", &["low", "midrise", "high"]),
    ("length", &["full", "cropped", "ankle"]),
];

const PRICE_MULTIPLIER: [f64; 4] = [0.5, 0.8, 1.2, 2.0];
const PURCHASE_BAND_EFFECT: [f64; 4] = [0.6, 0.3, 0.0, -0.6];

const INTENT_WORDS: [(&str, [&str; 2]); 10] = [
    ("party", ["partywear", "celebration"]),
    ("casual", ["everyday", "laidback"]),
    ("sports", ["athletic", "gym"]),
    ("formal", ["smart", "dressy"]),
    ("summer", ["sunny", "beach"]),
    ("winter", ["cold", "snow"]),
    ("office", ["work", "workwear"]),
    ("ethnic", ["traditional", "festive"]),
    ("classic", ["timeless", "heritage"]),
    ("trendy", ["fashionable", "stylish"]),
];

const FILLERS: &[&str] = &["men", "women", "online", "new", "latest", "best", "buy", "sale"];

const TYPE_SYNONYMS: [(&str, &[&str]); 16] = [
    ("tshirt", &["tee", "tees", "tshirts"]),
    ("shirt", &["shirts", "buttondown"]),
    ("kurta", &["tunic", "kurtas"]),
    ("sweater", &["pullover", "jumper"]),
    ("jacket", &["coat", "jackets"]),
    ("top", &["blouse", "tops"]),
    ("hoodie", &["sweatshirt", "hoodies"]),
    ("blazer", &["suitjacket", "blazers"]),
    ("jeans", &["denims"]),
    ("trousers", &["pants", "slacks"]),
    ("shorts", &["bermudas"]),
    ("skirt", &["skirts", "midi"]),
    ("chinos", &["khakis"]),
    ("joggers", &["sweatpants"]),
    ("leggings", &["tights", "jeggings"]),
    ("trackpants", &["trackies", "trackbottoms"]),
];

/// Hidden per-session preference of a broad query class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Preference {
    None,
    Brand(String),
    ArticleType(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassTruth {
    pub preference: Preference,
    pub weight: f64,
    /// Aligned with the owning query's recall set.
    pub attractiveness: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QueryTruth {
    pub query: String,
    pub segment: SegmentLabel,
    pub traffic: f64,
    pub depth: usize,
    pub recall: Vec<ProductId>,
    pub classes: Vec<ClassTruth>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruthOracle {
    pub position_bias: Vec<f64>,
    pub queries: Vec<QueryTruth>,
    /// `(query index, class index)` per session, indexed by `session_id - 1`.
    pub session_class: Vec<(u32, u16)>,
    pub cart_probability: BTreeMap<ProductId, f64>,
    pub purchase_probability: BTreeMap<ProductId, f64>,
    #[serde(skip)]
    query_index: HashMap<String, usize>,
}

impl GroundTruthOracle {
    fn reindex(&mut self) {
        self.query_index = self
            .queries
            .iter()
            .enumerate()
            .map(|(i, q)| (q.query.clone(), i))
            .collect();
    }

    pub fn bias(&self, position: u32) -> f64 {
        let i = (position as usize).saturating_sub(1);
        self.position_bias
            .get(i)
            .copied()
            .unwrap_or(*self.position_bias.last().unwrap_or(&1.0))
    }

    pub fn query(&self, query: &str) -> Option<&QueryTruth> {
        self.query_index.get(query).map(|&i| &self.queries[i])
    }

    pub fn segment_of(&self, query: &str) -> Option<SegmentLabel> {
        self.query(query).map(|q| q.segment)
    }

    pub fn attractiveness(&self, query: usize, class: usize, product: ProductId) -> Option<f64> {
        let q = self.queries.get(query)?;
        let idx = q.recall.binary_search(&product).ok()?;
        Some(q.classes.get(class)?.attractiveness[idx])
    }

    pub fn session_class(&self, session_id: u64) -> Option<(usize, usize)> {
        let &(q, c) = self.session_class.get((session_id as usize).checked_sub(1)?)?;
        Some((q as usize, c as usize))
    }

    /// Probability that the impression at `position` in `session_id` is clicked.
    pub fn click_probability(&self, session_id: u64, product: ProductId, position: u32) -> Option<f64> {
        let (q, c) = self.session_class(session_id)?;
        Some(self.attractiveness(q, c, product)? * self.bias(position))
    }

    /// Expected click-through rate of `product` under `query`, averaged over
    /// classes and over uniformly random display positions.
    pub fn expected_ctr(&self, query: &str, product: ProductId) -> Option<f64> {
        let q = self.query(query)?;
        let idx = q.recall.binary_search(&product).ok()?;
        let shown = q.depth.min(q.recall.len());
        let mean_bias = (1..=shown as u32).map(|p| self.bias(p)).sum::<f64>() / shown as f64;
        let total: f64 = q.classes.iter().map(|c| c.weight).sum();
        let attr: f64 = q
            .classes
            .iter()
            .map(|c| c.weight * c.attractiveness[idx])
            .sum::<f64>()
            / total;
        Some(attr * mean_bias)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub catalogue: Catalogue,
    pub logs: Vec<SessionLog>,
    pub oracle: GroundTruthOracle,
    pub synonyms: Synonyms,
    pub queries: Vec<QueryRecord>,
}

struct World {
    appeal_broad: HashMap<(String, String), f64>,
    appeal_narrow: HashMap<(String, String), f64>,
    cart_appeal: HashMap<(String, String), f64>,
    idiosyncratic: HashMap<ProductId, f64>,
    intents: BTreeMap<&'static str, Vec<(String, String)>>,
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn brand_names(n: usize, rng: &mut Rng, reserved: &BTreeSet<String>) -> Vec<String> {
    const ONSETS: [&str; 14] = ["b", "k", "l", "m", "n", "r", "s", "t", "v", "z", "d", "g", "p", "f"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    const CODAS: [&str; 6] = ["", "n", "r", "x", "l", "s"];
    let mut names = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    let syl = |rng: &mut Rng| {
        format!(
            "{}{}",
            ONSETS[rng.gen_range(0..ONSETS.len())],
            VOWELS[rng.gen_range(0..VOWELS.len())]
        )
    };
    while out.len() < n {
        let name = format!(
            "{}{}{}",
            syl(rng),
            syl(rng),
            CODAS[rng.gen_range(0..CODAS.len())]
        );
        if !reserved.contains(&name) && names.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

fn categorical(weights: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn random_weights(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| normal(rng).exp()).collect()
}

fn keys_for(master: &str) -> Vec<(&'static str, &'static [&'static str])> {
    let mut keys: Vec<(&str, &[&str])> = COMMON_KEYS.to_vec();
    if master == "topwear" {
        keys.extend(TOPWEAR_KEYS);
    } else {
        keys.extend(BOTTOMWEAR_KEYS);
    }
    keys
}

fn build_catalogue(cfg: &SyntheticConfig, rng: &mut Rng) -> Result<(Catalogue, Vec<String>)> {
    let mut reserved: BTreeSet<String> = COLORS.iter().map(|s| s.to_string()).collect();
    for (_, types) in ARTICLE_TYPES {
        reserved.extend(types.iter().map(|s| s.to_string()));
    }
    for (_, vals) in COMMON_KEYS.iter().chain(&TOPWEAR_KEYS).chain(&BOTTOMWEAR_KEYS) {
        reserved.extend(vals.iter().map(|s| s.to_string()));
    }
    for (w, syns) in INTENT_WORDS {
        reserved.insert(w.to_string());
        reserved.extend(syns.iter().map(|s| s.to_string()));
    }
    reserved.extend(FILLERS.iter().map(|s| s.to_string()));
    for (_, syns) in TYPE_SYNONYMS {
        reserved.extend(syns.iter().map(|s| s.to_string()));
    }
    let brands = brand_names(cfg.n_brands, rng, &reserved);

    let all_types: Vec<(&str, &str)> = ARTICLE_TYPES
        .iter()
        .flat_map(|(m, ts)| ts.iter().map(move |t| (*m, *t)))
        .collect();
    let brand_types: Vec<Vec<usize>> = (0..cfg.n_brands)
        .map(|_| {
            let mut idx: Vec<usize> = (0..all_types.len()).collect();
            crate::util::shuffle(&mut idx, rng);
            idx.truncate(cfg.types_per_brand);
            idx.sort_unstable();
            idx
        })
        .collect();

    // Per article type: value preferences for each key and a base price.
    let type_value_weights: Vec<BTreeMap<&str, Vec<f64>>> = all_types
        .iter()
        .map(|(m, _)| {
            let mut w = BTreeMap::new();
            w.insert(COLOR, random_weights(COLORS.len(), rng));
            for (k, vals) in keys_for(m) {
                w.insert(k, random_weights(vals.len(), rng));
            }
            w
        })
        .collect();
    let base_price: Vec<f64> = all_types.iter().map(|_| rng.gen_range(300.0..3000.0)).collect();

    let mut products = Vec::with_capacity(cfg.n_products);
    for id in 1..=cfg.n_products as u32 {
        let b = rng.gen_range(0..cfg.n_brands);
        let t = brand_types[b][rng.gen_range(0..brand_types[b].len())];
        let (master, article) = all_types[t];
        let w = &type_value_weights[t];
        let mut attrs = vec![
            (MASTER_CATEGORY.to_string(), master.to_string()),
            (BRAND.to_string(), brands[b].clone()),
            (ARTICLE_TYPE.to_string(), article.to_string()),
            (
                COLOR.to_string(),
                COLORS[categorical(&w[COLOR], rng)].to_string(),
            ),
        ];
        let mut band = 0;
        for (k, vals) in keys_for(master) {
            let v = categorical(&w[k], rng);
            if k == "price_band" {
                band = v;
            }
            attrs.push((k.to_string(), vals[v].to_string()));
        }
        let noise = (0.15 * normal(rng)).exp();
        let price = (base_price[t] * PRICE_MULTIPLIER[band] * noise * 100.0).round() / 100.0;
        let inventory = rng.gen_range(0..=500);
        products.push(Product::new(id, price.max(1.0), inventory, attrs)?);
    }
    Ok((Catalogue::new(products)?, brands))
}

fn build_world(cfg: &SyntheticConfig, catalogue: &Catalogue, rng: &mut Rng) -> World {
    let mut values: BTreeSet<(String, String)> = BTreeSet::new();
    for p in catalogue.products() {
        for (k, v) in p.attributes() {
            if k != MASTER_CATEGORY {
                values.insert((k.clone(), v.clone()));
            }
        }
    }
    let rho = cfg.appeal_correlation.clamp(-1.0, 1.0);
    let mut appeal_broad = HashMap::new();
    let mut appeal_narrow = HashMap::new();
    let mut cart_appeal = HashMap::new();
    for kv in &values {
        let shared = normal(rng);
        let own = normal(rng);
        appeal_broad.insert(kv.clone(), cfg.appeal_scale * shared);
        appeal_narrow.insert(
            kv.clone(),
            cfg.appeal_scale * (rho * shared + (1.0 - rho * rho).sqrt() * own),
        );
        let cart = if matches!(kv.0.as_str(), "fit" | "material" | "price_band" | "brand") {
            cfg.cart_appeal_scale * normal(rng)
        } else {
            0.0
        };
        cart_appeal.insert(kv.clone(), cart);
    }
    let idiosyncratic = catalogue
        .products()
        .iter()
        .map(|p| (p.id, cfg.idiosyncratic_scale * normal(rng)))
        .collect();
    let intent_keys: Vec<(&str, &[&str])> = std::iter::once((COLOR, COLORS))
        .chain(COMMON_KEYS[..3].iter().copied())
        .collect();
    let mut intents = BTreeMap::new();
    for (word, _) in INTENT_WORDS {
        let mut keys: Vec<usize> = (0..intent_keys.len()).collect();
        crate::util::shuffle(&mut keys, rng);
        let prefs = keys[..cfg.intent_attributes]
            .iter()
            .map(|&k| {
                let (key, vals) = intent_keys[k];
                (key.to_string(), vals[rng.gen_range(0..vals.len())].to_string())
            })
            .collect();
        intents.insert(word, prefs);
    }
    World {
        appeal_broad,
        appeal_narrow,
        cart_appeal,
        idiosyncratic,
        intents,
    }
}

impl World {
    fn appeal(&self, p: &Product, segment: SegmentLabel) -> f64 {
        let table = match segment {
            SegmentLabel::Broad => &self.appeal_broad,
            SegmentLabel::Narrow => &self.appeal_narrow,
        };
        p.attributes()
            .iter()
            .filter_map(|(k, v)| table.get(&(k.clone(), v.clone())))
            .sum::<f64>()
            + self.idiosyncratic[&p.id]
    }

    fn intent_match(&self, words: &[&str], p: &Product) -> f64 {
        let matched: Vec<f64> = words
            .iter()
            .filter_map(|w| self.intents.get(w))
            .map(|prefs| {
                prefs
                    .iter()
                    .filter(|(k, v)| p.attr(k) == Some(v.as_str()))
                    .count() as f64
                    / prefs.len() as f64
            })
            .collect();
        crate::util::mean(&matched)
    }
}

struct QuerySpec {
    text: String,
    segment: SegmentLabel,
    intent: Vec<&'static str>,
    by_brand: bool,
}

fn build_queries(
    cfg: &SyntheticConfig,
    catalogue: &Catalogue,
    index: &RecallIndex,
    brands: &[String],
    rng: &mut Rng,
) -> Result<Vec<(QuerySpec, Vec<ProductId>)>> {
    let mut pairs: BTreeSet<(String, String)> = BTreeSet::new();
    for p in catalogue.products() {
        pairs.insert((p.brand().to_string(), p.article_type().to_string()));
    }
    let pairs: Vec<(String, String)> = pairs.into_iter().collect();
    let types: Vec<&str> = ARTICLE_TYPES.iter().flat_map(|(_, t)| t.iter().copied()).collect();
    let n_broad = cfg.n_broad();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(cfg.n_queries);
    let max_attempts = 200 * cfg.n_queries + 10_000;
    let mut attempts = 0;
    while out.len() < cfg.n_queries {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidConfig(format!(
                "could not generate {} distinct queries from the synthetic vocabulary",
                cfg.n_queries
            )));
        }
        let broad = out.len() < n_broad;
        let mut words: Vec<String> = Vec::new();
        let mut intent = Vec::new();
        let intent_prob = if broad {
            cfg.broad_intent_prob
        } else {
            cfg.narrow_intent_prob
        };
        if rng.gen::<f64>() < intent_prob {
            let w = INTENT_WORDS[rng.gen_range(0..INTENT_WORDS.len())].0;
            intent.push(w);
            words.push(w.to_string());
        }
        let mut by_brand = false;
        if broad {
            if rng.gen::<f64>() < 0.3 {
                by_brand = true;
                words.push(brands[rng.gen_range(0..brands.len())].clone());
            } else {
                words.push(types[rng.gen_range(0..types.len())].to_string());
            }
        } else {
            let (b, t) = &pairs[rng.gen_range(0..pairs.len())];
            words.push(b.clone());
            words.push(t.clone());
        }
        let filler_prob = if broad { 0.5 } else { 0.3 };
        if rng.gen::<f64>() < filler_prob {
            words.push(FILLERS[rng.gen_range(0..FILLERS.len())].to_string());
        }
        let text = words.join(" ");
        if seen.contains(&text) {
            continue;
        }
        let recall = index.recall(&text);
        if recall.is_empty() {
            continue;
        }
        seen.insert(text.clone());
        out.push((
            QuerySpec {
                text,
                segment: if broad {
                    SegmentLabel::Broad
                } else {
                    SegmentLabel::Narrow
                },
                intent,
                by_brand,
            },
            recall,
        ));
    }
    Ok(out)
}

fn zipf_weights(n: usize, s: f64, total: f64, rng: &mut Rng) -> Vec<f64> {
    let mut order: Vec<usize> = (0..n).collect();
    crate::util::shuffle(&mut order, rng);
    let raw: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-s)).collect();
    let z: f64 = raw.iter().sum();
    let mut w = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        w[i] = total * raw[rank] / z;
    }
    w
}

fn build_synonyms() -> Synonyms {
    let mut map = BTreeMap::new();
    for (t, syns) in TYPE_SYNONYMS {
        map.insert(t.to_string(), syns.iter().map(|s| s.to_string()).collect());
    }
    for (w, syns) in INTENT_WORDS {
        map.insert(w.to_string(), syns.iter().map(|s| s.to_string()).collect());
    }
    Synonyms::new(map)
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn sample_cumulative(cum: &[f64], rng: &mut Rng) -> usize {
    let u = rng.gen::<f64>() * cum.last().copied().unwrap_or(0.0);
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

/// Generates a catalogue, session logs and the latent click model behind them.
/// Output is a pure function of `(config, seed)`.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = rng(seed);
    let (catalogue, brands) = build_catalogue(config, &mut rng)?;
    let index = RecallIndex::new(&catalogue);
    let world = build_world(config, &catalogue, &mut rng);
    let specs = build_queries(config, &catalogue, &index, &brands, &mut rng)?;

    let n_broad = config.n_broad();
    let broad_w = zipf_weights(n_broad, config.broad_zipf, config.broad_traffic_share, &mut rng);
    let narrow_w = zipf_weights(
        specs.len() - n_broad,
        config.narrow_zipf,
        1.0 - config.broad_traffic_share,
        &mut rng,
    );

    let mut truths = Vec::with_capacity(specs.len());
    for (i, (spec, recall)) in specs.iter().enumerate() {
        let products: Vec<&Product> = recall
            .iter()
            .map(|id| catalogue.get(*id).expect("recall ids come from the catalogue"))
            .collect();
        let (base, w_app, w_int, depth) = match spec.segment {
            SegmentLabel::Broad => (
                config.broad_base_logit,
                config.broad_appeal_weight,
                config.broad_intent_weight,
                config.broad_depth,
            ),
            SegmentLabel::Narrow => (
                config.narrow_base_logit,
                config.narrow_appeal_weight,
                config.narrow_intent_weight,
                config.narrow_depth,
            ),
        };
        let shared: Vec<f64> = products
            .iter()
            .map(|p| {
                base + w_app * world.appeal(p, spec.segment)
                    + w_int * world.intent_match(&spec.intent, p)
            })
            .collect();
        let prefs: Vec<Preference> = match spec.segment {
            SegmentLabel::Narrow => vec![Preference::None],
            SegmentLabel::Broad if spec.by_brand => products
                .iter()
                .map(|p| p.article_type().to_string())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .map(Preference::ArticleType)
                .collect(),
            SegmentLabel::Broad => products
                .iter()
                .map(|p| p.brand().to_string())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .map(Preference::Brand)
                .collect(),
        };
        let classes = prefs
            .into_iter()
            .map(|pref| {
                let weight = match &pref {
                    Preference::None => 1.0,
                    Preference::Brand(b) => {
                        let a = world.appeal_broad[&(BRAND.to_string(), b.clone())];
                        (2.0 * a + config.class_weight_noise * normal(&mut rng)).exp()
                    }
                    Preference::ArticleType(_) => (config.class_weight_noise * normal(&mut rng)).exp(),
                };
                let attractiveness = products
                    .iter()
                    .zip(&shared)
                    .map(|(p, s)| {
                        let hit = match &pref {
                            Preference::None => false,
                            Preference::Brand(b) => p.brand() == b,
                            Preference::ArticleType(t) => p.article_type() == t,
                        };
                        sigmoid(s + if hit { config.preference_weight } else { 0.0 })
                    })
                    .collect();
                ClassTruth {
                    preference: pref,
                    weight,
                    attractiveness,
                }
            })
            .collect();
        let traffic = if i < n_broad {
            broad_w[i]
        } else {
            narrow_w[i - n_broad]
        };
        truths.push(QueryTruth {
            query: spec.text.clone(),
            segment: spec.segment,
            traffic,
            depth,
            recall: recall.clone(),
            classes,
        });
    }

    let max_depth = config.broad_depth.max(config.narrow_depth);
    let position_bias: Vec<f64> = (0..max_depth)
        .map(|i| 1.0 / (1.0 + config.position_decay * i as f64))
        .collect();

    let mut cart_probability = BTreeMap::new();
    let mut purchase_probability = BTreeMap::new();
    for p in catalogue.products() {
        let cart: f64 = p
            .attributes()
            .iter()
            .filter_map(|(k, v)| world.cart_appeal.get(&(k.clone(), v.clone())))
            .sum();
        cart_probability.insert(p.id, sigmoid(config.cart_base_logit + cart));
        let band = COMMON_KEYS[3]
            .1
            .iter()
            .position(|b| p.attr("price_band") == Some(b))
            .unwrap_or(2);
        purchase_probability.insert(
            p.id,
            sigmoid(config.purchase_base_logit + PURCHASE_BAND_EFFECT[band]),
        );
    }

    let query_cum = cumulative(&truths.iter().map(|q| q.traffic).collect::<Vec<_>>());
    let class_cum: Vec<Vec<f64>> = truths
        .iter()
        .map(|q| cumulative(&q.classes.iter().map(|c| c.weight).collect::<Vec<_>>()))
        .collect();
    let prices: HashMap<ProductId, f64> =
        catalogue.products().iter().map(|p| (p.id, p.price)).collect();
    let mut display: Vec<Vec<usize>> = truths.iter().map(|q| (0..q.recall.len()).collect()).collect();

    let mut logs = Vec::with_capacity(config.n_sessions);
    let mut session_class = Vec::with_capacity(config.n_sessions);
    for s in 0..config.n_sessions {
        let qi = sample_cumulative(&query_cum, &mut rng);
        let ci = sample_cumulative(&class_cum[qi], &mut rng);
        let day = rng.gen_range(0..config.days);
        let truth = &truths[qi];
        let order = &mut display[qi];
        let shown = truth.depth.min(order.len());
        let mut events = Vec::with_capacity(shown);
        for pos in 0..shown {
            let j = rng.gen_range(pos..order.len());
            order.swap(pos, j);
            let idx = order[pos];
            let pid = truth.recall[idx];
            let p_click = truth.classes[ci].attractiveness[idx] * position_bias[pos];
            let clicked = rng.gen::<f64>() < p_click;
            let carted = clicked && rng.gen::<f64>() < cart_probability[&pid];
            let purchased = carted && rng.gen::<f64>() < purchase_probability[&pid];
            events.push(Event {
                product_id: pid,
                position: pos as u32 + 1,
                clicked,
                carted,
                purchased,
                revenue: if purchased { prices[&pid] } else { 0.0 },
            });
        }
        logs.push(SessionLog {
            session_id: s as u64 + 1,
            day,
            query: truth.query.clone(),
            events,
        });
        session_class.push((qi as u32, ci as u16));
    }

    let queries = truths
        .iter()
        .map(|q| QueryRecord::new(q.query.clone(), q.recall.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut oracle = GroundTruthOracle {
        position_bias,
        queries: truths,
        session_class,
        cart_probability,
        purchase_probability,
        query_index: HashMap::new(),
    };
    oracle.reindex();
    Ok(SyntheticDataset {
        catalogue,
        logs,
        oracle,
        synonyms: build_synonyms(),
        queries,
    })
}
