//! Feature families (query, query-product, popularity, physical), targets,
//! pruning and the feature matrix file.

mod autoencoder;
mod matrix;
mod popularity;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Counts;
use crate::error::{Error, Result};

pub use autoencoder::{
    dae_encode, dae_train, master_categories, onehot, untrained_autoencoder, Autoencoder,
    DaeConfig, OneHot, OneHotVocab, CODE_DIM,
};
pub use matrix::{FeatureMatrix, FeatureRow};
pub use popularity::{
    entity_popularity, entity_popularity_from, qp_popularity, Entity, EntityPopularity,
    Popularity, QpPopularity,
};

pub const EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Block {
    Query,
    QueryProduct,
    Popularity,
    Physical,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::Query, Block::QueryProduct, Block::Popularity, Block::Physical];

    pub fn prefix(self) -> &'static str {
        match self {
            Block::Query => "Q",
            Block::QueryProduct => "QP",
            Block::Popularity => "POP",
            Block::Physical => "PHYS",
        }
    }
}

/// Which of the four blocks a model sees, written as e.g. `YNYY`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FeatureMask([bool; 4]);

impl FeatureMask {
    pub const ALL: FeatureMask = FeatureMask([true; 4]);

    pub fn new(flags: [bool; 4]) -> Result<Self> {
        if !flags.iter().any(|f| *f) {
            return Err(Error::InvalidInput("feature mask must keep at least one block".into()));
        }
        Ok(Self(flags))
    }

    pub fn includes(self, block: Block) -> bool {
        self.0[block as usize]
    }

    pub fn code(self) -> String {
        self.0.iter().map(|f| if *f { 'Y' } else { 'N' }).collect()
    }

    /// The five combinations compared in the ablation grid.
    pub fn ablation_masks() -> Vec<FeatureMask> {
        ["YNNY", "NYYN", "YNYY", "YYYN", "YYYY"]
            .iter()
            .map(|c| c.parse().expect("valid mask"))
            .collect()
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl FromStr for FeatureMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 4 {
            return Err(Error::InvalidInput(format!("mask `{s}` must have 4 letters")));
        }
        let mut flags = [false; 4];
        for (f, c) in flags.iter_mut().zip(&chars) {
            *f = match c {
                'Y' | 'y' => true,
                'N' | 'n' => false,
                _ => return Err(Error::InvalidInput(format!("mask `{s}` may only use Y and N"))),
            };
        }
        Self::new(flags)
    }
}

impl TryFrom<String> for FeatureMask {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureMask> for String {
    fn from(m: FeatureMask) -> String {
        m.code()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureVector {
    pub query_block: Vec<f64>,
    pub qp_block: Vec<f64>,
    pub pop_block: Vec<f64>,
    pub phys_block: Vec<f64>,
}

impl FeatureVector {
    pub fn block(&self, b: Block) -> &[f64] {
        match b {
            Block::Query => &self.query_block,
            Block::QueryProduct => &self.qp_block,
            Block::Popularity => &self.pop_block,
            Block::Physical => &self.phys_block,
        }
    }

    pub fn concat(&self) -> Vec<f64> {
        Block::ALL.iter().flat_map(|b| self.block(*b).iter().copied()).collect()
    }
}

/// Full-width vector with excluded blocks zeroed, plus a per-column flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Assembled {
    pub values: Vec<f64>,
    pub included: Vec<bool>,
}

impl Assembled {
    /// Only the included columns, for models that drop excluded ones.
    pub fn kept(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.included)
            .filter(|(_, k)| **k)
            .map(|(v, _)| *v)
            .collect()
    }
}

pub fn assemble(mask: FeatureMask, features: &FeatureVector) -> Assembled {
    let mut values = Vec::new();
    let mut included = Vec::new();
    for b in Block::ALL {
        let keep = mask.includes(b);
        for v in features.block(b) {
            values.push(if keep { *v } else { 0.0 });
            included.push(keep);
        }
    }
    Assembled { values, included }
}

/// Column names grouped by block.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureLayout {
    pub blocks: [Vec<String>; 4],
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn names(&self) -> Vec<String> {
        Block::ALL
            .iter()
            .flat_map(|b| {
                self.blocks[*b as usize]
                    .iter()
                    .map(move |n| format!("{}.{n}", b.prefix()))
            })
            .collect()
    }

    /// Indices of the columns kept by `mask`.
    pub fn columns(&self, mask: FeatureMask) -> Vec<usize> {
        let mut out = Vec::new();
        let mut offset = 0;
        for b in Block::ALL {
            let n = self.blocks[b as usize].len();
            if mask.includes(b) {
                out.extend(offset..offset + n);
            }
            offset += n;
        }
        out
    }

    pub fn split(&self, row: &[f64]) -> FeatureVector {
        let mut offset = 0;
        let mut take = |n: usize| {
            let s = row[offset..offset + n].to_vec();
            offset += n;
            s
        };
        FeatureVector {
            query_block: take(self.blocks[0].len()),
            qp_block: take(self.blocks[1].len()),
            pop_block: take(self.blocks[2].len()),
            phys_block: take(self.blocks[3].len()),
        }
    }
}

/// Funnel counts with the derived ratios. `atcr` is undefined without clicks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetRow {
    pub impressions: u64,
    pub clicks: u64,
    pub carts: u64,
    pub purchases: u64,
    pub revenue: f64,
    pub ctr: f64,
    pub atcr: Option<f64>,
    /// Carts over impressions.
    pub conv: f64,
    /// Purchases over impressions.
    pub purchase_rate: f64,
    pub rpi: f64,
    pub epsilon: f64,
}

pub fn compute_targets(counts: &Counts, epsilon: f64) -> Result<TargetRow> {
    if counts.impressions == 0 {
        return Err(Error::InvalidInput("targets need at least one impression".into()));
    }
    let i = counts.impressions as f64;
    Ok(TargetRow {
        impressions: counts.impressions,
        clicks: counts.clicks,
        carts: counts.carts,
        purchases: counts.purchases,
        revenue: counts.revenue(),
        ctr: counts.clicks as f64 / i,
        atcr: (counts.clicks > 0).then(|| counts.carts as f64 / counts.clicks as f64),
        conv: counts.carts as f64 / i,
        purchase_rate: counts.purchases as f64 / i,
        rpi: counts.revenue() / i,
        epsilon,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Target {
    Ctr,
    Atcr,
    Conv,
    Rpi,
}

impl Target {
    pub const ALL: [Target; 4] = [Target::Ctr, Target::Atcr, Target::Conv, Target::Rpi];

    pub fn name(self) -> &'static str {
        match self {
            Target::Ctr => "log_ctr",
            Target::Atcr => "log_atcr",
            Target::Conv => "log_conv",
            Target::Rpi => "log_rpi",
        }
    }

    /// The untransformed ratio; `None` for ATCR without clicks.
    pub fn metric(self, row: &TargetRow) -> Option<f64> {
        match self {
            Target::Ctr => Some(row.ctr),
            Target::Atcr => row.atcr,
            Target::Conv => Some(row.conv),
            Target::Rpi => Some(row.rpi),
        }
    }

    /// `ln(max(ratio, epsilon))`.
    pub fn value(self, row: &TargetRow) -> Option<f64> {
        self.metric(row).map(|m| m.max(row.epsilon).ln())
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.strip_prefix("log_").unwrap_or(s);
        match s {
            "ctr" => Ok(Target::Ctr),
            "atcr" => Ok(Target::Atcr),
            "conv" => Ok(Target::Conv),
            "rpi" => Ok(Target::Rpi),
            _ => Err(Error::InvalidInput(format!("unknown target `{s}`"))),
        }
    }
}

impl TryFrom<String> for Target {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Target> for String {
    fn from(t: Target) -> String {
        t.name().to_string()
    }
}

/// Keeps rows with `min <= impressions <= max`.
pub fn prune(rows: Vec<FeatureRow>, min_impressions: u64, max_impressions: u64) -> Result<Vec<FeatureRow>> {
    if min_impressions >= max_impressions {
        return Err(Error::InvalidInput(format!(
            "prune needs min < max, got {min_impressions} >= {max_impressions}"
        )));
    }
    Ok(rows
        .into_iter()
        .filter(|r| (min_impressions..=max_impressions).contains(&r.counts.impressions))
        .collect())
}

/// Upper prune bound: the given quantile of impression counts, rounded up.
pub fn impression_cap(impressions: &[u64], quantile: f64) -> u64 {
    if impressions.is_empty() {
        return u64::MAX;
    }
    let xs: Vec<f64> = impressions.iter().map(|&i| i as f64).collect();
    crate::util::quantile(&xs, quantile).ceil() as u64
}

pub fn relevance_score(query_vec: &[f64], product_vec: &[f64]) -> Result<f64> {
    if query_vec.len() != product_vec.len() {
        return Err(Error::DimensionMismatch {
            expected: query_vec.len(),
            actual: product_vec.len(),
        });
    }
    Ok(crate::util::dot(query_vec, product_vec))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trip_and_validation() {
        let m: FeatureMask = "YNYY".parse().unwrap();
        assert!(m.includes(Block::Query) && !m.includes(Block::QueryProduct));
        assert_eq!(m.to_string(), "YNYY");
        assert!("NNNN".parse::<FeatureMask>().is_err());
        assert!("YNY".parse::<FeatureMask>().is_err());
        assert!("YNYX".parse::<FeatureMask>().is_err());
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, "\"YNYY\"");
        assert_eq!(serde_json::from_str::<FeatureMask>(&json).unwrap(), m);
    }

    fn fv() -> FeatureVector {
        FeatureVector {
            query_block: vec![1.0, 2.0],
            qp_block: vec![3.0],
            pop_block: vec![4.0, 5.0],
            phys_block: vec![6.0],
        }
    }

    #[test]
    fn assemble_zeroes_excluded_blocks() {
        let a = assemble("YNNY".parse().unwrap(), &fv());
        assert_eq!(a.values, vec![1.0, 2.0, 0.0, 0.0, 0.0, 6.0]);
        assert_eq!(a.kept(), vec![1.0, 2.0, 6.0]);
        let b = assemble("NYYN".parse().unwrap(), &fv());
        assert_eq!(b.kept(), vec![3.0, 4.0, 5.0]);
        let c = assemble(FeatureMask::ALL, &fv());
        assert_eq!(c.values, fv().concat());
    }

    #[test]
    fn layout_columns_match_assembly() {
        let layout = FeatureLayout {
            blocks: [
                vec!["a".into(), "b".into()],
                vec!["c".into()],
                vec!["d".into(), "e".into()],
                vec!["f".into()],
            ],
        };
        for m in FeatureMask::ablation_masks() {
            let cols = layout.columns(m);
            let full = fv().concat();
            let picked: Vec<f64> = cols.iter().map(|&c| full[c]).collect();
            assert_eq!(picked, assemble(m, &fv()).kept());
        }
        assert_eq!(layout.names()[2], "QP.c");
        assert_eq!(layout.split(&fv().concat()), fv());
    }

    fn counts(i: u64, c: u64, b: u64, q: u64, r: f64) -> Counts {
        Counts {
            impressions: i,
            clicks: c,
            carts: b,
            purchases: q,
            revenue_micros: (r * 1e6) as i64,
        }
    }

    #[test]
    fn target_ratios() {
        let t = compute_targets(&counts(10, 5, 0, 0, 0.0), EPSILON).unwrap();
        assert_eq!(t.ctr, 0.5);
        assert!((Target::Ctr.value(&t).unwrap() + 0.693_147_180_559_945_3).abs() < 1e-12);
        let t = compute_targets(&counts(4, 2, 1, 1, 8.0), EPSILON).unwrap();
        assert_eq!(t.atcr, Some(0.5));
        assert_eq!(t.conv, 0.25);
        assert_eq!(t.rpi, 2.0);
        assert_eq!(t.purchase_rate, 0.25);
        let t = compute_targets(&counts(4, 0, 0, 0, 0.0), EPSILON).unwrap();
        assert_eq!(t.atcr, None);
        assert_eq!(Target::Atcr.value(&t), None);
        assert_eq!(Target::Ctr.value(&t), Some(EPSILON.ln()));
        assert!(compute_targets(&Counts::default(), EPSILON).is_err());
    }

    #[test]
    fn target_names_parse() {
        for t in Target::ALL {
            assert_eq!(t.name().parse::<Target>().unwrap(), t);
        }
        assert!("log_foo".parse::<Target>().is_err());
    }

    fn row(i: u64) -> FeatureRow {
        FeatureRow {
            query_id: 0,
            product_id: i as u32,
            features: vec![],
            counts: counts(i, 0, 0, 0, 0.0),
        }
    }

    #[test]
    fn prune_bounds() {
        let rows = vec![row(4), row(5), row(10_000), row(100_000)];
        let kept = prune(rows, 5, 10_000).unwrap();
        assert_eq!(kept.iter().map(|r| r.counts.impressions).collect::<Vec<_>>(), vec![5, 10_000]);
        assert!(prune(vec![], 5, 5).is_err());
    }

    #[test]
    fn relevance_is_dot() {
        assert_eq!(relevance_score(&[0.6, 0.8], &[0.6, 0.8]).unwrap(), 1.0);
        assert_eq!(relevance_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(relevance_score(&[1.0], &[1.0, 2.0]).is_err());
    }
}
