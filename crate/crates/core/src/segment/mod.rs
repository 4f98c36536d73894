//! Broad/narrow query segmentation: coherency scores over click embeddings,
//! threshold labels, query attribute features and an RBF-kernel SVM.

mod svm;

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, AttributeVocab, Catalogue, QueryRecord};
use crate::embed::{query_vector, EmbeddingTable};
use crate::error::{Error, Result};
use crate::util::{dot, fmt6, median};

pub use svm::{
    select_svm_params, svm_predict, svm_train, SvmModel, SvmParams, C_GRID, GAMMA_GRID,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentLabel {
    Broad,
    Narrow,
}

impl SegmentLabel {
    pub const ALL: [SegmentLabel; 2] = [SegmentLabel::Broad, SegmentLabel::Narrow];

    pub fn as_str(self) -> &'static str {
        match self {
            SegmentLabel::Broad => "broad",
            SegmentLabel::Narrow => "narrow",
        }
    }

    /// `+1` for broad, `-1` for narrow.
    pub fn sign(self) -> f64 {
        match self {
            SegmentLabel::Broad => 1.0,
            SegmentLabel::Narrow => -1.0,
        }
    }
}

impl fmt::Display for SegmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SegmentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "broad" => Ok(SegmentLabel::Broad),
            "narrow" => Ok(SegmentLabel::Narrow),
            _ => Err(Error::InvalidInput(format!("unknown segment label `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Scores at or below this are broad.
    pub threshold: f64,
    /// Training labels: at or below `broad_max` is broad, above `narrow_min` narrow.
    pub broad_max: f64,
    pub narrow_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            threshold: 0.58,
            broad_max: 0.3,
            narrow_min: 0.7,
        }
    }
}

impl Thresholds {
    pub fn label(&self, score: f64) -> SegmentLabel {
        if score <= self.threshold {
            SegmentLabel::Broad
        } else {
            SegmentLabel::Narrow
        }
    }

    pub fn heuristic(&self, score: f64) -> Option<SegmentLabel> {
        if score <= self.broad_max {
            Some(SegmentLabel::Broad)
        } else if score > self.narrow_min {
            Some(SegmentLabel::Narrow)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.broad_max > self.narrow_min {
            return Err(Error::InvalidConfig(
                "heuristic broad_max must not exceed narrow_min".into(),
            ));
        }
        Ok(())
    }
}

/// Training label rule: `<= 0.3` broad, `> 0.7` narrow, otherwise filtered out.
pub fn heuristic_label(score: f64) -> Option<SegmentLabel> {
    Thresholds::default().heuristic(score)
}

/// `<= 0.58` broad, otherwise narrow.
pub fn threshold_label(score: f64) -> SegmentLabel {
    Thresholds::default().label(score)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherencyResult {
    pub query: String,
    pub centroid: Vec<f64>,
    pub score: f64,
    pub recall_set_size: usize,
}

const UNIT_TOLERANCE: f64 = 1e-6;

/// Median inner product of each vector with the (un-normalized) mean vector.
pub fn coherency_score<V: AsRef<[f64]>>(recall_vectors: &[V]) -> Result<CoherencyResult> {
    let Some(first) = recall_vectors.first() else {
        return Err(Error::InvalidInput("coherency of an empty recall set".into()));
    };
    let dim = first.as_ref().len();
    let mut centroid = vec![0.0; dim];
    for v in recall_vectors {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        if (dot(v, v).sqrt() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidInput("coherency needs unit-norm vectors".into()));
        }
        for (c, x) in centroid.iter_mut().zip(v) {
            *c += x;
        }
    }
    let n = recall_vectors.len() as f64;
    centroid.iter_mut().for_each(|c| *c /= n);
    let dots: Vec<f64> = recall_vectors
        .iter()
        .map(|v| dot(v.as_ref(), &centroid))
        .collect();
    Ok(CoherencyResult {
        query: String::new(),
        centroid,
        score: median(&dots),
        recall_set_size: recall_vectors.len(),
    })
}

/// Coherency of a query's recall set, skipping products without a click
/// embedding. Returns `None` when no recall product has one.
pub fn score_query(record: &QueryRecord, products: &EmbeddingTable) -> Result<Option<CoherencyResult>> {
    let vectors: Vec<&[f64]> = record
        .recall_set()
        .iter()
        .filter_map(|p| products.get(&p.to_string()))
        .filter(|v| v.iter().any(|x| *x != 0.0))
        .collect();
    if vectors.is_empty() {
        return Ok(None);
    }
    let mut r = coherency_score(&vectors)?;
    r.query = record.query.clone();
    r.recall_set_size = record.recall_set_size();
    Ok(Some(r))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryFeatures {
    pub embedding: Vec<f64>,
    pub recall_set_size: usize,
    pub char_length: usize,
    pub word_count: usize,
    pub has_brand: bool,
    pub has_article_type: bool,
    pub has_color: bool,
    pub identified_brand: Option<String>,
    pub identified_article_type: Option<String>,
    pub identified_color: Option<String>,
}

impl QueryFeatures {
    /// Numeric layout used by the classifier and the query feature block.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.embedding.clone();
        v.push((self.recall_set_size as f64).ln_1p());
        v.push(self.char_length as f64);
        v.push(self.word_count as f64);
        v.push(f64::from(u8::from(self.has_brand)));
        v.push(f64::from(u8::from(self.has_article_type)));
        v.push(f64::from(u8::from(self.has_color)));
        v
    }

    pub fn vector_names(dim: usize) -> Vec<String> {
        let mut names: Vec<String> = (0..dim).map(|i| format!("emb{i}")).collect();
        for n in ["log_recall", "char_len", "word_count", "has_brand", "has_type", "has_color"] {
            names.push(n.to_string());
        }
        names
    }
}

/// Dictionary match of unigrams and bigrams against `vocab`; at each position
/// the bigram is tried first, and the first hit per category is kept.
pub fn extract_query_features(
    query: &str,
    recall: &QueryRecord,
    table: &EmbeddingTable,
    vocab: &AttributeVocab,
) -> QueryFeatures {
    let words = tokenize(query);
    let mut brand = None;
    let mut article_type = None;
    let mut color = None;
    let mut i = 0;
    while i < words.len() {
        let mut consumed = 1;
        for len in [2usize, 1] {
            if i + len > words.len() {
                continue;
            }
            let phrase = words[i..i + len].join(" ");
            let slot = if vocab.brands.contains(&phrase) {
                Some(&mut brand)
            } else if vocab.article_types.contains(&phrase) {
                Some(&mut article_type)
            } else if vocab.colors.contains(&phrase) {
                Some(&mut color)
            } else {
                None
            };
            if let Some(slot) = slot {
                slot.get_or_insert(phrase);
                consumed = len;
                break;
            }
        }
        i += consumed;
    }
    QueryFeatures {
        embedding: query_vector(query, table).vector,
        recall_set_size: recall.recall_set_size(),
        char_length: query.trim().chars().count(),
        word_count: words.len(),
        has_brand: brand.is_some(),
        has_article_type: article_type.is_some(),
        has_color: color.is_some(),
        identified_brand: brand,
        identified_article_type: article_type,
        identified_color: color,
    }
}

/// Queries with their recall sets matched against the catalogue.
pub fn recall_records(catalogue: &Catalogue, queries: impl IntoIterator<Item = String>) -> Vec<QueryRecord> {
    let index = crate::corpus::RecallIndex::new(catalogue);
    queries
        .into_iter()
        .filter_map(|q| {
            let r = index.recall(&q);
            QueryRecord::new(q, r).ok()
        })
        .collect()
}

/// One row of a label file: `query \t score \t label`; the label is
/// `broad`, `narrow` or `none` (filtered from training).
#[derive(Clone, Debug, PartialEq)]
pub struct LabelRow {
    pub query: String,
    pub score: f64,
    pub label: Option<SegmentLabel>,
}

pub fn format_labels(rows: &[LabelRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let label = r.label.map_or("none", SegmentLabel::as_str);
        let _ = writeln!(out, "{}\t{}\t{label}", r.query, fmt6(r.score));
    }
    out
}

pub fn parse_labels(text: &str, source: &str) -> Result<Vec<LabelRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let err = |m: String| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            message: m,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", f.len())));
        }
        let score: f64 = f[1].parse().map_err(|_| err(format!("bad score `{}`", f[1])))?;
        let label = match f[2] {
            "none" => None,
            s => Some(s.parse().map_err(|e: Error| err(e.to_string()))?),
        };
        rows.push(LabelRow {
            query: f[0].to_string(),
            score,
            label,
        });
    }
    Ok(rows)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, &path.display().to_string())
}

pub fn write_labels(path: impl AsRef<Path>, rows: &[LabelRow]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_labels(rows)).map_err(|e| Error::io(path, e))
}
