use std::collections::{BTreeSet, HashMap};

use crate::corpus::Catalogue;

/// Document frequencies and mean length of a retrieval corpus.
#[derive(Clone, Debug, Default)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub avg_len: f64,
    pub df: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut s = CorpusStats::default();
        let mut total = 0usize;
        for d in docs {
            s.n_docs += 1;
            total += d.len();
            let uniq: BTreeSet<&String> = d.iter().collect();
            for t in uniq {
                *s.df.entry(t.clone()).or_insert(0) += 1;
            }
        }
        s.avg_len = if s.n_docs == 0 { 0.0 } else { total as f64 / s.n_docs as f64 };
        s
    }

    pub fn from_catalogue(catalogue: &Catalogue) -> Self {
        let docs: Vec<Vec<String>> = catalogue.products().iter().map(|p| p.text_tokens()).collect();
        Self::from_documents(docs.iter().map(Vec::as_slice))
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (self.n_docs as f64 - df + 0.5) / (df + 0.5)).ln()
    }
}

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

/// Okapi BM25 of a document for a query, summed over query terms.
pub fn bm25(query: &[String], doc: &[String], stats: &CorpusStats, k1: f64, b: f64) -> f64 {
    let dl = doc.len() as f64;
    let norm = if stats.avg_len > 0.0 {
        1.0 - b + b * dl / stats.avg_len
    } else {
        1.0
    };
    query
        .iter()
        .map(|t| {
            let tf = doc.iter().filter(|d| *d == t).count() as f64;
            if tf == 0.0 {
                0.0
            } else {
                stats.idf(t) * tf * (k1 + 1.0) / (tf + k1 * norm)
            }
        })
        .sum()
}
