//! Dense embeddings: click-matrix factorization for products and skip-gram
//! over session documents for query and attribute tokens.

mod documents;
mod mf;
mod skipgram;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Product};
use crate::error::{Error, Result};
use crate::util::fmt6;

pub use documents::{build_documents, SessionDocument};
pub use mf::{mf_train, ClickMatrix, MfConfig, MfModel};
pub use skipgram::{skipgram_train, SkipGramConfig, SkipGramModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("embedding dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            vectors: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("embedding contains NaN or Inf".into()));
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Tokens whose vector is exactly zero (e.g. products never clicked).
    pub fn flagged(&self) -> BTreeSet<&str> {
        self.vectors
            .iter()
            .filter(|(_, v)| v.iter().all(|x| *x == 0.0))
            .map(|(k, _)| k.as_str())
            .collect()
    }

    /// Nearest tokens by cosine similarity, best first.
    pub fn neighbors(&self, token: &str, k: usize) -> Vec<(String, f64)> {
        let Some(v) = self.get(token) else {
            return Vec::new();
        };
        let mut sims: Vec<(String, f64)> = self
            .iter()
            .filter(|(t, _)| *t != token)
            .map(|(t, u)| (t.to_string(), crate::util::cosine(v, u)))
            .collect();
        sims.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        sims.truncate(k);
        sims
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("dim={} count={}\n", self.dim, self.vectors.len());
        for (token, v) in &self.vectors {
            let nums: Vec<String> = v.iter().map(|x| fmt6(*x)).collect();
            let _ = writeln!(out, "{token}\t{}", nums.join(" "));
        }
        out
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(source, 1, "missing header"))?;
        let mut dim = None;
        let mut count = None;
        for part in header.split_whitespace() {
            match part.split_once('=') {
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                Some(("count", v)) => count = v.parse::<usize>().ok(),
                _ => return Err(Error::parse(source, 1, format!("bad header field `{part}`"))),
            }
        }
        let (dim, count) = match (dim, count) {
            (Some(d), Some(c)) => (d, c),
            _ => return Err(Error::parse(source, 1, "header must be `dim=<d> count=<n>`")),
        };
        let mut table = Self::new(dim)?;
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let (token, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(source, lineno, "expected `token<TAB>values`"))?;
            let v: Vec<f64> = rest
                .split(' ')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(source, lineno, "bad vector component"))?;
            table
                .insert(token, v)
                .map_err(|e| Error::parse(source, lineno, e.to_string()))?;
        }
        if table.len() != count {
            return Err(Error::parse(
                source,
                1,
                format!("header declares {count} vectors, found {}", table.len()),
            ));
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    fn centroid<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Centroid {
        let mut sum = vec![0.0; self.dim];
        let mut matched = 0;
        for t in tokens {
            if let Some(v) = self.get(t) {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
                matched += 1;
            }
        }
        if matched > 0 {
            for s in &mut sum {
                *s /= matched as f64;
            }
        }
        Centroid {
            vector: sum,
            matched,
        }
    }
}

/// Mean of the in-vocabulary vectors; `matched == 0` marks a flagged zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Centroid {
    pub vector: Vec<f64>,
    pub matched: usize,
}

impl Centroid {
    pub fn is_flagged(&self) -> bool {
        self.matched == 0
    }
}

/// Product embedding: the mean of its `key=value` attribute vectors.
pub fn product_vector(product: &Product, table: &EmbeddingTable) -> Centroid {
    let tokens: Vec<String> = product.attribute_tokens().collect();
    table.centroid(tokens.iter().map(String::as_str))
}

/// Query embedding: the mean of its in-vocabulary unigram vectors.
pub fn query_vector(query: &str, table: &EmbeddingTable) -> Centroid {
    let tokens = tokenize(query);
    table.centroid(tokens.iter().map(String::as_str))
}

/// Word -> synonym list, at most ten per word.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Synonyms {
    map: BTreeMap<String, Vec<String>>,
}

impl Synonyms {
    pub const MAX_PER_WORD: usize = 10;

    pub fn new(map: BTreeMap<String, Vec<String>>) -> Self {
        let map = map
            .into_iter()
            .map(|(k, mut v)| {
                v.truncate(Self::MAX_PER_WORD);
                (k, v)
            })
            .collect();
        Self { map }
    }

    pub fn get(&self, word: &str) -> &[String] {
        self.map.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, syns) in &self.map {
            let _ = writeln!(out, "{w}\t{}", syns.join(","));
        }
        out
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (w, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(source, i + 1, "expected `word<TAB>syn1,syn2`"))?;
            let syns = rest
                .split(',')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            map.insert(w.to_string(), syns);
        }
        Ok(Self::new(map))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn product(attrs: &[(&str, &str)]) -> Product {
        let mut all = vec![
            ("brand".to_string(), "zed".to_string()),
            ("article_type".to_string(), "tshirt".to_string()),
            ("color".to_string(), "red".to_string()),
        ];
        for (k, v) in attrs {
            all.push((k.to_string(), v.to_string()));
        }
        Product::new(1, 1.0, 1, all).unwrap()
    }

    #[test]
    fn single_attribute_in_vocab_gives_its_vector() {
        let mut t = EmbeddingTable::new(2).unwrap();
        t.insert("brand=zed", vec![0.3, -0.7]).unwrap();
        let c = product_vector(&product(&[]), &t);
        assert_eq!(c.vector, vec![0.3, -0.7]);
        assert_eq!(c.matched, 1);
    }

    #[test]
    fn two_attributes_average() {
        let mut t = EmbeddingTable::new(2).unwrap();
        t.insert("brand=zed", vec![1.0, 0.0]).unwrap();
        t.insert("color=red", vec![0.0, 1.0]).unwrap();
        assert_eq!(product_vector(&product(&[]), &t).vector, vec![0.5, 0.5]);
    }

    #[test]
    fn no_vocab_attribute_is_flagged() {
        let t = EmbeddingTable::new(3).unwrap();
        let c = product_vector(&product(&[]), &t);
        assert!(c.is_flagged());
        assert_eq!(c.vector, vec![0.0; 3]);
    }

    #[test]
    fn query_vector_midpoint() {
        let mut t = EmbeddingTable::new(2).unwrap();
        t.insert("a", vec![1.0, 0.0]).unwrap();
        t.insert("b", vec![0.0, 1.0]).unwrap();
        assert_eq!(query_vector("a", &t).vector, vec![1.0, 0.0]);
        assert_eq!(query_vector("a b", &t).vector, vec![0.5, 0.5]);
        assert!(query_vector("zzz", &t).is_flagged());
    }

    #[test]
    fn insert_rejects_bad_vectors() {
        let mut t = EmbeddingTable::new(2).unwrap();
        assert!(t.insert("x", vec![1.0]).is_err());
        assert!(t.insert("x", vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn text_format_round_trips() {
        let mut t = EmbeddingTable::new(2).unwrap();
        t.insert("color=red", vec![0.25, -1.5]).unwrap();
        t.insert("7", vec![0.0, 0.0]).unwrap();
        let text = t.to_text();
        assert!(text.starts_with("dim=2 count=2\n"));
        let back = EmbeddingTable::from_text(&text, "mem").unwrap();
        assert_eq!(back, t);
        assert_eq!(back.flagged().into_iter().collect::<Vec<_>>(), vec!["7"]);
    }

    #[test]
    fn synonyms_capped_at_ten() {
        let line = format!("w\t{}\n", (0..15).map(|i| format!("s{i}")).collect::<Vec<_>>().join(","));
        let s = Synonyms::from_text(&line, "mem").unwrap();
        assert_eq!(s.get("w").len(), 10);
        assert!(s.get("other").is_empty());
    }
}
