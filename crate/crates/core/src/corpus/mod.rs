//! Catalogue and clickstream data model.
//!
//! Products carry an ordered attribute list so that files round-trip byte for
//! byte. Sessions are one query issuance with its ordered impressions.

mod aggregate;
mod io;
mod recall;
pub mod synth;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use aggregate::{aggregate, aggregate_window, Aggregates, Counts, DayWindow};
pub use io::{
    load_catalogue, load_sessions, parse_catalogue, parse_sessions, write_catalogue,
    write_sessions, format_catalogue, format_sessions,
};
pub use recall::RecallIndex;
pub use synth::{generate_synthetic, GroundTruthOracle, SyntheticConfig, SyntheticDataset};

pub type ProductId = u32;

pub const BRAND: &str = "brand";
pub const ARTICLE_TYPE: &str = "article_type";
pub const COLOR: &str = "color";
pub const MASTER_CATEGORY: &str = "master_category";
pub const MANDATORY_KEYS: [&str; 3] = [BRAND, ARTICLE_TYPE, COLOR];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub id: ProductId,
    pub price: f64,
    pub inventory: u32,
    attributes: Vec<(String, String)>,
}

impl Product {
    pub fn new(
        id: ProductId,
        price: f64,
        inventory: u32,
        attributes: Vec<(String, String)>,
    ) -> Result<Self> {
        if !(price > 0.0 && price.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "product {id}: price must be positive, got {price}"
            )));
        }
        let mut seen = BTreeSet::new();
        for (k, _) in &attributes {
            if !seen.insert(k.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "product {id}: attribute `{k}` appears more than once"
                )));
            }
        }
        for key in MANDATORY_KEYS {
            if !seen.contains(key) {
                return Err(Error::MissingAttribute {
                    line: 0,
                    product_id: id,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self {
            id,
            price,
            inventory,
            attributes,
        })
    }

    pub fn attributes(&self) -> &[(String, String)] {
        &self.attributes
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn brand(&self) -> &str {
        self.attr(BRAND).expect("brand is mandatory")
    }

    pub fn article_type(&self) -> &str {
        self.attr(ARTICLE_TYPE).expect("article_type is mandatory")
    }

    pub fn color(&self) -> &str {
        self.attr(COLOR).expect("color is mandatory")
    }

    /// Coarse grouping; products without the key share one default group.
    pub fn master_category(&self) -> &str {
        self.attr(MASTER_CATEGORY).unwrap_or("default")
    }

    /// `key=value` tokens, the vocabulary used by the session embeddings.
    pub fn attribute_tokens(&self) -> impl Iterator<Item = String> + '_ {
        self.attributes.iter().map(|(k, v)| format!("{k}={v}"))
    }

    /// Lower-cased attribute values split into words, the retrieval document.
    pub fn text_tokens(&self) -> Vec<String> {
        self.attributes
            .iter()
            .filter(|(k, _)| k != MASTER_CATEGORY)
            .flat_map(|(_, v)| tokenize(v))
            .collect()
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct Catalogue {
    products: Vec<Product>,
    index: HashMap<ProductId, usize>,
}

impl Catalogue {
    pub fn new(products: Vec<Product>) -> Result<Self> {
        let mut index = HashMap::with_capacity(products.len());
        for (i, p) in products.iter().enumerate() {
            if index.insert(p.id, i).is_some() {
                return Err(Error::DuplicateProduct(p.id));
            }
        }
        Ok(Self { products, index })
    }

    pub fn get(&self, id: ProductId) -> Option<&Product> {
        self.index.get(&id).map(|&i| &self.products[i])
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn attribute_vocab(&self) -> AttributeVocab {
        let mut vocab = AttributeVocab::default();
        for p in &self.products {
            vocab.brands.insert(p.brand().to_lowercase());
            vocab.article_types.insert(p.article_type().to_lowercase());
            vocab.colors.insert(p.color().to_lowercase());
        }
        vocab
    }

    /// Products whose retrieval document contains every query word that the
    /// catalogue knows. Words unknown to the catalogue do not restrict recall.
    pub fn match_recall(&self, query: &str) -> Vec<ProductId> {
        RecallIndex::new(self).recall(query)
    }

    pub fn text_vocabulary(&self) -> BTreeSet<String> {
        self.products.iter().flat_map(|p| p.text_tokens()).collect()
    }
}

/// Known brand, article type and color names for query attribute matching.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AttributeVocab {
    pub brands: BTreeSet<String>,
    pub article_types: BTreeSet<String>,
    pub colors: BTreeSet<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub product_id: ProductId,
    pub position: u32,
    pub clicked: bool,
    pub carted: bool,
    pub purchased: bool,
    pub revenue: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub session_id: u64,
    pub day: u32,
    pub query: String,
    pub events: Vec<Event>,
}

impl SessionLog {
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::InvalidSession {
            session_id: self.session_id,
            message,
        };
        if self.events.is_empty() {
            return Err(bad("session has no impressions".into()));
        }
        let mut prev = 0;
        for e in &self.events {
            if e.position == 0 || e.position <= prev {
                return Err(bad(format!(
                    "positions must be 1-based and strictly increasing (saw {} after {prev})",
                    e.position
                )));
            }
            prev = e.position;
            if e.carted && !e.clicked {
                return Err(bad(format!("product {} carted without click", e.product_id)));
            }
            if e.purchased && !e.carted {
                return Err(bad(format!(
                    "product {} purchased without cart",
                    e.product_id
                )));
            }
            if e.revenue < 0.0 || !e.revenue.is_finite() {
                return Err(bad(format!("product {} has invalid revenue", e.product_id)));
            }
            if (e.revenue > 0.0) != e.purchased {
                return Err(bad(format!(
                    "product {}: revenue must be positive exactly when purchased",
                    e.product_id
                )));
            }
        }
        Ok(())
    }

    pub fn clicked_products(&self) -> impl Iterator<Item = ProductId> + '_ {
        self.events
            .iter()
            .filter(|e| e.clicked)
            .map(|e| e.product_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: String,
    recall_set: Vec<ProductId>,
}

impl QueryRecord {
    pub fn new(query: impl Into<String>, recall_set: Vec<ProductId>) -> Result<Self> {
        let query = query.into();
        if recall_set.is_empty() {
            return Err(Error::InvalidInput(format!(
                "query `{query}` has an empty recall set"
            )));
        }
        Ok(Self { query, recall_set })
    }

    pub fn recall_set(&self) -> &[ProductId] {
        &self.recall_set
    }

    pub fn recall_set_size(&self) -> usize {
        self.recall_set.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn product_requires_mandatory_keys() {
        let err = Product::new(1, 10.0, 1, attrs(&[("article_type", "tshirt"), ("color", "red")]))
            .unwrap_err();
        assert!(err.to_string().contains("`brand`"), "{err}");
    }

    #[test]
    fn product_rejects_repeated_key() {
        let a = attrs(&[
            ("brand", "zed"),
            ("brand", "kova"),
            ("article_type", "tshirt"),
            ("color", "red"),
        ]);
        assert!(Product::new(1, 10.0, 1, a).is_err());
    }

    #[test]
    fn catalogue_rejects_duplicate_ids() {
        let a = attrs(&[("brand", "zed"), ("article_type", "tshirt"), ("color", "red")]);
        let p = Product::new(3, 10.0, 1, a).unwrap();
        let err = Catalogue::new(vec![p.clone(), p]).unwrap_err();
        assert!(matches!(err, Error::DuplicateProduct(3)));
    }

    #[test]
    fn recall_ignores_unknown_words() {
        let p1 = Product::new(
            1,
            5.0,
            1,
            attrs(&[("brand", "zed"), ("article_type", "tshirt"), ("color", "red")]),
        )
        .unwrap();
        let p2 = Product::new(
            2,
            5.0,
            1,
            attrs(&[("brand", "kova"), ("article_type", "tshirt"), ("color", "blue")]),
        )
        .unwrap();
        let cat = Catalogue::new(vec![p1, p2]).unwrap();
        assert_eq!(cat.match_recall("tshirt for men"), vec![1, 2]);
        assert_eq!(cat.match_recall("red tshirt"), vec![1]);
        assert!(cat.match_recall("xyzzy").is_empty());
    }

    #[test]
    fn session_invariants_enforced() {
        let mut s = SessionLog {
            session_id: 1,
            day: 0,
            query: "q".into(),
            events: vec![Event {
                product_id: 1,
                position: 1,
                clicked: false,
                carted: true,
                purchased: false,
                revenue: 0.0,
            }],
        };
        assert!(s.validate().is_err());
        s.events[0].clicked = true;
        assert!(s.validate().is_ok());
        s.events[0].revenue = 3.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn query_record_rejects_empty_recall() {
        assert!(QueryRecord::new("q", vec![]).is_err());
        assert_eq!(QueryRecord::new("q", vec![4, 5]).unwrap().recall_set_size(), 2);
    }
}
