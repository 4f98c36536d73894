use std::collections::BTreeMap;

use crate::corpus::{tokenize, Catalogue, SessionLog};

use super::Synonyms;

/// Bag of tokens for one session: query unigrams, their synonyms and the
/// `key=value` attributes of every clicked product.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionDocument {
    pub tokens: Vec<String>,
}

impl SessionDocument {
    pub fn counts(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for t in &self.tokens {
            *m.entry(t.as_str()).or_insert(0) += 1;
        }
        m
    }
}

pub fn build_documents<'a>(
    logs: impl IntoIterator<Item = &'a SessionLog>,
    catalogue: &Catalogue,
    synonyms: &Synonyms,
) -> Vec<SessionDocument> {
    logs.into_iter()
        .filter_map(|log| {
            let mut tokens = Vec::new();
            for w in tokenize(&log.query) {
                tokens.extend(synonyms.get(&w).iter().cloned());
                tokens.push(w);
            }
            for pid in log.clicked_products() {
                if let Some(p) = catalogue.get(pid) {
                    tokens.extend(p.attribute_tokens());
                }
            }
            (!tokens.is_empty()).then_some(SessionDocument { tokens })
        })
        .collect()
}
