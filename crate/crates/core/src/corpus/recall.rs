use std::collections::BTreeMap;

use super::{tokenize, Catalogue, ProductId};

/// Inverted index over product text tokens with AND semantics.
#[derive(Clone, Debug, Default)]
pub struct RecallIndex {
    postings: BTreeMap<String, Vec<ProductId>>,
}

impl RecallIndex {
    pub fn new(catalogue: &Catalogue) -> Self {
        let mut postings: BTreeMap<String, Vec<ProductId>> = BTreeMap::new();
        for p in catalogue.products() {
            let mut toks = p.text_tokens();
            toks.sort();
            toks.dedup();
            for t in toks {
                postings.entry(t).or_default().push(p.id);
            }
        }
        for ids in postings.values_mut() {
            ids.sort_unstable();
        }
        Self { postings }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.postings.contains_key(token)
    }

    pub fn known_terms(&self, query: &str) -> Vec<String> {
        let mut terms: Vec<String> = tokenize(query)
            .into_iter()
            .filter(|t| self.postings.contains_key(t))
            .collect();
        terms.dedup();
        terms
    }

    /// Sorted product ids matching every known query term.
    pub fn recall(&self, query: &str) -> Vec<ProductId> {
        let terms = self.known_terms(query);
        let mut lists: Vec<&Vec<ProductId>> = terms.iter().map(|t| &self.postings[t]).collect();
        if lists.is_empty() {
            return Vec::new();
        }
        lists.sort_by_key(|l| l.len());
        let mut out = lists[0].clone();
        for l in &lists[1..] {
            out.retain(|id| l.binary_search(id).is_ok());
        }
        out
    }
}
