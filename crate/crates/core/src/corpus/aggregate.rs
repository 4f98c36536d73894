use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ProductId, SessionLog};
use crate::error::{Error, Result};

/// Funnel counts for one (query, product) pair.
///
/// Revenue is held in integer micro-units so that merging is exactly
/// associative and commutative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub impressions: u64,
    pub clicks: u64,
    pub carts: u64,
    pub purchases: u64,
    pub revenue_micros: i64,
}

impl Counts {
    pub fn revenue(&self) -> f64 {
        self.revenue_micros as f64 / 1e6
    }

    pub fn merge(&mut self, other: &Counts) {
        self.impressions += other.impressions;
        self.clicks += other.clicks;
        self.carts += other.carts;
        self.purchases += other.purchases;
        self.revenue_micros += other.revenue_micros;
    }

    pub fn ctr(&self) -> f64 {
        if self.impressions == 0 {
            0.0
        } else {
            self.clicks as f64 / self.impressions as f64
        }
    }
}

pub(crate) fn to_micros(x: f64) -> i64 {
    (x * 1e6).round() as i64
}

/// Half-open day range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayWindow {
    pub start: u32,
    pub end: u32,
}

impl DayWindow {
    pub fn new(start: u32, end: u32) -> Result<Self> {
        if start >= end {
            return Err(Error::InvalidInput(format!(
                "empty day window [{start}, {end})"
            )));
        }
        Ok(Self { start, end })
    }

    /// The `len` days ending just before `end` (clamped at day 0).
    pub fn trailing(end: u32, len: u32) -> Self {
        Self {
            start: end.saturating_sub(len),
            end,
        }
    }

    pub fn contains(&self, day: u32) -> bool {
        day >= self.start && day < self.end
    }
}

/// Per (query, product) funnel counts, ordered by query then product id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    by_query: BTreeMap<String, BTreeMap<ProductId, Counts>>,
}

impl Aggregates {
    pub fn get(&self, query: &str, product: ProductId) -> Option<&Counts> {
        self.by_query.get(query)?.get(&product)
    }

    pub fn query(&self, query: &str) -> Option<&BTreeMap<ProductId, Counts>> {
        self.by_query.get(query)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ProductId, &Counts)> {
        self.by_query
            .iter()
            .flat_map(|(q, m)| m.iter().map(move |(p, c)| (q.as_str(), *p, c)))
    }

    pub fn len(&self) -> usize {
        self.by_query.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }

    pub fn add(&mut self, query: &str, product: ProductId, counts: &Counts) {
        let per_query = match self.by_query.get_mut(query) {
            Some(m) => m,
            None => self.by_query.entry(query.to_string()).or_default(),
        };
        per_query.entry(product).or_default().merge(counts);
    }

    pub fn add_session(&mut self, log: &SessionLog) {
        let per_query = match self.by_query.get_mut(log.query.as_str()) {
            Some(m) => m,
            None => self.by_query.entry(log.query.clone()).or_default(),
        };
        for e in &log.events {
            let c = per_query.entry(e.product_id).or_default();
            c.impressions += 1;
            c.clicks += u64::from(e.clicked);
            c.carts += u64::from(e.carted);
            c.purchases += u64::from(e.purchased);
            c.revenue_micros += to_micros(e.revenue);
        }
    }

    /// Associative, commutative merge for sharded aggregation.
    pub fn merge(&mut self, other: &Aggregates) {
        for (q, p, c) in other.iter() {
            self.add(q, p, c);
        }
    }

    /// Totals per product across all queries.
    pub fn per_product(&self) -> BTreeMap<ProductId, Counts> {
        let mut out: BTreeMap<ProductId, Counts> = BTreeMap::new();
        for (_, p, c) in self.iter() {
            out.entry(p).or_default().merge(c);
        }
        out
    }
}

/// Aggregates every event of every session.
pub fn aggregate<'a>(logs: impl IntoIterator<Item = &'a SessionLog>) -> Result<Aggregates> {
    let mut agg = Aggregates::default();
    let mut seen = false;
    for log in logs {
        seen = true;
        agg.add_session(log);
    }
    if !seen {
        return Err(Error::InvalidInput("aggregate requires at least one session".into()));
    }
    Ok(agg)
}

/// Aggregates the sessions whose day falls in `window`. An empty window
/// yields empty aggregates.
pub fn aggregate_window(logs: &[SessionLog], window: DayWindow) -> Aggregates {
    let mut agg = Aggregates::default();
    for log in logs.iter().filter(|l| window.contains(l.day)) {
        agg.add_session(log);
    }
    agg
}
