//! Entity-level popularity (brand or article type), overall and conditioned
//! on a query.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{aggregate_window, Aggregates, Catalogue, Counts, DayWindow, Product, ProductId, SessionLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entity {
    Brand,
    ArticleType,
}

impl Entity {
    pub fn of(self, product: &Product) -> &str {
        match self {
            Entity::Brand => product.brand(),
            Entity::ArticleType => product.article_type(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Entity::Brand => "brand",
            Entity::ArticleType => "type",
        }
    }
}

/// Revenue, quantity sold and ctr of one entity.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Popularity {
    pub revenue: f64,
    pub quantity: u64,
    pub ctr: f64,
}

impl Popularity {
    /// `[ln(1 + revenue), ln(1 + quantity), ctr]`.
    pub fn features(&self) -> [f64; 3] {
        [self.revenue.ln_1p(), (self.quantity as f64).ln_1p(), self.ctr]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EntityPopularity {
    pub entity: Option<Entity>,
    pub counts: BTreeMap<String, Counts>,
}

impl EntityPopularity {
    fn from_products<'a>(
        entity: Entity,
        catalogue: &Catalogue,
        per_product: impl IntoIterator<Item = (ProductId, &'a Counts)>,
    ) -> Self {
        let mut counts: BTreeMap<String, Counts> = BTreeMap::new();
        for (pid, c) in per_product {
            if let Some(p) = catalogue.get(pid) {
                counts.entry(entity.of(p).to_string()).or_default().merge(c);
            }
        }
        Self {
            entity: Some(entity),
            counts,
        }
    }

    /// Metrics of `name`; unseen entities get zeros and `true` (cold start).
    pub fn get(&self, name: &str) -> (Popularity, bool) {
        match self.counts.get(name) {
            Some(c) => (
                Popularity {
                    revenue: c.revenue(),
                    quantity: c.purchases,
                    ctr: c.ctr(),
                },
                false,
            ),
            None => (Popularity::default(), true),
        }
    }
}

/// Popularity of every entity from all sessions whose day falls in `window`.
pub fn entity_popularity(
    logs: &[SessionLog],
    catalogue: &Catalogue,
    entity: Entity,
    window: DayWindow,
) -> EntityPopularity {
    let agg = aggregate_window(logs, window);
    entity_popularity_from(&agg, catalogue, entity)
}

/// As [`entity_popularity`] for already aggregated (and windowed) counts.
pub fn entity_popularity_from(agg: &Aggregates, catalogue: &Catalogue, entity: Entity) -> EntityPopularity {
    let per_product = agg.per_product();
    EntityPopularity::from_products(entity, catalogue, per_product.iter().map(|(p, c)| (*p, c)))
}

/// Entity metrics restricted to the sessions of one query. Product-level
/// query metrics are intentionally not exposed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QpPopularity {
    pub brand: EntityPopularity,
    pub article_type: EntityPopularity,
}

impl QpPopularity {
    pub fn features(&self, product: &Product) -> [f64; 6] {
        let b = self.brand.get(product.brand()).0.features();
        let t = self.article_type.get(product.article_type()).0.features();
        [b[0], b[1], b[2], t[0], t[1], t[2]]
    }
}

pub fn qp_popularity(agg: &Aggregates, catalogue: &Catalogue, query: &str) -> QpPopularity {
    let Some(rows) = agg.query(query) else {
        return QpPopularity::default();
    };
    let build = |e| EntityPopularity::from_products(e, catalogue, rows.iter().map(|(p, c)| (*p, c)));
    QpPopularity {
        brand: build(Entity::Brand),
        article_type: build(Entity::ArticleType),
    }
}
