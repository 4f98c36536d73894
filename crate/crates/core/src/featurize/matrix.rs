use std::fmt::Write as _;
use std::path::Path;

use super::{Block, FeatureLayout};
use crate::corpus::{Counts, ProductId};
use crate::error::{Error, Result};
use crate::util::fmt6;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub query_id: u32,
    pub product_id: ProductId,
    pub features: Vec<f64>,
    pub counts: Counts,
}

/// Rows in (query_id, product_id) order with every block present.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub layout: FeatureLayout,
    pub rows: Vec<FeatureRow>,
}

const COUNT_COLUMNS: [&str; 5] = ["I", "C", "B", "Q", "R"];

impl FeatureMatrix {
    pub fn new(layout: FeatureLayout, mut rows: Vec<FeatureRow>) -> Result<Self> {
        let w = layout.width();
        if let Some(r) = rows.iter().find(|r| r.features.len() != w) {
            return Err(Error::DimensionMismatch {
                expected: w,
                actual: r.features.len(),
            });
        }
        rows.sort_by_key(|r| (r.query_id, r.product_id));
        Ok(Self { layout, rows })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("query_id\tproduct_id");
        for n in self.layout.names().iter().map(String::as_str).chain(COUNT_COLUMNS) {
            out.push('\t');
            out.push_str(n);
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}\t{}", r.query_id, r.product_id);
            for v in &r.features {
                out.push('\t');
                out.push_str(&fmt6(*v));
            }
            let c = &r.counts;
            let _ = writeln!(
                out,
                "\t{}\t{}\t{}\t{}\t{}",
                c.impressions,
                c.clicks,
                c.carts,
                c.purchases,
                fmt6(c.revenue())
            );
        }
        out
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(source, 1, "missing header"))?;
        let cols: Vec<&str> = header.split('\t').collect();
        if cols.len() < 2 + COUNT_COLUMNS.len()
            || cols[..2] != ["query_id", "product_id"]
            || cols[cols.len() - 5..] != COUNT_COLUMNS
        {
            return Err(Error::parse(source, 1, "header must start with query_id, product_id and end with I C B Q R"));
        }
        let mut blocks: [Vec<String>; 4] = Default::default();
        let mut last_block = 0;
        for name in &cols[2..cols.len() - 5] {
            let (prefix, rest) = name
                .split_once('.')
                .ok_or_else(|| Error::parse(source, 1, format!("column `{name}` lacks a block prefix")))?;
            let b = Block::ALL
                .iter()
                .position(|b| b.prefix() == prefix)
                .ok_or_else(|| Error::parse(source, 1, format!("unknown block `{prefix}`")))?;
            if b < last_block {
                return Err(Error::parse(source, 1, "feature blocks out of order"));
            }
            last_block = b;
            blocks[b].push(rest.to_string());
        }
        let layout = FeatureLayout { blocks };
        let width = layout.width();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let ln = i + 2;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != cols.len() {
                return Err(Error::parse(source, ln, format!("expected {} fields, found {}", cols.len(), f.len())));
            }
            let int = |s: &str| s.parse::<u64>().map_err(|_| Error::parse(source, ln, format!("bad integer `{s}`")));
            let float = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(source, ln, format!("bad number `{s}`")));
            let features = f[2..2 + width].iter().map(|s| float(s)).collect::<Result<Vec<_>>>()?;
            let c = &f[2 + width..];
            rows.push(FeatureRow {
                query_id: int(f[0])? as u32,
                product_id: int(f[1])? as ProductId,
                features,
                counts: Counts {
                    impressions: int(c[0])?,
                    clicks: int(c[1])?,
                    carts: int(c[2])?,
                    purchases: int(c[3])?,
                    revenue_micros: (float(c[4])? * 1e6).round() as i64,
                },
            });
        }
        Self::new(layout, rows)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}
