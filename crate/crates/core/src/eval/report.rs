use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Rows are training targets, columns the targets used for grading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossTargetMatrix {
    pub targets: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CrossTargetMatrix {
    pub fn diagonal_is_row_max(&self, row: usize) -> bool {
        let d = self.values[row][row];
        self.values[row].iter().all(|v| *v <= d)
    }

    pub fn rows_with_diagonal_max(&self) -> usize {
        (0..self.values.len()).filter(|&r| self.diagonal_is_row_max(r)).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<10}", "train\\test");
        for t in &self.targets {
            let _ = write!(out, "{t:>10}");
        }
        out.push('\n');
        for (t, row) in self.targets.iter().zip(&self.values) {
            let _ = write!(out, "{t:<10}");
            for v in row {
                let _ = write!(out, "{v:>10.4}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub segment: String,
    pub models: Vec<String>,
    pub masks: Vec<String>,
    /// `cells[model][mask]` = mean NDCG.
    pub cells: BTreeMap<String, BTreeMap<String, f64>>,
}

impl AblationGrid {
    pub fn insert(&mut self, model: &str, mask: &str, value: f64) {
        if !self.models.iter().any(|m| m == model) {
            self.models.push(model.to_string());
        }
        if !self.masks.iter().any(|m| m == mask) {
            self.masks.push(mask.to_string());
        }
        self.cells
            .entry(model.to_string())
            .or_default()
            .insert(mask.to_string(), value);
    }

    pub fn get(&self, model: &str, mask: &str) -> Option<f64> {
        self.cells.get(model)?.get(mask).copied()
    }

    pub fn len(&self) -> usize {
        self.cells.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<12}", "model");
        for m in &self.masks {
            let _ = write!(out, "{m:>8}");
        }
        out.push('\n');
        for model in &self.models {
            let _ = write!(out, "{model:<12}");
            for mask in &self.masks {
                match self.get(model, mask) {
                    Some(v) => {
                        let _ = write!(out, "{v:>8.4}");
                    }
                    None => {
                        let _ = write!(out, "{:>8}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentComparison {
    /// `(model, ndcg on broad, ndcg on narrow)`; a specialized model is only
    /// scored on its own segment.
    pub rows: Vec<(String, Option<f64>, Option<f64>)>,
}

impl SegmentComparison {
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<12}{:>10}{:>10}\n", "model", "broad", "narrow");
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        for (m, b, n) in &self.rows {
            let _ = writeln!(out, "{m:<12}{:>10}{:>10}", cell(*b), cell(*n));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    /// `(segment, baseline ndcg, letor ndcg)`.
    pub rows: Vec<(String, f64, f64)>,
}

impl BaselineComparison {
    pub fn improvement(baseline: f64, letor: f64) -> f64 {
        if baseline == 0.0 {
            0.0
        } else {
            (letor - baseline) / baseline
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<10}{:>10}{:>10}{:>12}\n", "segment", "baseline", "letor", "improvement");
        for (s, b, l) in &self.rows {
            let _ = writeln!(
                out,
                "{s:<10}{b:>10.4}{l:>10.4}{:>11.2}%",
                100.0 * Self::improvement(*b, *l)
            );
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub model: String,
    pub mask: String,
    pub segment: String,
    pub target: String,
    pub mean_ndcg: f64,
    pub queries: usize,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Machine-readable results keyed by (model, mask, segment, target).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub entries: Vec<SummaryEntry>,
}

impl Summary {
    pub fn push(&mut self, e: SummaryEntry) {
        self.entries.push(e);
        self.entries.sort_by(|a, b| {
            (&a.model, &a.mask, &a.segment, &a.target).cmp(&(&b.model, &b.mask, &b.segment, &b.target))
        });
    }

    pub fn get(&self, model: &str, mask: &str, segment: &str, target: &str) -> Option<&SummaryEntry> {
        self.entries
            .iter()
            .find(|e| e.model == model && e.mask == mask && e.segment == segment && e.target == target)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<30}{:<6}{:<8}{:<10}{:>8}{:>8}{:>18}\n",
            "model", "mask", "segment", "target", "ndcg", "queries", "95% ci"
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<30}{:<6}{:<8}{:<10}{:>8.4}{:>8}   [{:.4}, {:.4}]",
                e.model, e.mask, e.segment, e.target, e.mean_ndcg, e.queries, e.ci_low, e.ci_high
            );
        }
        out
    }
}

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

/// Grouped bar chart: one group per mask, one bar per model.
pub fn plot_ablation_svg(grid: &AblationGrid) -> String {
    let (w, h) = (720.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 30.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let groups = grid.masks.len().max(1) as f64;
    let bars = grid.models.len().max(1) as f64;
    let group_w = plot_w / groups;
    let bar_w = group_w * 0.8 / bars;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle">NDCG@48 by feature mask ({})</text>"#,
        left + plot_w / 2.0,
        grid.segment
    );
    for tick in 0..=5 {
        let v = f64::from(tick) / 5.0;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            left + plot_w,
            left - 6.0,
            y + 4.0
        );
    }
    for (gi, mask) in grid.masks.iter().enumerate() {
        let gx = left + gi as f64 * group_w + group_w * 0.1;
        for (mi, model) in grid.models.iter().enumerate() {
            let Some(v) = grid.get(model, mask) else { continue };
            let bh = plot_h * v.clamp(0.0, 1.0);
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{model} {mask}: {v:.4}</title></rect>"#,
                gx + mi as f64 * bar_w,
                top + plot_h - bh,
                bar_w,
                bh,
                PALETTE[mi % PALETTE.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{mask}</text>"#,
            left + (gi as f64 + 0.5) * group_w,
            top + plot_h + 20.0
        );
    }
    for (mi, model) in grid.models.iter().enumerate() {
        let y = top + 10.0 + mi as f64 * 20.0;
        let x = w - right + 15.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{}" y="{:.1}">{model}</text>"#,
            y - 10.0,
            PALETTE[mi % PALETTE.len()],
            x + 18.0,
            y
        );
    }
    s.push_str("</svg>\n");
    s
}
