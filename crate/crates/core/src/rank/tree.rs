//! Histogram-based regression trees shared by the forest and boosting models.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::util::Rng;

/// Feature values pre-binned column by column.
pub struct Binned {
    pub n_rows: usize,
    pub n_features: usize,
    /// Column-major bin indices.
    bins: Vec<u8>,
    /// Per feature, the upper edge of every bin but the last.
    cuts: Vec<Vec<f64>>,
}

impl Binned {
    /// `rows` is row-major with `n_features` columns.
    pub fn new(rows: &[f64], n_features: usize, max_bins: usize) -> Self {
        let max_bins = max_bins.clamp(2, 256);
        let n_rows = if n_features == 0 { 0 } else { rows.len() / n_features };
        let mut bins = vec![0u8; n_rows * n_features];
        let mut cuts = Vec::with_capacity(n_features);
        for f in 0..n_features {
            let mut col: Vec<f64> = (0..n_rows).map(|r| rows[r * n_features + f]).collect();
            col.sort_by(f64::total_cmp);
            col.dedup();
            let c: Vec<f64> = if col.len() <= max_bins {
                col.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect()
            } else {
                let mut c: Vec<f64> = (1..max_bins)
                    .map(|k| {
                        let pos = k * (col.len() - 1) / max_bins;
                        col[pos] + (col[pos + 1] - col[pos]) / 2.0
                    })
                    .collect();
                c.dedup();
                c
            };
            for r in 0..n_rows {
                let x = rows[r * n_features + f];
                bins[f * n_rows + r] = c.partition_point(|&t| t < x) as u8;
            }
            cuts.push(c);
        }
        Self {
            n_rows,
            n_features,
            bins,
            cuts,
        }
    }

    fn bin(&self, f: usize, r: usize) -> usize {
        usize::from(self.bins[f * self.n_rows + r])
    }

    fn n_bins(&self, f: usize) -> usize {
        self.cuts[f].len() + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf(value)],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left as usize).max(go(t, *right as usize)),
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Fraction of features considered at each split.
    pub feature_fraction: f64,
}

#[derive(Clone, Copy, Default)]
struct Cell {
    g: f64,
    h: f64,
    n: u32,
}

/// Fits one tree to first/second order statistics: leaves take
/// `-sum(g) / (sum(h) + lambda)` and splits maximise the matching gain.
pub fn fit_tree(
    data: &Binned,
    rows: &[u32],
    grad: &[f64],
    hess: &[f64],
    params: &TreeParams,
    rng: &mut Rng,
) -> Tree {
    let mut b = Builder {
        data,
        grad,
        hess,
        params,
        nodes: Vec::new(),
        features: (0..data.n_features).collect(),
        offsets: Vec::new(),
    };
    let mut total = 0;
    for f in 0..data.n_features {
        b.offsets.push(total);
        total += data.n_bins(f);
    }
    b.offsets.push(total);
    let mut rows = rows.to_vec();
    let hist = b.histogram(&rows);
    b.grow(&mut rows, hist, 0, rng);
    Tree { nodes: b.nodes }
}

struct Builder<'a> {
    data: &'a Binned,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a TreeParams,
    nodes: Vec<Node>,
    features: Vec<usize>,
    offsets: Vec<usize>,
}

struct Best {
    gain: f64,
    feature: usize,
    bin: usize,
}

impl Builder<'_> {
    fn histogram(&self, rows: &[u32]) -> Vec<Cell> {
        let mut hist = vec![Cell::default(); *self.offsets.last().unwrap()];
        let n = self.data.n_rows;
        for f in 0..self.data.n_features {
            let col = &self.data.bins[f * n..(f + 1) * n];
            let h = &mut hist[self.offsets[f]..self.offsets[f + 1]];
            for &r in rows {
                let r = r as usize;
                let c = &mut h[usize::from(col[r])];
                c.g += self.grad[r];
                c.h += self.hess[r];
                c.n += 1;
            }
        }
        hist
    }

    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        let d = h + self.params.lambda;
        if d <= 0.0 {
            0.0
        } else {
            -g / d
        }
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        let d = h + self.params.lambda;
        if d <= 0.0 {
            0.0
        } else {
            g * g / d
        }
    }

    fn grow(&mut self, rows: &mut [u32], hist: Vec<Cell>, depth: usize, rng: &mut Rng) -> u32 {
        let (g, h) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &r| (g + self.grad[r as usize], h + self.hess[r as usize]));
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf(self.leaf_value(g, h)));
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf.max(1) {
            return id;
        }
        let Some(best) = self.best_split(&hist, g, h, rows.len(), rng) else {
            return id;
        };
        let f = best.feature;
        // partition rows in place: left = bins <= best.bin
        let mut split = 0;
        for i in 0..rows.len() {
            if self.data.bin(f, rows[i] as usize) <= best.bin {
                rows.swap(i, split);
                split += 1;
            }
        }
        let (left_rows, right_rows) = rows.split_at_mut(split);
        let (small, large_is_left) = if left_rows.len() <= right_rows.len() {
            (&*left_rows, false)
        } else {
            (&*right_rows, true)
        };
        let small_hist = self.histogram(small);
        let large_hist: Vec<Cell> = hist
            .iter()
            .zip(&small_hist)
            .map(|(p, s)| Cell {
                g: p.g - s.g,
                h: p.h - s.h,
                n: p.n - s.n,
            })
            .collect();
        let (lh, rh) = if large_is_left {
            (large_hist, small_hist)
        } else {
            (small_hist, large_hist)
        };
        drop(hist);
        let left = self.grow(left_rows, lh, depth + 1, rng);
        let right = self.grow(right_rows, rh, depth + 1, rng);
        self.nodes[id as usize] = Node::Split {
            feature: f as u32,
            threshold: self.data.cuts[f][best.bin],
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, hist: &[Cell], g: f64, h: f64, n: usize, rng: &mut Rng) -> Option<Best> {
        let parent = self.score(g, h);
        let n_try = ((self.params.feature_fraction * self.data.n_features as f64).ceil() as usize)
            .clamp(1, self.data.n_features.max(1));
        if n_try < self.data.n_features {
            self.features.shuffle(rng);
        }
        let mut candidates: Vec<usize> = self.features[..n_try.min(self.features.len())].to_vec();
        candidates.sort_unstable();
        let min_leaf = self.params.min_leaf.max(1) as u32;
        let mut best: Option<Best> = None;
        for f in candidates {
            let cells = &hist[self.offsets[f]..self.offsets[f + 1]];
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0u32);
            for (b, c) in cells[..cells.len() - 1].iter().enumerate() {
                gl += c.g;
                hl += c.h;
                nl += c.n;
                let nr = n as u32 - nl;
                if nl < min_leaf {
                    continue;
                }
                if nr < min_leaf {
                    break;
                }
                let gain = self.score(gl, hl) + self.score(g - gl, h - hl) - parent;
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Best {
                        gain,
                        feature: f,
                        bin: b,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng;

    fn params(depth: usize) -> TreeParams {
        TreeParams {
            max_depth: depth,
            min_leaf: 1,
            lambda: 0.0,
            feature_fraction: 1.0,
        }
    }

    #[test]
    fn step_function_split_exactly() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v < 10.0 { 1.0 } else { 5.0 }).collect();
        let data = Binned::new(&x, 1, 64);
        let grad: Vec<f64> = y.iter().map(|v| -v).collect();
        let hess = vec![1.0; 20];
        let rows: Vec<u32> = (0..20).collect();
        let t = fit_tree(&data, &rows, &grad, &hess, &params(1), &mut rng(0));
        assert_eq!(t.depth(), 1);
        assert_eq!(t.predict(&[3.0]), 1.0);
        assert_eq!(t.predict(&[15.0]), 5.0);
        assert_eq!(t.predict(&[9.5]), 1.0);
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let data = Binned::new(&x, 1, 64);
        let grad = vec![-2.0; 10];
        let hess = vec![1.0; 10];
        let rows: Vec<u32> = (0..10).collect();
        let t = fit_tree(&data, &rows, &grad, &hess, &params(4), &mut rng(0));
        assert_eq!(t, Tree::leaf(2.0));
    }

    #[test]
    fn quantile_bins_cap_distinct_values() {
        let x: Vec<f64> = (0..1000).map(|i| f64::from(i) * 0.5).collect();
        let data = Binned::new(&x, 1, 16);
        assert!(data.n_bins(0) <= 16);
        let rows: Vec<u32> = (0..1000).collect();
        let grad: Vec<f64> = x.iter().map(|v| -v).collect();
        let hess = vec![1.0; 1000];
        let t = fit_tree(&data, &rows, &grad, &hess, &params(3), &mut rng(0));
        assert!(t.n_leaves() <= 8);
        assert!(t.predict(&[0.0]) < t.predict(&[499.0]));
    }

    #[test]
    fn min_leaf_respected() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = (0..10).map(|i| if i == 0 { 100.0 } else { 0.0 }).collect();
        let data = Binned::new(&x, 1, 64);
        let grad: Vec<f64> = y.iter().map(|v| -v).collect();
        let hess = vec![1.0; 10];
        let rows: Vec<u32> = (0..10).collect();
        let p = TreeParams { min_leaf: 3, ..params(1) };
        let t = fit_tree(&data, &rows, &grad, &hess, &p, &mut rng(0));
        // the outlier alone cannot form a leaf
        assert!((t.predict(&[0.0]) - 100.0 / 3.0).abs() < 1e-9);
    }
}
