//! Matrix factorization of the session x product click matrix.
//!
//! Observed cells are fitted to `ln(1 + clicks)`; unobserved cells are pushed
//! towards zero through uniformly sampled negatives. Each observed cell draws
//! `negatives` columns, so row `u` effectively weights every cell by
//! `nnz(u) * negatives / n_cols`, which is the weight the full-matrix loss uses.

use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EmbeddingTable;
use crate::corpus::{ProductId, SessionLog};
use crate::error::{Error, Result};
use crate::util::{dot, rng};

#[derive(Clone, Debug)]
pub struct ClickMatrix {
    n_rows: usize,
    columns: Vec<ProductId>,
    /// `(row, column index, click count)`.
    entries: Vec<(u32, u32, f64)>,
}

impl ClickMatrix {
    pub fn new(
        n_rows: usize,
        columns: Vec<ProductId>,
        cells: impl IntoIterator<Item = (usize, ProductId, f64)>,
    ) -> Result<Self> {
        let col_index: HashMap<ProductId, u32> = columns
            .iter()
            .enumerate()
            .map(|(i, p)| (*p, i as u32))
            .collect();
        let mut merged: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for (row, pid, count) in cells {
            if row >= n_rows {
                return Err(Error::InvalidInput(format!("row {row} out of range")));
            }
            let col = *col_index
                .get(&pid)
                .ok_or_else(|| Error::InvalidInput(format!("product {pid} not a column")))?;
            *merged.entry((row as u32, col)).or_insert(0.0) += count;
        }
        let entries: Vec<(u32, u32, f64)> = merged
            .into_iter()
            .filter(|(_, c)| *c > 0.0)
            .map(|((r, c), v)| (r, c, v))
            .collect();
        if entries.is_empty() {
            return Err(Error::InvalidInput("click matrix has no clicks".into()));
        }
        Ok(Self {
            n_rows,
            columns,
            entries,
        })
    }

    /// One row per session with at least one click; `products` become columns.
    pub fn from_sessions<'a>(
        logs: impl IntoIterator<Item = &'a SessionLog>,
        products: &[ProductId],
    ) -> Result<Self> {
        let mut cells = Vec::new();
        let mut row = 0;
        for log in logs {
            let before = cells.len();
            cells.extend(log.clicked_products().map(|p| (row, p, 1.0)));
            if cells.len() > before {
                row += 1;
            }
        }
        Self::new(row, products.to_vec(), cells)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn columns(&self) -> &[ProductId] {
        &self.columns
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub negatives: usize,
    pub init_scale: f64,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            epochs: 15,
            learning_rate: 0.05,
            regularization: 0.01,
            negatives: 4,
            init_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MfModel {
    /// Unit-norm product vectors keyed by product id; never-clicked products
    /// hold the zero vector.
    pub table: EmbeddingTable,
    /// Full-matrix objective before training and after each epoch.
    pub losses: Vec<f64>,
    pub flagged: Vec<ProductId>,
}

struct Factors {
    dim: usize,
    rows: Vec<f64>,
    cols: Vec<f64>,
}

impl Factors {
    fn row(&self, r: usize) -> &[f64] {
        &self.rows[r * self.dim..(r + 1) * self.dim]
    }
    fn col(&self, c: usize) -> &[f64] {
        &self.cols[c * self.dim..(c + 1) * self.dim]
    }
}

fn sgd_step(f: &mut Factors, r: usize, c: usize, target: f64, lr: f64, reg: f64) {
    let d = f.dim;
    let pred = dot(f.row(r), f.col(c));
    let err = target - pred;
    let (rs, cs) = (r * d, c * d);
    for k in 0..d {
        let p = f.rows[rs + k];
        let q = f.cols[cs + k];
        f.rows[rs + k] += lr * (err * q - reg * p);
        f.cols[cs + k] += lr * (err * p - reg * q);
    }
}

fn objective(f: &Factors, m: &ClickMatrix, row_weight: &[f64], reg: f64) -> f64 {
    let d = f.dim;
    let mut observed = 0.0;
    for &(r, c, v) in &m.entries {
        let e = v.ln_1p() - dot(f.row(r as usize), f.col(c as usize));
        observed += e * e;
    }
    // sum_j (p.q_j)^2 = p^T G p with G = sum_j q_j q_j^T
    let mut gram = vec![0.0; d * d];
    for c in 0..m.columns.len() {
        let q = f.col(c);
        for a in 0..d {
            for b in 0..d {
                gram[a * d + b] += q[a] * q[b];
            }
        }
    }
    let mut unobserved = 0.0;
    for (r, w) in row_weight.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let p = f.row(r);
        let mut s = 0.0;
        for a in 0..d {
            s += p[a] * dot(&gram[a * d..(a + 1) * d], p);
        }
        unobserved += w * s;
    }
    let l2: f64 = f.rows.iter().chain(&f.cols).map(|x| x * x).sum();
    observed + unobserved + reg * l2
}

pub fn mf_train(matrix: &ClickMatrix, config: &MfConfig, seed: u64) -> Result<MfModel> {
    if config.dim < 2 {
        return Err(Error::InvalidConfig("matrix factorization needs dim >= 2".into()));
    }
    let d = config.dim;
    let n_cols = matrix.columns.len();
    let mut rng = rng(seed);
    let init = Normal::new(0.0, config.init_scale)
        .map_err(|e| Error::InvalidConfig(format!("init_scale: {e}")))?;
    let mut f = Factors {
        dim: d,
        rows: (0..matrix.n_rows * d).map(|_| init.sample(&mut rng)).collect(),
        cols: (0..n_cols * d).map(|_| init.sample(&mut rng)).collect(),
    };
    let mut nnz_row = vec![0usize; matrix.n_rows];
    let mut clicked_col = vec![false; n_cols];
    for &(r, c, _) in &matrix.entries {
        nnz_row[r as usize] += 1;
        clicked_col[c as usize] = true;
    }
    let row_weight: Vec<f64> = nnz_row
        .iter()
        .map(|&n| (n * config.negatives) as f64 / n_cols as f64)
        .collect();

    let mut losses = vec![objective(&f, matrix, &row_weight, config.regularization)];
    let mut order: Vec<usize> = (0..matrix.entries.len()).collect();
    for epoch in 0..config.epochs {
        crate::util::shuffle(&mut order, &mut rng);
        for &e in &order {
            let (r, c, v) = matrix.entries[e];
            let (r, c) = (r as usize, c as usize);
            sgd_step(&mut f, r, c, v.ln_1p(), config.learning_rate, config.regularization);
            for _ in 0..config.negatives {
                let j = rng.gen_range(0..n_cols);
                sgd_step(&mut f, r, j, 0.0, config.learning_rate, config.regularization);
            }
        }
        let loss = objective(&f, matrix, &row_weight, config.regularization);
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "matrix factorization loss is {loss} after epoch {}",
                epoch + 1
            )));
        }
        losses.push(loss);
    }

    let mut table = EmbeddingTable::new(d)?;
    let mut flagged = Vec::new();
    for (c, pid) in matrix.columns.iter().enumerate() {
        let q = f.col(c);
        let n = crate::util::norm(q);
        let v = if clicked_col[c] && n > 0.0 {
            q.iter().map(|x| x / n).collect()
        } else {
            flagged.push(*pid);
            vec![0.0; d]
        };
        table.insert(pid.to_string(), v)?;
    }
    Ok(MfModel {
        table,
        losses,
        flagged,
    })
}
