//! Soft-margin SVM with an RBF kernel, trained by SMO with second-order
//! working-set selection.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SegmentLabel;
use crate::error::{Error, Result};
use crate::util::{rng, shuffle};

pub const C_GRID: [f64; 3] = [0.1, 1.0, 10.0];
pub const GAMMA_GRID: [f64; 3] = [0.01, 0.1, 1.0];

const TAU: f64 = 1e-12;
const DENSE_KERNEL_LIMIT: usize = 3000;
const MAGIC: &str = "SHOPRANK-SVM 1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
    /// `None` means `1 / feature dimension`.
    pub gamma: Option<f64>,
    pub tolerance: f64,
    /// `None` means `100_000 + 100 * n`.
    pub max_iter: Option<usize>,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: None,
            tolerance: 1e-3,
            max_iter: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub c: f64,
    pub gamma: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Standardized support vectors with their `y * alpha` coefficients.
    pub support: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub violation: f64,
}

fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

struct Kernel<'a> {
    x: &'a [Vec<f64>],
    gamma: f64,
    dense: Option<Vec<f64>>,
}

impl<'a> Kernel<'a> {
    fn new(x: &'a [Vec<f64>], gamma: f64) -> Self {
        let n = x.len();
        let dense = (n <= DENSE_KERNEL_LIMIT).then(|| {
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = rbf(gamma, &x[i], &x[j]);
                    k[i * n + j] = v;
                    k[j * n + i] = v;
                }
            }
            k
        });
        Self { x, gamma, dense }
    }

    fn row(&self, i: usize, out: &mut Vec<f64>) {
        let n = self.x.len();
        out.clear();
        match &self.dense {
            Some(k) => out.extend_from_slice(&k[i * n..(i + 1) * n]),
            None => out.extend(self.x.iter().map(|xj| rbf(self.gamma, &self.x[i], xj))),
        }
    }
}

fn standardize(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n;
        }
    }
    let mut scale = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            scale[k] += (r[k] - mean[k]).powi(2) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    (mean, scale)
}

impl SvmModel {
    fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Positive values favour broad.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                actual: x.len(),
            });
        }
        let z = self.transform(x);
        let s: f64 = self
            .support
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * rbf(self.gamma, sv, &z))
            .sum();
        Ok(s - self.rho)
    }

    pub fn accuracy(&self, rows: &[(Vec<f64>, SegmentLabel)]) -> Result<f64> {
        let mut hits = 0;
        for (x, y) in rows {
            hits += usize::from(svm_predict(self, x)? == *y);
        }
        Ok(hits as f64 / rows.len().max(1) as f64)
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(format!("{MAGIC}\n{}\n", serde_json::to_string_pretty(self)?))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (head, body) = text.split_once('\n').unwrap_or((text, ""));
        if head.trim() != MAGIC {
            return Err(Error::ModelFormat(format!("expected `{MAGIC}`, found `{head}`")));
        }
        Ok(serde_json::from_str(body)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Sign of the decision function; zero goes to broad.
pub fn svm_predict(model: &SvmModel, features: &[f64]) -> Result<SegmentLabel> {
    Ok(if model.decision(features)? >= 0.0 {
        SegmentLabel::Broad
    } else {
        SegmentLabel::Narrow
    })
}

/// Exact duplicate rows are collapsed before solving, so the decision
/// function does not depend on row multiplicity.
pub fn svm_train(rows: &[(Vec<f64>, SegmentLabel)], params: &SvmParams) -> Result<SvmModel> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("svm training set is empty".into()));
    }
    let d = rows[0].0.len();
    if let Some((x, _)) = rows.iter().find(|(x, _)| x.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: x.len(),
        });
    }
    if rows.iter().any(|(x, _)| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("svm features contain NaN or Inf".into()));
    }
    let mut seen = BTreeSet::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (x, y) in rows {
        let key: (Vec<u64>, SegmentLabel) = (x.iter().map(|v| v.to_bits()).collect(), *y);
        if seen.insert(key) {
            xs.push(x.clone());
            ys.push(y.sign());
        }
    }
    if !(ys.contains(&1.0) && ys.contains(&-1.0)) {
        return Err(Error::InvalidInput("svm training needs both classes".into()));
    }
    if params.c <= 0.0 {
        return Err(Error::InvalidConfig("svm C must be positive".into()));
    }
    let gamma = params.gamma.unwrap_or(1.0 / d.max(1) as f64);
    let (mean, scale) = standardize(&xs);
    let z: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| x.iter().zip(mean.iter().zip(&scale)).map(|(v, (m, s))| (v - m) / s).collect())
        .collect();

    let n = z.len();
    let c = params.c;
    let kernel = Kernel::new(&z, gamma);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = params.max_iter.unwrap_or(100_000 + 100 * n);
    let (mut ki, mut kj) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);

    let mut iterations = 0;
    let mut violation;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], ys[t]) && -ys[t] * grad[t] > gmax {
                gmax = -ys[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            if low(alpha[t], ys[t]) {
                gmin = gmin.min(-ys[t] * grad[t]);
            }
        }
        violation = gmax - gmin;
        if i == usize::MAX || violation < params.tolerance {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::NonConvergence {
                iterations,
                violation,
            });
        }
        kernel.row(i, &mut ki);
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], ys[t]) {
                continue;
            }
            let b = gmax + ys[t] * grad[t];
            if b > 0.0 {
                // the RBF diagonal is 1
                let a = (ki[i] + 1.0 - 2.0 * ki[t]).max(TAU);
                let obj = -(b * b) / a;
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        if j == usize::MAX {
            break;
        }
        kernel.row(j, &mut kj);
        let (ai, aj) = (alpha[i], alpha[j]);
        let (yi, yj) = (ys[i], ys[j]);
        let quad = (ki[i] + kj[j] - 2.0 * ki[j]).max(TAU);
        if yi != yj {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            grad[t] += ys[t] * (yi * ki[t] * dai + yj * kj[t] * daj);
        }
        iterations += 1;
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = ys[t] * grad[t];
        if alpha[t] >= c {
            if ys[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if ys[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            free_sum += yg;
        }
    }
    let rho = if n_free > 0 {
        free_sum / n_free as f64
    } else {
        (ub + lb) / 2.0
    };

    let mut support = Vec::new();
    let mut coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support.push(z[t].clone());
            coef.push(ys[t] * alpha[t]);
        }
    }
    Ok(SvmModel {
        c,
        gamma,
        mean,
        scale,
        support,
        coef,
        rho,
        iterations,
        violation,
    })
}

/// Stratified k-fold grid search; ties keep the earlier grid point.
pub fn select_svm_params(
    rows: &[(Vec<f64>, SegmentLabel)],
    c_grid: &[f64],
    gamma_grid: &[f64],
    folds: usize,
    base: &SvmParams,
    seed: u64,
) -> Result<(SvmParams, f64)> {
    if folds < 2 {
        return Err(Error::InvalidConfig("cross-validation needs at least 2 folds".into()));
    }
    let mut rng = rng(seed);
    let mut fold_of = vec![0usize; rows.len()];
    for label in SegmentLabel::ALL {
        let mut idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].1 == label).collect();
        shuffle(&mut idx, &mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            fold_of[i] = k % folds;
        }
    }
    let mut best: Option<(SvmParams, f64)> = None;
    for &c in c_grid {
        for &g in gamma_grid {
            let p = SvmParams {
                c,
                gamma: Some(g),
                ..*base
            };
            let mut hits = 0usize;
            for f in 0..folds {
                let train: Vec<_> = (0..rows.len())
                    .filter(|&i| fold_of[i] != f)
                    .map(|i| rows[i].clone())
                    .collect();
                let model = svm_train(&train, &p)?;
                for i in (0..rows.len()).filter(|&i| fold_of[i] == f) {
                    hits += usize::from(svm_predict(&model, &rows[i].0)? == rows[i].1);
                }
            }
            let acc = hits as f64 / rows.len() as f64;
            if best.as_ref().is_none_or(|(_, b)| acc > *b) {
                best = Some((p, acc));
            }
        }
    }
    best.ok_or_else(|| Error::InvalidConfig("empty svm parameter grid".into()))
}
