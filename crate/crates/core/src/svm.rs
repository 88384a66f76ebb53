//! Soft-margin binary SVM trained in the dual, plus grid search.
//!
//! The solver is SMO with second-order working-set selection over a
//! precomputed Gram matrix, without shrinking. It stops when the maximal
//! violating pair gap drops below `tol`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bag::Label;
use crate::binio;
use crate::error::{invalid_arg, invalid_data, Error, Result};

pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
const MAX_ITER_FACTOR: usize = 10_000_000;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(invalid_arg(format!("RBF gamma must be positive, got {gamma}")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

/// Symmetric Gram matrix, row-major.
pub fn gram_matrix(kernel: &KernelSpec, rows: &[&[f64]]) -> Vec<f64> {
    let n = rows.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| kernel.eval(rows[i], rows[j])).collect())
        .collect();
    let mut g = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}

/// Dual solution over a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

/// Solves `min ½ αᵀQα − Σα` s.t. `yᵀα = 0`, `0 ≤ α ≤ c` with
/// `Q_ij = y_i y_j K_ij`. `y` holds ±1.
pub fn solve_dual(gram: &[f64], y: &[f64], c: f64, tol: f64) -> Result<DualSolution> {
    solve_dual_bounded(gram, y, &vec![c; y.len()], tol)
}

/// As [`solve_dual`] with a separate upper bound `c[i]` per sample.
pub fn solve_dual_bounded(gram: &[f64], y: &[f64], c: &[f64], tol: f64) -> Result<DualSolution> {
    let n = y.len();
    if gram.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            got: gram.len(),
        });
    }
    if c.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: c.len() });
    }
    if !c.iter().all(|&ci| ci > 0.0 && ci.is_finite()) || !(tol > 0.0) {
        return Err(invalid_arg("C and tol must be positive"));
    }
    let k = |i: usize, j: usize| gram[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let is_up = |t: usize, a: f64| (y[t] > 0.0 && a < c[t]) || (y[t] < 0.0 && a > 0.0);
    let is_low = |t: usize, a: f64| (y[t] > 0.0 && a > 0.0) || (y[t] < 0.0 && a < c[t]);
    let max_iter = MAX_ITER_FACTOR.max(100 * n);
    let mut iterations = 0;

    while iterations < max_iter {
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if is_up(t, alpha[t]) && -y[t] * grad[t] > g_max {
                g_max = -y[t] * grad[t];
                i_sel = t;
            }
        }
        let mut g_min = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            if !is_low(t, alpha[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            g_min = g_min.min(v);
            if i_sel == usize::MAX {
                continue;
            }
            let b = g_max - v;
            if b > 0.0 {
                let a = k(i_sel, i_sel) + k(t, t) - 2.0 * k(i_sel, t);
                let a = if a > 0.0 { a } else { TAU };
                let obj = -(b * b) / a;
                if obj < obj_min {
                    obj_min = obj;
                    j_sel = t;
                }
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || g_max - g_min < tol {
            break;
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let (ci, cj) = (c[i], c[j]);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let quad = k(i, i) + k(j, j) - 2.0 * k(i, j);
        let quad = if quad > 0.0 { quad } else { TAU };
        if y[i] != y[j] {
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
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * dai * k(t, i) + y[j] * daj * k(t, j));
        }
    }
    if iterations >= max_iter {
        log::warn!("SMO reached {max_iter} iterations before the gap fell below {tol}");
    }

    // Bias from free vectors, else the midpoint of the feasible interval.
    let mut free_sum = 0.0;
    let mut n_free = 0usize;
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c[t] {
            free_sum += yg;
            n_free += 1;
        } else if (alpha[t] >= c[t] && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if n_free > 0 {
        free_sum / n_free as f64
    } else {
        match (ub.is_finite(), lb.is_finite()) {
            (true, true) => (ub + lb) / 2.0,
            (true, false) => ub,
            (false, true) => lb,
            (false, false) => 0.0,
        }
    };
    Ok(DualSolution {
        alpha,
        bias: -rho,
        iterations,
    })
}

/// Trained classifier: `f(x) = Σ coef_i k(sv_i, x) + bias` with
/// `coef_i = α_i y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: KernelSpec,
    pub c: f64,
    pub dim: usize,
    pub support: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub bias: f64,
}

fn check_training(rows: &[&[f64]], labels: &[Label]) -> Result<usize> {
    if rows.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            got: labels.len(),
        });
    }
    if rows.len() < 2 {
        return Err(invalid_data("SVM training needs at least two rows"));
    }
    if !(labels.contains(&Label::Positive) && labels.contains(&Label::Negative)) {
        return Err(Error::SingleClass("SVM training labels contain one class".into()));
    }
    let d = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    Ok(d)
}

/// Trains on `rows` and returns the model with the full dual solution.
pub fn train_svm_dual(
    rows: &[&[f64]],
    labels: &[Label],
    c: f64,
    kernel: KernelSpec,
    tol: f64,
) -> Result<(SvmModel, DualSolution)> {
    let dim = check_training(rows, labels)?;
    kernel.validate()?;
    let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
    let gram = gram_matrix(&kernel, rows);
    let sol = solve_dual(&gram, &y, c, tol)?;
    Ok((model_from_dual(rows, &y, &sol, c, kernel, dim), sol))
}

pub fn train_svm(rows: &[&[f64]], labels: &[Label], c: f64, kernel: KernelSpec, tol: f64) -> Result<SvmModel> {
    Ok(train_svm_dual(rows, labels, c, kernel, tol)?.0)
}

/// Trains with class-balanced bounds `C_y = C · n / (2 n_y)`, so each class
/// carries the same total box weight.
pub fn train_svm_balanced(
    rows: &[&[f64]],
    labels: &[Label],
    c: f64,
    kernel: KernelSpec,
    tol: f64,
) -> Result<SvmModel> {
    let dim = check_training(rows, labels)?;
    kernel.validate()?;
    let n = labels.len() as f64;
    let n_pos = labels.iter().filter(|&&l| l == Label::Positive).count() as f64;
    let bound = |l: Label| match l {
        Label::Positive => c * n / (2.0 * n_pos),
        Label::Negative => c * n / (2.0 * (n - n_pos)),
    };
    let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
    let cs: Vec<f64> = labels.iter().map(|&l| bound(l)).collect();
    let sol = solve_dual_bounded(&gram_matrix(&kernel, rows), &y, &cs, tol)?;
    Ok(model_from_dual(rows, &y, &sol, c, kernel, dim))
}

fn model_from_dual(rows: &[&[f64]], y: &[f64], sol: &DualSolution, c: f64, kernel: KernelSpec, dim: usize) -> SvmModel {
    let (support, coef) = sol
        .alpha
        .iter()
        .enumerate()
        .filter(|(_, &a)| a > 0.0)
        .map(|(i, &a)| (rows[i].to_vec(), a * y[i]))
        .unzip();
    SvmModel {
        kernel,
        c,
        dim,
        support,
        coef,
        bias: sol.bias,
    }
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self
            .support
            .iter()
            .zip(&self.coef)
            .map(|(sv, &a)| a * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias)
    }

    /// Sign of the decision value; exactly zero maps to positive.
    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        Ok(Label::from_score(self.decision(x)?))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_header(w, SVM_MAGIC, SVM_VERSION)?;
        match self.kernel {
            KernelSpec::Linear => {
                binio::write_u8(w, 0)?;
                binio::write_f64(w, 0.0)?;
            }
            KernelSpec::Rbf { gamma } => {
                binio::write_u8(w, 1)?;
                binio::write_f64(w, gamma)?;
            }
        }
        binio::write_f64(w, self.c)?;
        binio::write_usize(w, self.dim)?;
        binio::write_f64(w, self.bias)?;
        binio::write_f64s(w, &self.coef)?;
        for sv in &self.support {
            binio::write_f64s(w, sv)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, SVM_MAGIC, SVM_VERSION)?;
        let tag = binio::read_u8(r)?;
        let gamma = binio::read_f64(r)?;
        let kernel = match tag {
            0 => KernelSpec::Linear,
            1 => KernelSpec::Rbf { gamma },
            t => return Err(Error::Format(format!("unknown kernel tag {t}"))),
        };
        let c = binio::read_f64(r)?;
        let dim = binio::read_usize(r)?;
        let bias = binio::read_f64(r)?;
        let coef = binio::read_f64s(r)?;
        let mut support = Vec::with_capacity(coef.len());
        for _ in 0..coef.len() {
            let sv = binio::read_f64s(r)?;
            if sv.len() != dim {
                return Err(Error::Format("support vector dimension mismatch".into()));
            }
            support.push(sv);
        }
        Ok(Self {
            kernel,
            c,
            dim,
            support,
            coef,
            bias,
        })
    }
}

const SVM_MAGIC: &[u8; 8] = b"VMSVM\0\0\0";
const SVM_VERSION: u32 = 1;

/// One SVM hyperparameter setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: KernelSpec,
}

/// Kernel family used to build a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf,
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(KernelKind::Linear),
            "rbf" => Ok(KernelKind::Rbf),
            other => Err(invalid_arg(format!("unknown kernel `{other}` (expected linear or rbf)"))),
        }
    }
}

/// `2^j / d` for `j ∈ −3..=3`.
pub fn default_gamma_grid(dim: usize) -> Vec<f64> {
    (-3..=3).map(|j| 2f64.powi(j) / dim.max(1) as f64).collect()
}

/// Cartesian grid ordered by ascending C, then ascending gamma; that order
/// is the tie-break preference of [`grid_search`].
pub fn svm_grid(kind: KernelKind, c_grid: &[f64], gamma_grid: &[f64]) -> Vec<SvmParams> {
    let mut cs = c_grid.to_vec();
    cs.sort_by(f64::total_cmp);
    cs.dedup();
    let mut gs = gamma_grid.to_vec();
    gs.sort_by(f64::total_cmp);
    gs.dedup();
    match kind {
        KernelKind::Linear => cs
            .iter()
            .map(|&c| SvmParams {
                c,
                kernel: KernelSpec::Linear,
            })
            .collect(),
        KernelKind::Rbf => cs
            .iter()
            .flat_map(|&c| {
                gs.iter().map(move |&gamma| SvmParams {
                    c,
                    kernel: KernelSpec::Rbf { gamma },
                })
            })
            .collect(),
    }
}

/// Inner cross-validation folds as lists of held-out item indices.
///
/// Items are grouped (by video) when there are at least `k` groups, so no
/// group straddles folds; otherwise items are split individually. Groups or
/// items are dealt round-robin after a seeded shuffle within each class,
/// negatives first.
pub fn inner_folds(groups: &[&str], labels: &[Label], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if groups.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: groups.len(),
        });
    }
    if k < 2 {
        return Err(invalid_arg(format!("inner fold count must be >= 2, got {k}")));
    }
    let n = labels.len();
    if n < 2 {
        return Err(invalid_data("inner cross-validation needs at least two items"));
    }
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        by_group.entry(g).or_default().push(i);
    }
    let units: Vec<Vec<usize>> = if by_group.len() >= k {
        by_group.into_values().collect()
    } else {
        (0..n).map(|i| vec![i]).collect()
    };
    let k = k.min(units.len());
    let vote = |u: &Vec<usize>| u.iter().map(|&i| labels[i].sign()).sum::<f64>();
    let (mut neg, mut pos): (Vec<Vec<usize>>, Vec<Vec<usize>>) = units.into_iter().partition(|u| vote(u) < 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    neg.shuffle(&mut rng);
    pos.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, u) in neg.into_iter().chain(pos).enumerate() {
        folds[i % k].extend(u);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult<P> {
    pub best: P,
    pub best_score: f64,
    /// Mean inner accuracy per grid point, in grid order.
    pub scores: Vec<f64>,
}

/// Picks the grid point with the highest mean held-out accuracy; earlier grid
/// points win ties. `eval(params, train_idx, test_idx)` returns accuracy in
/// `[0, 1]`. Folds whose training part holds a single class are skipped.
pub fn grid_search<P, F>(grid: &[P], labels: &[Label], folds: &[Vec<usize>], eval: F) -> Result<GridResult<P>>
where
    P: Clone + Sync,
    F: Fn(&P, &[usize], &[usize]) -> Result<f64> + Sync,
{
    if grid.is_empty() {
        return Err(invalid_arg("hyperparameter grid is empty"));
    }
    let n = labels.len();
    let splits: Vec<(Vec<usize>, &Vec<usize>)> = folds
        .iter()
        .filter(|test| !test.is_empty())
        .map(|test| {
            let mut held = vec![false; n];
            for &i in test.iter() {
                held[i] = true;
            }
            ((0..n).filter(|&i| !held[i]).collect::<Vec<_>>(), test)
        })
        .filter(|(train, _)| {
            train.iter().any(|&i| labels[i] == Label::Positive) && train.iter().any(|&i| labels[i] == Label::Negative)
        })
        .collect();
    let scores: Vec<f64> = if grid.len() == 1 || splits.is_empty() {
        vec![0.0; grid.len()]
    } else {
        grid.par_iter()
            .map(|p| {
                let mut total = 0.0;
                for (train, test) in &splits {
                    total += eval(p, train, test)?;
                }
                Ok(total / splits.len() as f64)
            })
            .collect::<Result<_>>()?
    };
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(GridResult {
        best: grid[best].clone(),
        best_score: scores[best],
        scores,
    })
}

/// Grid search for a plain SVM on vectors.
pub fn select_svm(
    rows: &[&[f64]],
    labels: &[Label],
    groups: &[&str],
    grid: &[SvmParams],
    inner_k: usize,
    seed: u64,
    tol: f64,
) -> Result<GridResult<SvmParams>> {
    let folds = inner_folds(groups, labels, inner_k, seed)?;
    grid_search(grid, labels, &folds, |p, train, test| {
        let tr: Vec<&[f64]> = train.iter().map(|&i| rows[i]).collect();
        let ty: Vec<Label> = train.iter().map(|&i| labels[i]).collect();
        let m = train_svm(&tr, &ty, p.c, p.kernel, tol)?;
        let mut hits = 0usize;
        for &i in test {
            hits += usize::from(m.predict(rows[i])? == labels[i]);
        }
        Ok(hits as f64 / test.len() as f64)
    })
}
