//! Variational Bayesian Gaussian mixture with a Gauss-Wishart prior.
//!
//! Mean-field posterior `q(Z) q(π) Π_k q(μ_k, Λ_k)` with coordinate-ascent
//! updates. Every iteration performs the M-step on the current
//! responsibilities, evaluates the evidence lower bound, then recomputes
//! responsibilities; the bound is therefore non-decreasing across the trace.
//! Components whose expected mixing weight `α_k / Σα` falls below a threshold
//! are pruned after convergence.
//!
//! The returned trace is that of the final coordinate-ascent run; see
//! [`VbgmmConfig::delete_moves`].

use std::f64::consts::PI;
use std::io::{Read, Write};

use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::binio;
use crate::error::{invalid_arg, invalid_data, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VbgmmConfig {
    pub k_init: usize,
    pub prune_threshold: f64,
    /// Relative ELBO change below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    /// After convergence, try removing each live component and re-running
    /// coordinate ascent; keep the result whenever the bound improves. Plain
    /// coordinate ascent cannot merge two components sharing one cluster.
    pub delete_moves: bool,
}

impl Default for VbgmmConfig {
    fn default() -> Self {
        Self {
            k_init: 50,
            prune_threshold: 0.01,
            tol: 1e-5,
            max_iter: 200,
            delete_moves: true,
        }
    }
}

impl VbgmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_init == 0 {
            return Err(invalid_arg("k_init must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.prune_threshold) {
            return Err(invalid_arg("prune threshold must lie in [0, 1)"));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(invalid_arg("tol must be positive and max_iter >= 1"));
        }
        Ok(())
    }
}

/// Dirichlet and Gauss-Wishart hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VbgmmPrior {
    pub alpha0: f64,
    pub beta0: f64,
    pub m0: DVector<f64>,
    /// Wishart scale matrix `W0`.
    pub w0: DMatrix<f64>,
    pub nu0: f64,
}

impl VbgmmPrior {
    /// `α0 = 1/K`, `β0 = 1`, `m0` = data mean, `ν0 = d + 2`,
    /// `W0 = diag(var)⁻¹ / ν0` so that `E[Λ] = ν0 W0` matches the data
    /// precision per dimension.
    pub fn weakly_informative(rows: &[&[f64]], k_init: usize) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.len() < 2 || d == 0 {
            return Err(invalid_data("prior needs at least two non-empty rows"));
        }
        let n = rows.len() as f64;
        let mut mean = DVector::zeros(d);
        for r in rows {
            for j in 0..d {
                mean[j] += r[j];
            }
        }
        mean /= n;
        let mut var = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let nu0 = d as f64 + 2.0;
        let w0 = DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                1.0 / ((var[i] / n).max(1e-12) * nu0)
            } else {
                0.0
            }
        });
        Ok(Self {
            alpha0: 1.0 / k_init as f64,
            beta0: 1.0,
            m0: mean,
            w0,
            nu0,
        })
    }

    pub fn dim(&self) -> usize {
        self.m0.len()
    }

    fn validate(&self) -> Result<Cholesky<f64, Dyn>> {
        let d = self.dim();
        if !(self.alpha0 > 0.0 && self.beta0 > 0.0) {
            return Err(invalid_arg("alpha0 and beta0 must be positive"));
        }
        if self.nu0 <= d as f64 - 1.0 {
            return Err(invalid_arg(format!("nu0 must exceed d - 1 = {}", d as f64 - 1.0)));
        }
        if self.w0.nrows() != d || self.w0.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.w0.nrows(),
            });
        }
        let asym = (&self.w0 - self.w0.transpose()).amax();
        if asym > 1e-12 * self.w0.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite("W0 is not symmetric".into()));
        }
        Cholesky::new(self.w0.clone()).ok_or_else(|| Error::NotPositiveDefinite("W0".into()))
    }
}

/// Posterior Gauss-Wishart factor of one component plus cached expectations.
#[derive(Debug, Clone)]
pub struct Component {
    pub alpha: f64,
    pub beta: f64,
    pub m: DVector<f64>,
    pub nu: f64,
    /// `W_k⁻¹`, the inverse Wishart scale.
    pub w_inv: DMatrix<f64>,
    chol_w_inv: Cholesky<f64, Dyn>,
    /// `ln |W_k|`.
    pub ln_det_w: f64,
    /// `E[ln |Λ_k|]`.
    pub e_ln_det_lambda: f64,
}

impl PartialEq for Component {
    fn eq(&self, other: &Self) -> bool {
        self.alpha == other.alpha
            && self.beta == other.beta
            && self.m == other.m
            && self.nu == other.nu
            && self.w_inv == other.w_inv
    }
}

/// Cholesky with escalating diagonal jitter starting at `1e-8`.
fn robust_cholesky(mut m: DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((m, c));
    }
    let d = m.nrows();
    let mut jitter = 1e-8;
    for _ in 0..12 {
        for i in 0..d {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m.clone()) {
            warn!("{what}: scale update was singular, added {jitter:e}·I jitter");
            return Ok((m, c));
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite(what.to_string()))
}

fn ln_det_from_chol(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

impl Component {
    fn new(alpha: f64, beta: f64, m: DVector<f64>, nu: f64, w_inv: DMatrix<f64>) -> Result<Self> {
        let (w_inv, chol) = robust_cholesky(w_inv, "component scale")?;
        let d = m.len();
        let ln_det_w = -ln_det_from_chol(&chol);
        let e_ln_det_lambda = (1..=d)
            .map(|i| digamma((nu + 1.0 - i as f64) / 2.0))
            .sum::<f64>()
            + d as f64 * 2f64.ln()
            + ln_det_w;
        Ok(Self {
            alpha,
            beta,
            m,
            nu,
            w_inv,
            chol_w_inv: chol,
            ln_det_w,
            e_ln_det_lambda,
        })
    }

    /// `vᵀ W_k v` via the Cholesky factor of `W_k⁻¹`.
    fn w_quad(&self, v: &DVector<f64>) -> f64 {
        let y = self
            .chol_w_inv
            .l_dirty()
            .solve_lower_triangular(v)
            .expect("triangular factor is non-singular");
        y.norm_squared()
    }

    /// `W_k` explicitly.
    fn w(&self) -> DMatrix<f64> {
        self.chol_w_inv.inverse()
    }
}

/// Fitted variational posterior and the surviving component set.
#[derive(Debug, Clone, PartialEq)]
pub struct VbgmmModel {
    pub prior: VbgmmPrior,
    pub components: Vec<Component>,
    /// Indices of components kept after pruning, ascending.
    pub surviving: Vec<usize>,
    /// ELBO after every iteration.
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
}

/// `ln C(α) = ln Γ(Σα) − Σ ln Γ(α_k)`.
fn ln_dirichlet_norm(alphas: &[f64]) -> f64 {
    ln_gamma(alphas.iter().sum()) - alphas.iter().map(|&a| ln_gamma(a)).sum::<f64>()
}

/// `ln B(W, ν)` of the Wishart normalizer, given `ln |W|`.
fn ln_wishart_norm(ln_det_w: f64, nu: f64, d: usize) -> f64 {
    let df = d as f64;
    -0.5 * nu * ln_det_w
        - 0.5 * nu * df * 2f64.ln()
        - 0.25 * df * (df - 1.0) * PI.ln()
        - (1..=d).map(|i| ln_gamma((nu + 1.0 - i as f64) / 2.0)).sum::<f64>()
}

/// Responsibility-weighted sufficient statistics of one component.
struct Stats {
    n: f64,
    mean: DVector<f64>,
    /// `Σ_n r_nk (x_n − x̄_k)(x_n − x̄_k)ᵀ`, i.e. `N_k S_k`.
    scatter: DMatrix<f64>,
}

fn component_stats(x: &DMatrix<f64>, resp: &DMatrix<f64>, k: usize) -> Stats {
    let d = x.ncols();
    let r = resp.column(k);
    let n: f64 = r.sum();
    if n <= 1e-300 {
        return Stats {
            n: 0.0,
            mean: DVector::zeros(d),
            scatter: DMatrix::zeros(d, d),
        };
    }
    let mean = x.tr_mul(&r) / n;
    let mut centered = x.clone();
    for (i, mut row) in centered.row_iter_mut().enumerate() {
        let s = r[i].sqrt();
        for j in 0..d {
            row[j] = (row[j] - mean[j]) * s;
        }
    }
    let mut scatter = centered.tr_mul(&centered);
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (scatter[(i, j)] + scatter[(j, i)]);
            scatter[(i, j)] = v;
            scatter[(j, i)] = v;
        }
    }
    Stats { n, mean, scatter }
}

struct Fitter<'a> {
    prior: &'a VbgmmPrior,
    w0_inv: DMatrix<f64>,
    ln_det_w0: f64,
    x: DMatrix<f64>,
}

struct Run {
    comps: Vec<Component>,
    trace: Vec<f64>,
    converged: bool,
}

impl Run {
    fn final_elbo(&self) -> f64 {
        *self.trace.last().expect("at least one iteration")
    }
}

fn expected_weights(comps: &[Component]) -> Vec<f64> {
    let total: f64 = comps.iter().map(|c| c.alpha).sum();
    comps.iter().map(|c| c.alpha / total).collect()
}

impl Fitter<'_> {
    /// Coordinate ascent from the given responsibilities until the relative
    /// bound change drops below `cfg.tol` or `cfg.max_iter` is reached.
    fn run(&self, mut resp: DMatrix<f64>, cfg: &VbgmmConfig) -> Result<Run> {
        let k = resp.ncols();
        let mut trace = Vec::new();
        loop {
            let stats: Vec<Stats> = (0..k)
                .into_par_iter()
                .map(|j| component_stats(&self.x, &resp, j))
                .collect();
            let comps = self.m_step(&stats)?;
            let bound = self.elbo(&comps, &stats, &resp);
            let done = trace
                .last()
                .is_some_and(|&prev: &f64| (bound - prev).abs() < cfg.tol * bound.abs());
            trace.push(bound);
            if done || trace.len() >= cfg.max_iter {
                return Ok(Run {
                    comps,
                    trace,
                    converged: done,
                });
            }
            resp = log_rho(&self.x, &comps);
            normalize_rows(&mut resp);
        }
    }

    fn m_step(&self, stats: &[Stats]) -> Result<Vec<Component>> {
        let p = self.prior;
        stats
            .par_iter()
            .map(|s| {
                let beta = p.beta0 + s.n;
                let m = (&p.m0 * p.beta0 + &s.mean * s.n) / beta;
                let diff = &s.mean - &p.m0;
                let w_inv = &self.w0_inv
                    + &s.scatter
                    + (&diff * diff.transpose()) * (p.beta0 * s.n / (p.beta0 + s.n));
                let w_inv = (&w_inv + w_inv.transpose()) * 0.5;
                Component::new(p.alpha0 + s.n, beta, m, p.nu0 + s.n, w_inv)
            })
            .collect()
    }

    fn elbo(&self, comps: &[Component], stats: &[Stats], resp: &DMatrix<f64>) -> f64 {
        let p = self.prior;
        let d = p.dim();
        let df = d as f64;
        let k = comps.len();
        let alphas: Vec<f64> = comps.iter().map(|c| c.alpha).collect();
        let alpha_hat: f64 = alphas.iter().sum();
        let e_ln_pi: Vec<f64> = alphas.iter().map(|&a| digamma(a) - digamma(alpha_hat)).collect();
        let ln_2pi = (2.0 * PI).ln();

        let per_comp: Vec<(f64, f64, f64)> = comps
            .par_iter()
            .zip(stats.par_iter())
            .map(|(c, s)| {
                let w = c.w();
                let mut lik = 0.0;
                if s.n > 0.0 {
                    let tr_sw = (&s.scatter * &w).trace();
                    let dm = &s.mean - &c.m;
                    lik = 0.5
                        * (s.n * (c.e_ln_det_lambda - df / c.beta - c.nu * c.w_quad(&dm) - df * ln_2pi)
                            - c.nu * tr_sw);
                }
                let dm0 = &c.m - &p.m0;
                let tr_w0inv_w = (&self.w0_inv * &w).trace();
                let prior_mu_lambda = 0.5
                    * (df * (p.beta0 / (2.0 * PI)).ln() + c.e_ln_det_lambda
                        - df * p.beta0 / c.beta
                        - p.beta0 * c.nu * c.w_quad(&dm0))
                    + 0.5 * (p.nu0 - df - 1.0) * c.e_ln_det_lambda
                    - 0.5 * c.nu * tr_w0inv_w;
                let entropy_lambda = -ln_wishart_norm(c.ln_det_w, c.nu, d)
                    - 0.5 * (c.nu - df - 1.0) * c.e_ln_det_lambda
                    + 0.5 * c.nu * df;
                let q_mu_lambda = 0.5 * c.e_ln_det_lambda + 0.5 * df * (c.beta / (2.0 * PI)).ln()
                    - 0.5 * df
                    - entropy_lambda;
                (lik, prior_mu_lambda, q_mu_lambda)
            })
            .collect();

        let e_ln_p_x: f64 = per_comp.iter().map(|t| t.0).sum();
        let e_ln_p_z: f64 = stats.iter().zip(&e_ln_pi).map(|(s, e)| s.n * e).sum();
        let e_ln_p_pi = ln_dirichlet_norm(&vec![p.alpha0; k])
            + (p.alpha0 - 1.0) * e_ln_pi.iter().sum::<f64>();
        let e_ln_p_mu_lambda: f64 = per_comp.iter().map(|t| t.1).sum::<f64>()
            + k as f64 * ln_wishart_norm(self.ln_det_w0, p.nu0, d);
        let e_ln_q_z: f64 = resp.iter().map(|&r| if r > 0.0 { r * r.ln() } else { 0.0 }).sum();
        let e_ln_q_pi: f64 = alphas
            .iter()
            .zip(&e_ln_pi)
            .map(|(a, e)| (a - 1.0) * e)
            .sum::<f64>()
            + ln_dirichlet_norm(&alphas);
        let e_ln_q_mu_lambda: f64 = per_comp.iter().map(|t| t.2).sum();

        e_ln_p_x + e_ln_p_z + e_ln_p_pi + e_ln_p_mu_lambda - e_ln_q_z - e_ln_q_pi - e_ln_q_mu_lambda
    }
}

/// Unnormalized log responsibilities of every row (rows of `x`) for every component.
fn log_rho(x: &DMatrix<f64>, comps: &[Component]) -> DMatrix<f64> {
    let n = x.nrows();
    let d = x.ncols();
    let alpha_hat: f64 = comps.iter().map(|c| c.alpha).sum();
    let ln_2pi = (2.0 * PI).ln();
    let cols: Vec<Vec<f64>> = comps
        .par_iter()
        .map(|c| {
            let e_ln_pi = digamma(c.alpha) - digamma(alpha_hat);
            let mut diff = x.transpose();
            for mut col in diff.column_iter_mut() {
                col -= &c.m;
            }
            let y = c
                .chol_w_inv
                .l_dirty()
                .solve_lower_triangular(&diff)
                .expect("triangular factor is non-singular");
            let base = e_ln_pi + 0.5 * c.e_ln_det_lambda - 0.5 * d as f64 * ln_2pi - 0.5 * d as f64 / c.beta;
            (0..n)
                .map(|i| base - 0.5 * c.nu * y.column(i).norm_squared())
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, comps.len(), |i, k| cols[k][i])
}

/// Row-wise softmax in place.
fn normalize_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        row /= s;
    }
}

/// Seeded k-means (k-means++ seeding, Lloyd refinement) returning hard labels.
fn kmeans_labels(x: &DMatrix<f64>, k: usize, seed: u64) -> Vec<usize> {
    let n = x.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row = |i: usize| x.row(i).transpose();
    let mut centers: Vec<DVector<f64>> = vec![row(rng.random_range(0..n))];
    let mut d2: Vec<f64> = (0..n).map(|i| (row(i) - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &v) in d2.iter().enumerate() {
                if t < v {
                    idx = i;
                    break;
                }
                t -= v;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick);
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min((row(i) - &c).norm_squared());
        }
        centers.push(c);
    }
    let mut labels = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let r = row(i);
            let best = (0..k)
                .map(|j| (j, (&r - &centers[j]).norm_squared()))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
                .0;
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![DVector::zeros(x.ncols()); k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums[l] += row(i);
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = &sums[j] / counts[j] as f64;
            }
        }
    }
    labels
}

/// Indices whose weight reaches `threshold`; the argmax survives if none do.
pub fn prune_indices(weights: &[f64], threshold: f64) -> Vec<usize> {
    let kept: Vec<usize> = (0..weights.len()).filter(|&k| weights[k] >= threshold).collect();
    if !kept.is_empty() || weights.is_empty() {
        return kept;
    }
    let best = (0..weights.len())
        .fold(0, |b, k| if weights[k] > weights[b] { k } else { b });
    vec![best]
}

impl VbgmmModel {
    /// Fits the posterior to `rows` with `cfg.k_init` components. The
    /// returned model is not yet pruned (every component survives).
    ///
    /// Rows are processed in lexicographic order, so the fit does not depend
    /// on their input order.
    pub fn fit(rows: &[&[f64]], cfg: &VbgmmConfig, prior: Option<VbgmmPrior>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.k_init;
        if rows.len() < k {
            return Err(invalid_data(format!("{} rows cannot seed {k} components", rows.len())));
        }
        let d = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        let mut order: Vec<&[f64]> = rows.to_vec();
        order.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let prior = match prior {
            Some(p) => p,
            None => VbgmmPrior::weakly_informative(&order, k)?,
        };
        if prior.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: prior.dim(),
            });
        }
        let chol_w0 = prior.validate()?;
        let w0_inv = chol_w0.inverse();
        let ln_det_w0 = ln_det_from_chol(&chol_w0);
        let x = DMatrix::from_fn(order.len(), d, |i, j| order[i][j]);
        let fitter = Fitter {
            prior: &prior,
            w0_inv,
            ln_det_w0,
            x,
        };

        let labels = kmeans_labels(&fitter.x, k, seed);
        let resp = DMatrix::from_fn(fitter.x.nrows(), k, |i, j| f64::from(u8::from(labels[i] == j)));
        let mut best = fitter.run(resp, cfg)?;

        if cfg.delete_moves {
            'moves: loop {
                let weights = expected_weights(&best.comps);
                let mut live: Vec<usize> = (0..k).filter(|&j| weights[j] >= cfg.prune_threshold).collect();
                if live.len() < 2 {
                    break;
                }
                live.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(a.cmp(&b)));
                let current = best.final_elbo();
                for j in live {
                    let mut resp = log_rho(&fitter.x, &best.comps);
                    resp.column_mut(j).fill(f64::NEG_INFINITY);
                    normalize_rows(&mut resp);
                    let trial = fitter.run(resp, cfg)?;
                    if trial.final_elbo() > current + cfg.tol * current.abs() {
                        debug!("deleting component {j} raised the bound {current} -> {}", trial.final_elbo());
                        best = trial;
                        continue 'moves;
                    }
                }
                break;
            }
        }
        let Run { comps, trace, converged } = best;

        Ok(Self {
            surviving: (0..k).collect(),
            prior,
            components: comps,
            elbo_trace: trace,
            converged,
        })
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    /// `E[π_k] = α_k / Σ α` for every component.
    pub fn expected_weights(&self) -> Vec<f64> {
        expected_weights(&self.components)
    }

    /// Keeps components with `E[π_k] >= threshold`.
    pub fn prune(mut self, threshold: f64) -> Self {
        self.surviving = prune_indices(&self.expected_weights(), threshold);
        self
    }

    pub fn n_surviving(&self) -> usize {
        self.surviving.len()
    }

    /// Posterior mean `m_k` of every surviving component.
    pub fn surviving_means(&self) -> Vec<Vec<f64>> {
        self.surviving
            .iter()
            .map(|&k| self.components[k].m.iter().copied().collect())
            .collect()
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// Variational responsibilities of `x`, restricted to the surviving
    /// components and renormalized to sum to one.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.responsibilities_batch(&[x])?.remove(0))
    }

    /// [`Self::responsibilities`] for many rows at once.
    pub fn responsibilities_batch(&self, rows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        for r in rows {
            self.check_dim(r.len())?;
        }
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let x = DMatrix::from_fn(rows.len(), self.dim(), |i, j| rows[i][j]);
        // E[ln π_k] uses the full Dirichlet posterior, so evaluate against all
        // components and slice the surviving columns.
        let full = log_rho(&x, &self.components);
        let mut sub = DMatrix::from_fn(rows.len(), self.surviving.len(), |i, j| full[(i, self.surviving[j])]);
        normalize_rows(&mut sub);
        Ok(sub.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_header(w, MAGIC, VERSION)?;
        let d = self.dim();
        binio::write_usize(w, d)?;
        binio::write_f64(w, self.prior.alpha0)?;
        binio::write_f64(w, self.prior.beta0)?;
        binio::write_f64s(w, self.prior.m0.as_slice())?;
        binio::write_f64s(w, self.prior.w0.as_slice())?;
        binio::write_f64(w, self.prior.nu0)?;
        binio::write_usize(w, self.components.len())?;
        for c in &self.components {
            binio::write_f64(w, c.alpha)?;
            binio::write_f64(w, c.beta)?;
            binio::write_f64s(w, c.m.as_slice())?;
            binio::write_f64(w, c.nu)?;
            binio::write_f64s(w, c.w_inv.as_slice())?;
        }
        binio::write_usize(w, self.surviving.len())?;
        for &k in &self.surviving {
            binio::write_usize(w, k)?;
        }
        binio::write_f64s(w, &self.elbo_trace)?;
        binio::write_u8(w, u8::from(self.converged))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, MAGIC, VERSION)?;
        let d = binio::read_usize(r)?;
        let bad = || Error::Format("inconsistent mixture model dimensions".into());
        let alpha0 = binio::read_f64(r)?;
        let beta0 = binio::read_f64(r)?;
        let m0 = binio::read_f64s(r)?;
        let w0 = binio::read_f64s(r)?;
        let nu0 = binio::read_f64(r)?;
        if m0.len() != d || w0.len() != d * d {
            return Err(bad());
        }
        let prior = VbgmmPrior {
            alpha0,
            beta0,
            m0: DVector::from_vec(m0),
            w0: DMatrix::from_vec(d, d, w0),
            nu0,
        };
        let k = binio::read_usize(r)?;
        let mut components = Vec::with_capacity(k.min(1 << 16));
        for _ in 0..k {
            let alpha = binio::read_f64(r)?;
            let beta = binio::read_f64(r)?;
            let m = binio::read_f64s(r)?;
            let nu = binio::read_f64(r)?;
            let w_inv = binio::read_f64s(r)?;
            if m.len() != d || w_inv.len() != d * d {
                return Err(bad());
            }
            components.push(Component::new(alpha, beta, DVector::from_vec(m), nu, DMatrix::from_vec(d, d, w_inv))?);
        }
        let ns = binio::read_usize(r)?;
        let surviving = (0..ns).map(|_| binio::read_usize(r)).collect::<Result<Vec<_>>>()?;
        if surviving.is_empty() || surviving.iter().any(|&s| s >= k) {
            return Err(bad());
        }
        let elbo_trace = binio::read_f64s(r)?;
        let converged = binio::read_u8(r)? != 0;
        Ok(Self {
            prior,
            components,
            surviving,
            elbo_trace,
            converged,
        })
    }
}

const MAGIC: &[u8; 8] = b"VMVBGMM\0";
const VERSION: u32 = 1;
