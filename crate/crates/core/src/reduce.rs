//! Train-fitted standardization followed by PCA keeping a variance fraction.

use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bag::Dataset;
use crate::binio;
use crate::error::{invalid_arg, invalid_data, Error, Result};

/// Smallest admissible per-dimension scale.
pub const SCALE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at [`SCALE_FLOOR`].
    pub scale: Vec<f64>,
}

fn check_rows(rows: &[&[f64]]) -> Result<usize> {
    if rows.len() < 2 {
        return Err(invalid_data(format!("need at least 2 rows, got {}", rows.len())));
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

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let d = check_rows(rows)?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let scale = var.iter().map(|v| (v / n).sqrt().max(SCALE_FLOOR)).collect();
        Ok(Self { mean, scale })
    }

    /// Pass-through standardizer (zero mean shift, unit scale).
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(x − mean) / scale`; dimensions whose scale hit the floor map to 0.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| if *s <= SCALE_FLOOR { 0.0 } else { (v - m) / s })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// Mean of the fitting data, subtracted before projection.
    pub mean: Vec<f64>,
    /// Kept principal axes, one unit row per component (`d_out × d_in`).
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the kept components, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Every covariance eigenvalue (negatives clamped to 0), non-increasing.
    pub all_eigenvalues: Vec<f64>,
    /// Fraction of total variance explained by the kept components.
    pub variance_kept: f64,
}

impl PcaProjection {
    pub fn d_in(&self) -> usize {
        self.mean.len()
    }

    pub fn d_out(&self) -> usize {
        self.components.len()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in() {
            return Err(Error::DimensionMismatch {
                expected: self.d_in(),
                got: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Sample covariance (`n − 1` denominator) of `rows` around their mean.
pub fn covariance(rows: &[&[f64]]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = check_rows(rows)?;
    let n = rows.len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let mut cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    // Exact symmetry for the eigen-solver.
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, cov))
}

/// Eigen-decomposes the covariance of `rows` and keeps the smallest number of
/// leading components whose eigenvalues reach `variance` of the total. Each
/// component is signed so that its largest-magnitude coefficient is positive.
pub fn fit_pca(rows: &[&[f64]], variance: f64) -> Result<PcaProjection> {
    if !(variance > 0.0 && variance <= 1.0) {
        return Err(invalid_arg(format!("variance fraction must lie in (0, 1], got {variance}")));
    }
    let (mean, cov) = covariance(rows)?;
    let d = mean.len();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let all_eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = all_eigenvalues.iter().sum();

    let (keep, variance_kept) = if total <= 0.0 {
        (1, 1.0)
    } else {
        let mut acc = 0.0;
        let mut keep = d;
        for (k, l) in all_eigenvalues.iter().enumerate() {
            acc += l;
            if acc / total >= variance - 1e-12 {
                keep = k + 1;
                break;
            }
        }
        let kept: f64 = all_eigenvalues[..keep].iter().sum();
        (keep, (kept / total).min(1.0))
    };

    let components = order[..keep]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = v
                .iter()
                .enumerate()
                .fold(0, |best, (j, x)| if x.abs() > v[best].abs() { j } else { best });
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok(PcaProjection {
        mean,
        components,
        eigenvalues: all_eigenvalues[..keep].to_vec(),
        all_eigenvalues,
        variance_kept,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduceConfig {
    pub variance: f64,
    pub standardize: bool,
}

impl Default for ReduceConfig {
    fn default() -> Self {
        Self {
            variance: 0.95,
            standardize: true,
        }
    }
}

impl ReduceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance <= 1.0) {
            return Err(invalid_arg(format!("PCA variance must lie in (0, 1], got {}", self.variance)));
        }
        Ok(())
    }
}

/// Standardizer and PCA fitted together on one training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Reducer {
    pub standardizer: Standardizer,
    pub pca: PcaProjection,
}

const MAGIC: &[u8; 8] = b"VMREDUCE";
const VERSION: u32 = 1;

impl Reducer {
    pub fn fit(rows: &[&[f64]], cfg: &ReduceConfig) -> Result<Self> {
        let d = check_rows(rows)?;
        let standardizer = if cfg.standardize {
            Standardizer::fit(rows)?
        } else {
            Standardizer::identity(d)
        };
        let scaled = rows
            .iter()
            .map(|r| standardizer.apply(r))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
        let pca = fit_pca(&refs, cfg.variance)?;
        Ok(Self { standardizer, pca })
    }

    /// Fits on every instance of `train`.
    pub fn fit_dataset(train: &Dataset, cfg: &ReduceConfig) -> Result<Self> {
        Self::fit(&train.instance_rows(), cfg)
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.pca.project(&self.standardizer.apply(x)?)
    }

    pub fn transform_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        ds.map_instances(|x| self.transform(x))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_header(w, MAGIC, VERSION)?;
        binio::write_f64s(w, &self.standardizer.mean)?;
        binio::write_f64s(w, &self.standardizer.scale)?;
        binio::write_f64s(w, &self.pca.mean)?;
        binio::write_usize(w, self.pca.components.len())?;
        for c in &self.pca.components {
            binio::write_f64s(w, c)?;
        }
        binio::write_f64s(w, &self.pca.eigenvalues)?;
        binio::write_f64s(w, &self.pca.all_eigenvalues)?;
        binio::write_f64(w, self.pca.variance_kept)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, MAGIC, VERSION)?;
        let mean = binio::read_f64s(r)?;
        let scale = binio::read_f64s(r)?;
        let pca_mean = binio::read_f64s(r)?;
        let k = binio::read_usize(r)?;
        let components = (0..k).map(|_| binio::read_f64s(r)).collect::<Result<Vec<_>>>()?;
        let eigenvalues = binio::read_f64s(r)?;
        let all_eigenvalues = binio::read_f64s(r)?;
        let variance_kept = binio::read_f64(r)?;
        if scale.len() != mean.len()
            || pca_mean.len() != mean.len()
            || components.iter().any(|c| c.len() != mean.len())
            || eigenvalues.len() != k
        {
            return Err(Error::Format("inconsistent reducer dimensions".into()));
        }
        Ok(Self {
            standardizer: Standardizer { mean, scale },
            pca: PcaProjection {
                mean: pca_mean,
                components,
                eigenvalues,
                all_eigenvalues,
                variance_kept,
            },
        })
    }
}
