//! Gray-level matrices over an RGB patch treated as a `rows × cols × 3` volume.
//!
//! Every matrix uses 26-connectivity: the 13 direction vectors below plus
//! their negations. Gray levels are stored 0-based; the feature formulas use
//! 1-based levels `i = g + 1`.

use crate::error::{invalid_arg, Result};
use crate::patch::Patch;

/// One representative of each ± pair of 26-neighbor offsets, as `(dr, dc, dz)`.
pub const DIRECTIONS: [(isize, isize, isize); 13] = [
    (0, 0, 1),
    (0, 1, 0),
    (1, 0, 0),
    (0, 1, 1),
    (0, 1, -1),
    (1, 0, 1),
    (1, 0, -1),
    (1, 1, 0),
    (1, -1, 0),
    (1, 1, 1),
    (1, 1, -1),
    (1, -1, 1),
    (1, -1, -1),
];

/// Quantized gray-level volume, indexed `(r * cols + c) * depth + z`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Volume {
    pub rows: usize,
    pub cols: usize,
    pub depth: usize,
    pub n_levels: usize,
    pub levels: Vec<u8>,
}

impl Volume {
    pub fn new(rows: usize, cols: usize, depth: usize, n_levels: usize, levels: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 || depth == 0 {
            return Err(invalid_arg("volume dimensions must be positive"));
        }
        if !(1..=256).contains(&n_levels) {
            return Err(invalid_arg(format!("n_levels must lie in 1..=256, got {n_levels}")));
        }
        if levels.len() != rows * cols * depth {
            return Err(invalid_arg("level buffer does not match volume dimensions"));
        }
        if levels.iter().any(|&g| usize::from(g) >= n_levels) {
            return Err(invalid_arg("gray level exceeds n_levels"));
        }
        Ok(Self {
            rows,
            cols,
            depth,
            n_levels,
            levels,
        })
    }

    /// Uniform quantization of the RGB channels: `level = v · n_levels / 256`.
    pub fn from_patch(patch: &Patch, n_levels: usize) -> Result<Self> {
        let n = patch.side();
        let levels = patch
            .pixels()
            .iter()
            .flat_map(|p| p.iter().map(|&v| (usize::from(v) * n_levels / 256) as u8))
            .collect();
        Self::new(n, n, 3, n_levels, levels)
    }

    pub fn n_voxels(&self) -> usize {
        self.levels.len()
    }

    #[inline]
    pub fn index(&self, r: usize, c: usize, z: usize) -> usize {
        (r * self.cols + c) * self.depth + z
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, z: usize) -> u8 {
        self.levels[self.index(r, c, z)]
    }

    /// Voxel reached from `(r, c, z)` by `k` steps along `d`, if inside.
    #[inline]
    pub fn step(&self, (r, c, z): (usize, usize, usize), d: (isize, isize, isize), k: isize) -> Option<(usize, usize, usize)> {
        let nr = r as isize + d.0 * k;
        let nc = c as isize + d.1 * k;
        let nz = z as isize + d.2 * k;
        if nr < 0 || nc < 0 || nz < 0 {
            return None;
        }
        let (nr, nc, nz) = (nr as usize, nc as usize, nz as usize);
        (nr < self.rows && nc < self.cols && nz < self.depth).then_some((nr, nc, nz))
    }

    fn coords(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (0..self.cols).flat_map(move |c| (0..self.depth).map(move |z| (r, c, z)))
        })
    }
}

/// Symmetric co-occurrence counts, `n_levels × n_levels`, row-major.
/// Every unordered neighbor pair contributes to both `(a, b)` and `(b, a)`.
pub fn glcm(vol: &Volume) -> Vec<u64> {
    let n = vol.n_levels;
    let mut m = vec![0u64; n * n];
    for p in vol.coords() {
        let a = usize::from(vol.get(p.0, p.1, p.2));
        for &d in &DIRECTIONS {
            if let Some(q) = vol.step(p, d, 1) {
                let b = usize::from(vol.get(q.0, q.1, q.2));
                m[a * n + b] += 1;
                m[b * n + a] += 1;
            }
        }
    }
    m
}

/// Run-length counts summed over the 13 directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLengthMatrix {
    pub n_levels: usize,
    /// Longest representable run; column `l - 1` holds runs of length `l`.
    pub max_len: usize,
    pub counts: Vec<u64>,
}

impl RunLengthMatrix {
    pub fn get(&self, level: usize, len: usize) -> u64 {
        self.counts[level * self.max_len + len - 1]
    }
}

pub fn glrlm(vol: &Volume) -> RunLengthMatrix {
    let n = vol.n_levels;
    let max_len = vol.rows.max(vol.cols).max(vol.depth);
    let mut counts = vec![0u64; n * max_len];
    for &d in &DIRECTIONS {
        for p in vol.coords() {
            let g = vol.get(p.0, p.1, p.2);
            // Only start walking at the first voxel of a run.
            let starts = vol
                .step(p, d, -1)
                .is_none_or(|q| vol.get(q.0, q.1, q.2) != g);
            if !starts {
                continue;
            }
            let mut len = 1;
            while let Some(q) = vol.step(p, d, len as isize) {
                if vol.get(q.0, q.1, q.2) != g {
                    break;
                }
                len += 1;
            }
            counts[usize::from(g) * max_len + len - 1] += 1;
        }
    }
    RunLengthMatrix {
        n_levels: n,
        max_len,
        counts,
    }
}

/// Counts of 26-connected same-level zones by level and size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeZoneMatrix {
    pub n_levels: usize,
    /// Largest zone size column; column `s - 1` holds zones of size `s`.
    pub max_size: usize,
    pub counts: Vec<u64>,
}

impl SizeZoneMatrix {
    pub fn get(&self, level: usize, size: usize) -> u64 {
        self.counts[level * self.max_size + size - 1]
    }
}

fn all_offsets() -> impl Iterator<Item = (isize, isize, isize)> {
    DIRECTIONS.iter().flat_map(|&(a, b, c)| [(a, b, c), (-a, -b, -c)])
}

pub fn glszm(vol: &Volume) -> SizeZoneMatrix {
    let n = vol.n_levels;
    let mut visited = vec![false; vol.n_voxels()];
    let mut zones: Vec<(usize, usize)> = Vec::new();
    let mut stack = Vec::new();
    for p in vol.coords() {
        let idx = vol.index(p.0, p.1, p.2);
        if visited[idx] {
            continue;
        }
        let g = vol.levels[idx];
        visited[idx] = true;
        stack.push(p);
        let mut size = 0;
        while let Some(q) = stack.pop() {
            size += 1;
            for d in all_offsets() {
                if let Some(nb) = vol.step(q, d, 1) {
                    let ni = vol.index(nb.0, nb.1, nb.2);
                    if !visited[ni] && vol.levels[ni] == g {
                        visited[ni] = true;
                        stack.push(nb);
                    }
                }
            }
        }
        zones.push((usize::from(g), size));
    }
    let max_size = zones.iter().map(|z| z.1).max().unwrap_or(1);
    let mut counts = vec![0u64; n * max_size];
    for (g, s) in zones {
        counts[g * max_size + s - 1] += 1;
    }
    SizeZoneMatrix {
        n_levels: n,
        max_size,
        counts,
    }
}

/// Neighborhood gray-tone difference statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Ngtdm {
    /// Voxels of each level that have at least one neighbor.
    pub counts: Vec<u64>,
    /// `s_i = Σ |i − Ā|` over those voxels, where `Ā` is the mean level of
    /// the voxel's in-bounds 26-neighbors.
    pub sums: Vec<f64>,
}

pub fn ngtdm(vol: &Volume) -> Ngtdm {
    let n = vol.n_levels;
    let mut counts = vec![0u64; n];
    let mut sums = vec![0.0; n];
    for p in vol.coords() {
        let g = usize::from(vol.get(p.0, p.1, p.2));
        let mut total = 0u64;
        let mut k = 0u64;
        for d in all_offsets() {
            if let Some(q) = vol.step(p, d, 1) {
                total += u64::from(vol.get(q.0, q.1, q.2));
                k += 1;
            }
        }
        if k == 0 {
            continue;
        }
        counts[g] += 1;
        sums[g] += (g as f64 - total as f64 / k as f64).abs();
    }
    Ngtdm { counts, sums }
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Thirteen Haralick statistics, natural-log entropies, in the order: energy,
/// contrast, correlation, sum-of-squares variance, inverse difference
/// moment, sum average, sum variance, sum entropy, entropy, difference
/// variance, difference entropy, information measures of correlation 1 and 2.
pub fn glcm_features(counts: &[u64], n: usize) -> [f64; 13] {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return [0.0; 13];
    }
    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let at = |i: usize, j: usize| p[i * n + j];
    let lvl = |i: usize| (i + 1) as f64;

    let px: Vec<f64> = (0..n).map(|i| (0..n).map(|j| at(i, j)).sum()).collect();
    let py: Vec<f64> = (0..n).map(|j| (0..n).map(|i| at(i, j)).sum()).collect();
    let mu_x: f64 = (0..n).map(|i| lvl(i) * px[i]).sum();
    let mu_y: f64 = (0..n).map(|j| lvl(j) * py[j]).sum();
    let var_x: f64 = (0..n).map(|i| (lvl(i) - mu_x).powi(2) * px[i]).sum();
    let var_y: f64 = (0..n).map(|j| (lvl(j) - mu_y).powi(2) * py[j]).sum();

    let mut energy = 0.0;
    let mut contrast = 0.0;
    let mut cov = 0.0;
    let mut idm = 0.0;
    let mut entropy = 0.0;
    let mut hxy1 = 0.0;
    let mut hxy2 = 0.0;
    let mut p_sum = vec![0.0; 2 * n + 1];
    let mut p_diff = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let v = at(i, j);
            let d = lvl(i) - lvl(j);
            energy += v * v;
            contrast += d * d * v;
            cov += (lvl(i) - mu_x) * (lvl(j) - mu_y) * v;
            idm += v / (1.0 + d * d);
            entropy -= plogp(v);
            let pxy = px[i] * py[j];
            if pxy > 0.0 {
                hxy1 -= v * pxy.ln();
                hxy2 -= pxy * pxy.ln();
            }
            p_sum[i + j + 2] += v;
            p_diff[i.abs_diff(j)] += v;
        }
    }
    let correlation = if var_x > 1e-15 && var_y > 1e-15 {
        cov / (var_x * var_y).sqrt()
    } else {
        0.0
    };
    let sum_avg: f64 = p_sum.iter().enumerate().map(|(k, &v)| k as f64 * v).sum();
    let sum_var: f64 = p_sum
        .iter()
        .enumerate()
        .map(|(k, &v)| (k as f64 - sum_avg).powi(2) * v)
        .sum();
    let sum_entropy: f64 = -p_sum.iter().map(|&v| plogp(v)).sum::<f64>();
    let diff_mean: f64 = p_diff.iter().enumerate().map(|(k, &v)| k as f64 * v).sum();
    let diff_var: f64 = p_diff
        .iter()
        .enumerate()
        .map(|(k, &v)| (k as f64 - diff_mean).powi(2) * v)
        .sum();
    let diff_entropy: f64 = -p_diff.iter().map(|&v| plogp(v)).sum::<f64>();
    let hx: f64 = -px.iter().map(|&v| plogp(v)).sum::<f64>();
    let hy: f64 = -py.iter().map(|&v| plogp(v)).sum::<f64>();
    let hmax = hx.max(hy);
    let imc1 = if hmax > 0.0 { (entropy - hxy1) / hmax } else { 0.0 };
    let imc2 = (1.0 - (-2.0 * (hxy2 - entropy)).exp()).max(0.0).sqrt();

    [
        energy,
        contrast,
        correlation,
        var_x,
        idm,
        sum_avg,
        sum_var,
        sum_entropy,
        entropy,
        diff_var,
        diff_entropy,
        imc1,
        imc2,
    ]
}

/// Shared emphasis statistics of run-length and size-zone matrices.
/// `rows[g][s-1]` counts elements (runs or zones) of level `g` and size `s`.
/// Returns (small emphasis, large emphasis, gray-level non-uniformity,
/// size non-uniformity, low-gray emphasis, high-gray emphasis, small-low,
/// small-high, large-low, large-high), each normalized by the element count,
/// plus the element count itself.
fn emphasis(n: usize, width: usize, get: impl Fn(usize, usize) -> u64) -> ([f64; 10], f64) {
    let mut total = 0.0;
    let mut out = [0.0; 10];
    let mut size_marginal = vec![0.0; width];
    let mut level_marginal = vec![0.0; n];
    for g in 0..n {
        let i2 = ((g + 1) as f64).powi(2);
        for s in 1..=width {
            let c = get(g, s) as f64;
            if c == 0.0 {
                continue;
            }
            let s2 = (s as f64).powi(2);
            total += c;
            level_marginal[g] += c;
            size_marginal[s - 1] += c;
            out[0] += c / s2;
            out[1] += c * s2;
            out[4] += c / i2;
            out[5] += c * i2;
            out[6] += c / (i2 * s2);
            out[7] += c * i2 / s2;
            out[8] += c * s2 / i2;
            out[9] += c * i2 * s2;
        }
    }
    if total == 0.0 {
        return ([0.0; 10], 0.0);
    }
    out[2] = level_marginal.iter().map(|v| v * v).sum();
    out[3] = size_marginal.iter().map(|v| v * v).sum();
    for v in &mut out {
        *v /= total;
    }
    (out, total)
}

/// SRE, LRE, GLN, RLN, RP, LGRE, HGRE, SRLGE, SRHGE, LRLGE, LRHGE.
pub fn glrlm_features(m: &RunLengthMatrix) -> [f64; 11] {
    let (e, n_runs) = emphasis(m.n_levels, m.max_len, |g, l| m.get(g, l));
    let covered: f64 = (0..m.n_levels)
        .flat_map(|g| (1..=m.max_len).map(move |l| (g, l)))
        .map(|(g, l)| (m.get(g, l) * l as u64) as f64)
        .sum();
    let rp = if covered > 0.0 { n_runs / covered } else { 0.0 };
    [e[0], e[1], e[2], e[3], rp, e[4], e[5], e[6], e[7], e[8], e[9]]
}

/// SZE, LZE, GLN, ZSN, ZP, LGZE, HGZE, SZLGE, SZHGE, LZLGE, LZHGE, zone-size variance.
pub fn glszm_features(m: &SizeZoneMatrix) -> [f64; 12] {
    let (e, n_zones) = emphasis(m.n_levels, m.max_size, |g, s| m.get(g, s));
    if n_zones == 0.0 {
        return [0.0; 12];
    }
    let mut covered = 0.0;
    let mut mean = 0.0;
    for g in 0..m.n_levels {
        for s in 1..=m.max_size {
            let c = m.get(g, s) as f64;
            covered += c * s as f64;
            mean += c / n_zones * s as f64;
        }
    }
    let mut var = 0.0;
    for g in 0..m.n_levels {
        for s in 1..=m.max_size {
            let c = m.get(g, s) as f64;
            var += c / n_zones * (s as f64 - mean).powi(2);
        }
    }
    [
        e[0],
        e[1],
        e[2],
        e[3],
        n_zones / covered,
        e[4],
        e[5],
        e[6],
        e[7],
        e[8],
        e[9],
        var,
    ]
}

/// Coarseness value reported when the neighborhood differences vanish.
pub const NGTDM_COARSENESS_CAP: f64 = 1e6;

/// Coarseness, contrast, busyness, complexity, strength.
pub fn ngtdm_features(m: &Ngtdm) -> [f64; 5] {
    let nvp: u64 = m.counts.iter().sum();
    if nvp == 0 {
        return [0.0; 5];
    }
    let nvp = nvp as f64;
    let present: Vec<(f64, f64, f64)> = m
        .counts
        .iter()
        .zip(&m.sums)
        .enumerate()
        .filter(|(_, (&c, _))| c > 0)
        .map(|(g, (&c, &s))| ((g + 1) as f64, c as f64 / nvp, s))
        .collect();
    let ng = present.len() as f64;
    let weighted: f64 = present.iter().map(|&(_, p, s)| p * s).sum();
    let s_total: f64 = present.iter().map(|&(_, _, s)| s).sum();

    let coarseness = if weighted > 0.0 {
        (1.0 / weighted).min(NGTDM_COARSENESS_CAP)
    } else {
        NGTDM_COARSENESS_CAP
    };
    let mut pair_sq = 0.0;
    let mut busy_den = 0.0;
    let mut complexity = 0.0;
    let mut strength_num = 0.0;
    for &(i, pi, si) in &present {
        for &(j, pj, sj) in &present {
            pair_sq += pi * pj * (i - j).powi(2);
            busy_den += (i * pi - j * pj).abs();
            complexity += (i - j).abs() * (pi * si + pj * sj) / (pi + pj);
            strength_num += (pi + pj) * (i - j).powi(2);
        }
    }
    let contrast = if ng > 1.0 {
        pair_sq / (ng * (ng - 1.0)) * s_total / nvp
    } else {
        0.0
    };
    let busyness = if busy_den > 0.0 { weighted / busy_den } else { 0.0 };
    let strength = if s_total > 0.0 { strength_num / s_total } else { 0.0 };
    [coarseness, contrast, busyness, complexity / nvp, strength]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(level: u8) -> Volume {
        Volume::new(4, 4, 3, 8, vec![level; 48]).unwrap()
    }

    #[test]
    fn constant_volume_glcm() {
        let v = constant(3);
        let m = glcm(&v);
        let nonzero: Vec<_> = m.iter().enumerate().filter(|(_, &c)| c > 0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].0, 3 * 8 + 3);
        let f = glcm_features(&m, 8);
        assert_eq!(f[0], 1.0);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[8], 0.0);
        assert_eq!(f[2], 0.0);
    }

    #[test]
    fn glcm_total_is_twice_the_pair_count() {
        let v = Volume::new(3, 2, 2, 2, (0..12).map(|i| (i % 2) as u8).collect()).unwrap();
        // Unordered 26-neighbor pairs in a 3x2x2 grid: every pair of distinct
        // voxels whose coordinates differ by at most one on every axis.
        let coords: Vec<_> = (0..3).flat_map(|r: i32| (0..2).flat_map(move |c: i32| (0..2).map(move |z: i32| (r, c, z)))).collect();
        let mut pairs = 0;
        for (a, p) in coords.iter().enumerate() {
            for q in &coords[a + 1..] {
                if (p.0 - q.0).abs() <= 1 && (p.1 - q.1).abs() <= 1 && (p.2 - q.2).abs() <= 1 {
                    pairs += 1;
                }
            }
        }
        let m = glcm(&v);
        assert_eq!(m.iter().sum::<u64>(), 2 * pairs);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(m[i * 2 + j], m[j * 2 + i]);
            }
        }
    }

    #[test]
    fn constant_volume_runs_and_zones() {
        let v = constant(0);
        let z = glszm(&v);
        assert_eq!(z.get(0, 48), 1);
        let f = glszm_features(&z);
        assert_eq!(f[4], 1.0 / 48.0);
        assert_eq!(f[11], 0.0);
        let r = glrlm(&v);
        let covered: u64 = (1..=r.max_len).map(|l| r.get(0, l) * l as u64).sum();
        assert_eq!(covered, 13 * 48);
        let n = ngtdm(&v);
        assert_eq!(n.sums[0], 0.0);
        let nf = ngtdm_features(&n);
        assert_eq!(nf[0], NGTDM_COARSENESS_CAP);
        assert_eq!(&nf[1..], &[0.0; 4]);
    }

    #[test]
    fn single_voxel_volume_has_no_pairs() {
        let v = Volume::new(1, 1, 1, 4, vec![2]).unwrap();
        assert_eq!(glcm_features(&glcm(&v), 4), [0.0; 13]);
        assert_eq!(ngtdm_features(&ngtdm(&v)), [0.0; 5]);
        let r = glrlm(&v);
        assert_eq!(r.get(2, 1), 13);
    }

    #[test]
    fn volume_validation() {
        assert!(Volume::new(2, 2, 1, 4, vec![0, 1, 2, 4]).is_err());
        assert!(Volume::new(2, 2, 1, 4, vec![0; 3]).is_err());
        assert!(Volume::new(0, 2, 1, 4, vec![]).is_err());
    }
}
