//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vascmil::features::volume::Volume;

/// Random volume with each side in `1..=max` and `n_levels` gray levels.
pub fn random_volume(seed: u64, max: (usize, usize, usize), n_levels: usize) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.random_range(1..=max.0);
    let cols = rng.random_range(1..=max.1);
    let depth = rng.random_range(1..=max.2);
    let levels = (0..rows * cols * depth).map(|_| rng.random_range(0..n_levels) as u8).collect();
    Volume::new(rows, cols, depth, n_levels, levels).unwrap()
}

type Voxel = (usize, usize, usize);

fn voxels(v: &Volume) -> Vec<Voxel> {
    let mut out = Vec::new();
    for r in 0..v.rows {
        for c in 0..v.cols {
            for z in 0..v.depth {
                out.push((r, c, z));
            }
        }
    }
    out
}

fn touching(a: Voxel, b: Voxel) -> bool {
    a != b && a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1 && a.2.abs_diff(b.2) <= 1
}

fn lvl(v: &Volume, p: Voxel) -> usize {
    usize::from(v.get(p.0, p.1, p.2))
}

/// Co-occurrence counts over every ordered pair of touching voxels.
pub fn glcm_oracle(v: &Volume) -> Vec<u64> {
    let n = v.n_levels;
    let all = voxels(v);
    let mut m = vec![0u64; n * n];
    for &a in &all {
        for &b in &all {
            if touching(a, b) {
                m[lvl(v, a) * n + lvl(v, b)] += 1;
            }
        }
    }
    m
}

/// The 13 undirected 26-neighbor axes, derived independently of the library.
pub fn axes() -> Vec<(isize, isize, isize)> {
    let mut out = Vec::new();
    for dr in -1isize..=1 {
        for dc in -1isize..=1 {
            for dz in -1isize..=1 {
                let d = (dr, dc, dz);
                if d == (0, 0, 0) || out.contains(&(-dr, -dc, -dz)) {
                    continue;
                }
                out.push(d);
            }
        }
    }
    out
}

fn at(v: &Volume, p: Voxel, d: (isize, isize, isize), k: isize) -> Option<Voxel> {
    let r = p.0 as isize + d.0 * k;
    let c = p.1 as isize + d.1 * k;
    let z = p.2 as isize + d.2 * k;
    let inside = (0..v.rows as isize).contains(&r) && (0..v.cols as isize).contains(&c) && (0..v.depth as isize).contains(&z);
    inside.then(|| (r as usize, c as usize, z as usize))
}

/// Run counts keyed by `(level, length)`: every start voxel, axis and length
/// whose segment is uniform and cannot be extended at either end.
pub fn glrlm_oracle(v: &Volume) -> BTreeMap<(usize, usize), u64> {
    let mut out = BTreeMap::new();
    let longest = v.rows.max(v.cols).max(v.depth);
    for d in axes() {
        for p in voxels(v) {
            let g = lvl(v, p);
            for len in 1..=longest {
                let cells: Option<Vec<Voxel>> = (0..len as isize).map(|k| at(v, p, d, k)).collect();
                let Some(cells) = cells else { break };
                if cells.iter().any(|&q| lvl(v, q) != g) {
                    break;
                }
                let open_before = at(v, p, d, -1).is_some_and(|q| lvl(v, q) == g);
                let open_after = at(v, p, d, len as isize).is_some_and(|q| lvl(v, q) == g);
                if !open_before && !open_after {
                    *out.entry((g, len)).or_insert(0) += 1;
                }
            }
        }
    }
    out
}

/// Zone counts keyed by `(level, size)` via union-find over touching
/// same-level voxel pairs.
pub fn glszm_oracle(v: &Volume) -> BTreeMap<(usize, usize), u64> {
    let all = voxels(v);
    let mut parent: Vec<usize> = (0..all.len()).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..all.len() {
        for j in 0..i {
            if touching(all[i], all[j]) && lvl(v, all[i]) == lvl(v, all[j]) {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut sizes: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for i in 0..all.len() {
        let r = root(&mut parent, i);
        let e = sizes.entry(r).or_insert((lvl(v, all[i]), 0));
        e.1 += 1;
    }
    let mut out = BTreeMap::new();
    for (_, (g, s)) in sizes {
        *out.entry((g, s)).or_insert(0) += 1;
    }
    out
}

/// Per-level counts of voxels with a neighbor and their summed absolute
/// difference to the neighborhood mean.
pub fn ngtdm_oracle(v: &Volume) -> (Vec<u64>, Vec<f64>) {
    let n = v.n_levels;
    let all = voxels(v);
    let mut counts = vec![0u64; n];
    let mut sums = vec![0.0; n];
    for &a in &all {
        let nb: Vec<usize> = all.iter().filter(|&&b| touching(a, b)).map(|&b| lvl(v, b)).collect();
        if nb.is_empty() {
            continue;
        }
        let mean = nb.iter().sum::<usize>() as f64 / nb.len() as f64;
        counts[lvl(v, a)] += 1;
        sums[lvl(v, a)] += (lvl(v, a) as f64 - mean).abs();
    }
    (counts, sums)
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 { p * p.ln() } else { 0.0 }
}

/// Haralick statistics in library order, from textbook definitions with
/// 1-based gray levels.
pub fn glcm_stats(m: &[u64], n: usize) -> [f64; 13] {
    let total: u64 = m.iter().sum();
    if total == 0 {
        return [0.0; 13];
    }
    let p = |i: usize, j: usize| m[(i - 1) * n + (j - 1)] as f64 / total as f64;
    let levels = 1..=n;
    let px = |i: usize| levels.clone().map(|j| p(i, j)).sum::<f64>();
    let py = |j: usize| levels.clone().map(|i| p(i, j)).sum::<f64>();
    let pairs: Vec<(usize, usize)> = levels.clone().flat_map(|i| levels.clone().map(move |j| (i, j))).collect();
    let f = |i: usize| i as f64;
    let mux: f64 = levels.clone().map(|i| f(i) * px(i)).sum();
    let muy: f64 = levels.clone().map(|j| f(j) * py(j)).sum();
    let sx: f64 = levels.clone().map(|i| (f(i) - mux).powi(2) * px(i)).sum();
    let sy: f64 = levels.clone().map(|j| (f(j) - muy).powi(2) * py(j)).sum();
    let energy: f64 = pairs.iter().map(|&(i, j)| p(i, j).powi(2)).sum();
    let contrast: f64 = pairs.iter().map(|&(i, j)| (f(i) - f(j)).powi(2) * p(i, j)).sum();
    let correlation = if sx > 1e-15 && sy > 1e-15 {
        (pairs.iter().map(|&(i, j)| f(i) * f(j) * p(i, j)).sum::<f64>() - mux * muy) / (sx * sy).sqrt()
    } else {
        0.0
    };
    let idm: f64 = pairs.iter().map(|&(i, j)| p(i, j) / (1.0 + (f(i) - f(j)).powi(2))).sum();
    let psum = |k: usize| pairs.iter().filter(|&&(i, j)| i + j == k).map(|&(i, j)| p(i, j)).sum::<f64>();
    let pdiff = |k: usize| pairs.iter().filter(|&&(i, j)| i.abs_diff(j) == k).map(|&(i, j)| p(i, j)).sum::<f64>();
    let sum_avg: f64 = (2..=2 * n).map(|k| f(k) * psum(k)).sum();
    let sum_var: f64 = (2..=2 * n).map(|k| (f(k) - sum_avg).powi(2) * psum(k)).sum();
    let sum_ent: f64 = -(2..=2 * n).map(|k| xlogx(psum(k))).sum::<f64>();
    let hxy: f64 = -pairs.iter().map(|&(i, j)| xlogx(p(i, j))).sum::<f64>();
    let dmean: f64 = (0..n).map(|k| f(k) * pdiff(k)).sum();
    let dvar: f64 = (0..n).map(|k| (f(k) - dmean).powi(2) * pdiff(k)).sum();
    let dent: f64 = -(0..n).map(|k| xlogx(pdiff(k))).sum::<f64>();
    let hx: f64 = -levels.clone().map(|i| xlogx(px(i))).sum::<f64>();
    let hy: f64 = -levels.clone().map(|j| xlogx(py(j))).sum::<f64>();
    let (mut hxy1, mut hxy2) = (0.0, 0.0);
    for &(i, j) in &pairs {
        let q = px(i) * py(j);
        if q > 0.0 {
            hxy1 -= p(i, j) * q.ln();
            hxy2 -= q * q.ln();
        }
    }
    let imc1 = if hx.max(hy) > 0.0 { (hxy - hxy1) / hx.max(hy) } else { 0.0 };
    let imc2 = (1.0 - (-2.0 * (hxy2 - hxy)).exp()).max(0.0).sqrt();
    [energy, contrast, correlation, sx, idm, sum_avg, sum_var, sum_ent, hxy, dvar, dent, imc1, imc2]
}

/// Emphasis family over `(level, size) -> count` with 1-based levels:
/// short, long, level non-uniformity, size non-uniformity, low-gray,
/// high-gray, short-low, short-high, long-low, long-high.
fn emphasis(m: &BTreeMap<(usize, usize), u64>) -> [f64; 10] {
    let total: f64 = m.values().map(|&c| c as f64).sum();
    if total == 0.0 {
        return [0.0; 10];
    }
    let w = |f: &dyn Fn(f64, f64) -> f64| m.iter().map(|(&(g, s), &c)| c as f64 * f((g + 1) as f64, s as f64)).sum::<f64>() / total;
    let mut by_level: BTreeMap<usize, f64> = BTreeMap::new();
    let mut by_size: BTreeMap<usize, f64> = BTreeMap::new();
    for (&(g, s), &c) in m {
        *by_level.entry(g).or_default() += c as f64;
        *by_size.entry(s).or_default() += c as f64;
    }
    [
        w(&|_, s| 1.0 / (s * s)),
        w(&|_, s| s * s),
        by_level.values().map(|v| v * v).sum::<f64>() / total,
        by_size.values().map(|v| v * v).sum::<f64>() / total,
        w(&|i, _| 1.0 / (i * i)),
        w(&|i, _| i * i),
        w(&|i, s| 1.0 / (i * i * s * s)),
        w(&|i, s| i * i / (s * s)),
        w(&|i, s| s * s / (i * i)),
        w(&|i, s| i * i * s * s),
    ]
}

/// Run statistics; run percentage is runs over `13 · voxels`, since every
/// axis partitions the volume into runs.
pub fn glrlm_stats(m: &BTreeMap<(usize, usize), u64>, n_voxels: usize) -> [f64; 11] {
    let e = emphasis(m);
    let runs: u64 = m.values().sum();
    let rp = runs as f64 / (13 * n_voxels) as f64;
    [e[0], e[1], e[2], e[3], rp, e[4], e[5], e[6], e[7], e[8], e[9]]
}

/// Zone statistics plus zone percentage and the population variance of
/// zone sizes.
pub fn glszm_stats(m: &BTreeMap<(usize, usize), u64>, n_voxels: usize) -> [f64; 12] {
    let e = emphasis(m);
    let sizes: Vec<f64> = m.iter().flat_map(|(&(_, s), &c)| std::iter::repeat_n(s as f64, c as usize)).collect();
    let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
    let var = sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / sizes.len() as f64;
    let zp = sizes.len() as f64 / n_voxels as f64;
    [e[0], e[1], e[2], e[3], zp, e[4], e[5], e[6], e[7], e[8], e[9], var]
}

/// Coarseness (capped at `cap`), contrast, busyness, complexity, strength
/// over the levels present among voxels with a neighbor.
pub fn ngtdm_stats(counts: &[u64], sums: &[f64], cap: f64) -> [f64; 5] {
    let nvp: u64 = counts.iter().sum();
    if nvp == 0 {
        return [0.0; 5];
    }
    let nvp = nvp as f64;
    let lv: Vec<usize> = (0..counts.len()).filter(|&g| counts[g] > 0).collect();
    let i = |g: usize| (g + 1) as f64;
    let p = |g: usize| counts[g] as f64 / nvp;
    let ng = lv.len() as f64;
    let ps: f64 = lv.iter().map(|&g| p(g) * sums[g]).sum();
    let s: f64 = lv.iter().map(|&g| sums[g]).sum();
    let coarseness = if ps > 0.0 { (1.0 / ps).min(cap) } else { cap };
    let double = |f: &dyn Fn(usize, usize) -> f64| lv.iter().flat_map(|&a| lv.iter().map(move |&b| (a, b))).map(|(a, b)| f(a, b)).sum::<f64>();
    let contrast = if ng > 1.0 {
        double(&|a, b| p(a) * p(b) * (i(a) - i(b)).powi(2)) / (ng * (ng - 1.0)) * s / nvp
    } else {
        0.0
    };
    let bden = double(&|a, b| (i(a) * p(a) - i(b) * p(b)).abs());
    let busyness = if bden > 0.0 { ps / bden } else { 0.0 };
    let complexity = double(&|a, b| (i(a) - i(b)).abs() * (p(a) * sums[a] + p(b) * sums[b]) / (p(a) + p(b))) / nvp;
    let strength = if s > 0.0 { double(&|a, b| (p(a) + p(b)) * (i(a) - i(b)).powi(2)) / s } else { 0.0 };
    [coarseness, contrast, busyness, complexity, strength]
}

/// All 41 volume statistics from the oracle counts.
pub fn volume_stats_oracle(v: &Volume) -> Vec<f64> {
    let (nc, ns) = ngtdm_oracle(v);
    let mut out = glcm_stats(&glcm_oracle(v), v.n_levels).to_vec();
    out.extend(glrlm_stats(&glrlm_oracle(v), v.n_voxels()));
    out.extend(glszm_stats(&glszm_oracle(v), v.n_voxels()));
    out.extend(ngtdm_stats(&nc, &ns, vascmil::features::volume::NGTDM_COARSENESS_CAP));
    out
}

/// Agreement at `tol`, relative for magnitudes above one.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Checks one volume against the oracle; returns a description of the first
/// disagreement.
pub fn check_volume(v: &Volume, tol: f64) -> Result<(), String> {
    use vascmil::features::volume::{glcm, glrlm, glszm, ngtdm};
    if glcm(v) != glcm_oracle(v) {
        return Err("GLCM counts differ".into());
    }
    let rl = glrlm(v);
    let rl_lib: BTreeMap<(usize, usize), u64> = (0..rl.n_levels)
        .flat_map(|g| (1..=rl.max_len).map(move |l| (g, l)))
        .filter_map(|(g, l)| (rl.get(g, l) > 0).then(|| ((g, l), rl.get(g, l))))
        .collect();
    if rl_lib != glrlm_oracle(v) {
        return Err("GLRLM counts differ".into());
    }
    let sz = glszm(v);
    let sz_lib: BTreeMap<(usize, usize), u64> = (0..sz.n_levels)
        .flat_map(|g| (1..=sz.max_size).map(move |s| (g, s)))
        .filter_map(|(g, s)| (sz.get(g, s) > 0).then(|| ((g, s), sz.get(g, s))))
        .collect();
    if sz_lib != glszm_oracle(v) {
        return Err("GLSZM counts differ".into());
    }
    let nt = ngtdm(v);
    let (oc, os) = ngtdm_oracle(v);
    if nt.counts != oc {
        return Err("NGTDM counts differ".into());
    }
    if nt.sums.iter().zip(&os).any(|(a, b)| !close(*a, *b, tol)) {
        return Err("NGTDM sums differ".into());
    }
    let lib = vascmil::features::volume_features(v);
    let ora = volume_stats_oracle(v);
    for (k, (a, b)) in lib.iter().zip(&ora).enumerate() {
        if !close(*a, *b, tol) {
            return Err(format!("statistic {k}: {a} vs oracle {b}"));
        }
    }
    Ok(())
}

/// Two Gaussian blobs in 2-D; `gap` moves the class means apart.
pub fn blobs(seed: u64, n: usize, gap: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        rows.push(vec![s * gap + 0.5 * a, b]);
        y.push(s);
    }
    (rows, y)
}

/// Largest violation of the KKT conditions of the dual, measured on
/// `y_i f(x_i)` against the margin, plus `|Σ α_i y_i|`.
pub fn kkt_violation(gram: &[f64], y: &[f64], c: &[f64], alpha: &[f64], bias: f64) -> f64 {
    let n = y.len();
    let mut worst = alpha.iter().zip(y).map(|(a, b)| a * b).sum::<f64>().abs();
    for i in 0..n {
        let f: f64 = (0..n).map(|j| alpha[j] * y[j] * gram[i * n + j]).sum::<f64>() + bias;
        let m = y[i] * f;
        let eps = 1e-9 * c[i];
        let v = if alpha[i] <= eps {
            (1.0 - m).max(0.0)
        } else if alpha[i] >= c[i] - eps {
            (m - 1.0).max(0.0)
        } else {
            (m - 1.0).abs()
        };
        worst = worst.max(v);
        assert!(alpha[i] >= -1e-12 && alpha[i] <= c[i] + 1e-12, "alpha outside its box");
    }
    worst
}
