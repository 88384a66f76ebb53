//! Intensity texture features: HOG, Tamura and an MPEG-7 style edge histogram.

use std::f64::consts::PI;

use crate::error::{invalid_arg, Result};
use crate::patch::Patch;

pub const TEXTURE_SIDE: usize = 64;
pub const HOG_CELL: usize = 16;
pub const HOG_BINS: usize = 7;
pub const HOG_LEN: usize = 3 * 3 * 4 * HOG_BINS;
pub const TAMURA_LEN: usize = 3;
pub const EHD_LEN: usize = 16 * 5;
pub const TEXTURE_LEN: usize = HOG_LEN + TAMURA_LEN + EHD_LEN;

/// Tamura directionality histogram bins and edge threshold (0..255 scale).
const DIRECTIONALITY_BINS: usize = 16;
const DIRECTIONALITY_THRESHOLD: f64 = 12.0;
/// Minimum filter response (0..255 scale) for an EHD block to count as an edge.
pub const EHD_THRESHOLD: f64 = 11.0;

/// Row-major grayscale plane.
#[derive(Debug, Clone)]
pub struct Gray {
    pub side: usize,
    pub data: Vec<f64>,
}

impl Gray {
    /// `(R + G + B) / 3` per pixel, on the 0..255 scale.
    pub fn intensity(patch: &Patch) -> Self {
        let data = patch
            .pixels()
            .iter()
            .map(|p| (f64::from(p[0]) + f64::from(p[1]) + f64::from(p[2])) / 3.0)
            .collect();
        Self {
            side: patch.side(),
            data,
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.side + c]
    }

    #[inline]
    fn clamped(&self, r: isize, c: isize) -> f64 {
        let n = self.side as isize - 1;
        self.at(r.clamp(0, n) as usize, c.clamp(0, n) as usize)
    }
}

/// HOG with 16×16 cells, 7 unsigned orientation bins over `[0°, 180°)`,
/// centered-difference gradients (border replicated), hard binning weighted
/// by magnitude, and L2-normalized 2×2-cell blocks with a one-cell stride.
/// Blocks whose norm is zero stay zero.
pub fn hog(gray: &Gray) -> Vec<f64> {
    let n = gray.side;
    let cells = n / HOG_CELL;
    let mut cell_hist = vec![0.0; cells * cells * HOG_BINS];
    let bin_width = 180.0 / HOG_BINS as f64;
    for r in 0..n {
        for c in 0..n {
            let (ri, ci) = (r as isize, c as isize);
            let gx = (gray.clamped(ri, ci + 1) - gray.clamped(ri, ci - 1)) / 255.0;
            let gy = (gray.clamped(ri + 1, ci) - gray.clamped(ri - 1, ci)) / 255.0;
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let deg = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let bin = ((deg / bin_width) as usize).min(HOG_BINS - 1);
            let cell = (r / HOG_CELL) * cells + c / HOG_CELL;
            cell_hist[cell * HOG_BINS + bin] += mag;
        }
    }
    let mut out = Vec::with_capacity((cells - 1) * (cells - 1) * 4 * HOG_BINS);
    for br in 0..cells - 1 {
        for bc in 0..cells - 1 {
            let mut block = Vec::with_capacity(4 * HOG_BINS);
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let cell = (br + dr) * cells + bc + dc;
                block.extend_from_slice(&cell_hist[cell * HOG_BINS..(cell + 1) * HOG_BINS]);
            }
            let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                block.iter_mut().for_each(|v| *v /= norm);
            }
            out.extend(block);
        }
    }
    out
}

/// Mean of the box `[r0, r1) × [c0, c1)` clipped to the plane, from a
/// summed-area table with one row/column of zero padding.
fn box_mean(sat: &[f64], n: usize, r0: isize, r1: isize, c0: isize, c1: isize) -> f64 {
    let clip = |v: isize| v.clamp(0, n as isize) as usize;
    let (r0, r1, c0, c1) = (clip(r0), clip(r1), clip(c0), clip(c1));
    let area = (r1 - r0) * (c1 - c0);
    if area == 0 {
        return 0.0;
    }
    let w = n + 1;
    (sat[r1 * w + c1] - sat[r0 * w + c1] - sat[r1 * w + c0] + sat[r0 * w + c0]) / area as f64
}

/// Tamura coarseness: mean over pixels of the window size `2^k`
/// (`k = 1..=5`) maximizing the difference between opposite neighboring
/// window averages. Windows are clipped at the border.
pub fn tamura_coarseness(gray: &Gray) -> f64 {
    let n = gray.side;
    let w = n + 1;
    let mut sat = vec![0.0; w * w];
    for r in 0..n {
        let mut run = 0.0;
        for c in 0..n {
            run += gray.at(r, c);
            sat[(r + 1) * w + c + 1] = sat[r * w + c + 1] + run;
        }
    }
    let max_k = (1..=5).take_while(|&k| (1usize << k) <= n).last().unwrap_or(1);
    let mut total = 0.0;
    for r in 0..n as isize {
        for c in 0..n as isize {
            let mut best = (f64::NEG_INFINITY, 1usize);
            for k in 1..=max_k {
                let size = 1isize << k;
                let half = size / 2;
                let avg = |cr: isize, cc: isize| {
                    box_mean(&sat, n, cr - half, cr + half, cc - half, cc + half)
                };
                let eh = (avg(r, c + half) - avg(r, c - half)).abs();
                let ev = (avg(r + half, c) - avg(r - half, c)).abs();
                let e = eh.max(ev);
                if e > best.0 {
                    best = (e, 1 << k);
                }
            }
            total += best.1 as f64;
        }
    }
    total / (n * n) as f64
}

/// Tamura contrast `σ / α₄^{1/4}` with `α₄ = μ₄ / σ⁴`; zero for flat patches.
pub fn tamura_contrast(gray: &Gray) -> f64 {
    let n = gray.data.len() as f64;
    let mean = gray.data.iter().sum::<f64>() / n;
    let var = gray.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = gray.data.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    if var <= 1e-12 || m4 <= 0.0 {
        return 0.0;
    }
    let alpha4 = m4 / (var * var);
    var.sqrt() / alpha4.powf(0.25)
}

/// Tamura directionality in `[0, 1]`: one minus the normalized second moment
/// of the edge-angle histogram around its peak (circular over `[0, π)`).
/// Zero when no pixel passes the edge threshold.
pub fn tamura_directionality(gray: &Gray) -> f64 {
    let n = gray.side;
    if n < 3 {
        return 0.0;
    }
    let mut hist = [0.0; DIRECTIONALITY_BINS];
    let mut count = 0.0;
    for r in 1..n - 1 {
        for c in 1..n - 1 {
            let mut dh = 0.0;
            let mut dv = 0.0;
            for k in 0..3 {
                dh += gray.at(r - 1 + k, c + 1) - gray.at(r - 1 + k, c - 1);
                dv += gray.at(r + 1, c - 1 + k) - gray.at(r - 1, c - 1 + k);
            }
            let mag = (dh.abs() + dv.abs()) / 2.0;
            if mag < DIRECTIONALITY_THRESHOLD {
                continue;
            }
            let theta = dv.atan2(dh).rem_euclid(PI);
            let bin = ((theta / PI * DIRECTIONALITY_BINS as f64) as usize).min(DIRECTIONALITY_BINS - 1);
            hist[bin] += 1.0;
            count += 1.0;
        }
    }
    if count == 0.0 {
        return 0.0;
    }
    let peak = (0..DIRECTIONALITY_BINS)
        .fold(0, |best, b| if hist[b] > hist[best] { b } else { best });
    let center = |b: usize| (b as f64 + 0.5) * PI / DIRECTIONALITY_BINS as f64;
    let spread: f64 = (0..DIRECTIONALITY_BINS)
        .map(|b| {
            let d = (center(b) - center(peak)).abs();
            let d = d.min(PI - d);
            hist[b] / count * d * d
        })
        .sum();
    1.0 - spread / (PI / 2.0).powi(2)
}

/// Edge types in EHD order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeType {
    Vertical = 0,
    Horizontal = 1,
    Diagonal45 = 2,
    Diagonal135 = 3,
    NonDirectional = 4,
}

const S2: f64 = std::f64::consts::SQRT_2;
/// Filter taps over the 2×2 sub-block means (top-left, top-right,
/// bottom-left, bottom-right).
pub const EHD_FILTERS: [[f64; 4]; 5] = [
    [1.0, -1.0, 1.0, -1.0],
    [1.0, 1.0, -1.0, -1.0],
    [S2, 0.0, 0.0, -S2],
    [0.0, S2, -S2, 0.0],
    [2.0, -2.0, -2.0, 2.0],
];

/// Strongest edge type of a 4×4 block at `(r0, c0)`, if above threshold.
pub fn classify_block(gray: &Gray, r0: usize, c0: usize) -> Option<EdgeType> {
    let mut sub = [0.0; 4];
    for (k, (dr, dc)) in [(0, 0), (0, 2), (2, 0), (2, 2)].into_iter().enumerate() {
        let (r, c) = (r0 + dr, c0 + dc);
        sub[k] = (gray.at(r, c) + gray.at(r, c + 1) + gray.at(r + 1, c) + gray.at(r + 1, c + 1)) / 4.0;
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (t, f) in EHD_FILTERS.iter().enumerate() {
        let v = (0..4).map(|k| sub[k] * f[k]).sum::<f64>().abs();
        if v > best.1 {
            best = (t, v);
        }
    }
    if best.1 < EHD_THRESHOLD {
        return None;
    }
    Some(match best.0 {
        0 => EdgeType::Vertical,
        1 => EdgeType::Horizontal,
        2 => EdgeType::Diagonal45,
        3 => EdgeType::Diagonal135,
        _ => EdgeType::NonDirectional,
    })
}

/// 4×4 sub-images, each tiled by 4×4-pixel blocks; per sub-image the fraction
/// of blocks of each edge type. Sub-image-major, 5 types each.
pub fn edge_histogram_descriptor(gray: &Gray) -> Vec<f64> {
    let n = gray.side;
    let sub = n / 4;
    let blocks_per_side = sub / 4;
    let n_blocks = (blocks_per_side * blocks_per_side) as f64;
    let mut out = vec![0.0; EHD_LEN];
    for sr in 0..4 {
        for sc in 0..4 {
            let base = (sr * 4 + sc) * 5;
            for br in 0..blocks_per_side {
                for bc in 0..blocks_per_side {
                    if let Some(t) = classify_block(gray, sr * sub + br * 4, sc * sub + bc * 4) {
                        out[base + t as usize] += 1.0 / n_blocks;
                    }
                }
            }
        }
    }
    out
}

/// The full 335-long texture segment; requires a 64×64 patch.
pub fn texture_features(patch: &Patch) -> Result<Vec<f64>> {
    if patch.side() != TEXTURE_SIDE {
        return Err(invalid_arg(format!(
            "texture features need a {TEXTURE_SIDE}x{TEXTURE_SIDE} patch, got side {}",
            patch.side()
        )));
    }
    let gray = Gray::intensity(patch);
    let mut out = hog(&gray);
    out.push(tamura_coarseness(&gray));
    out.push(tamura_contrast(&gray));
    out.push(tamura_directionality(&gray));
    out.extend(edge_histogram_descriptor(&gray));
    debug_assert_eq!(out.len(), TEXTURE_LEN);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_patch() {
        let p = Patch::from_fn(64, |_, _| [90, 90, 90]).unwrap();
        let f = texture_features(&p).unwrap();
        assert_eq!(f.len(), 335);
        assert!(f[..HOG_LEN].iter().all(|&v| v == 0.0));
        assert_eq!(f[HOG_LEN + 1], 0.0);
        assert_eq!(f[HOG_LEN + 2], 0.0);
        assert!(f[HOG_LEN + 3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_edge_fills_the_zero_degree_bin() {
        let p = Patch::from_fn(64, |_, c| if c < 32 { [20, 20, 20] } else { [220, 220, 220] }).unwrap();
        let h = hog(&Gray::intensity(&p));
        let mut per_bin = [0.0; HOG_BINS];
        for (i, v) in h.iter().enumerate() {
            per_bin[i % HOG_BINS] += v;
        }
        assert!(per_bin[0] > 0.0);
        assert!(per_bin[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hog_blocks_are_unit_or_zero() {
        let p = Patch::from_fn(64, |r, c| [(r * 3) as u8, (c * 2) as u8, ((r * c) % 256) as u8]).unwrap();
        let h = hog(&Gray::intensity(&p));
        for block in h.chunks(4 * HOG_BINS) {
            let norm: f64 = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_side_rejected() {
        let p = Patch::from_fn(32, |_, _| [0, 0, 0]).unwrap();
        assert!(texture_features(&p).is_err());
    }

    #[test]
    fn stripes_are_strongly_directional() {
        let p = Patch::from_fn(64, |_, c| if (c / 4) % 2 == 0 { [0, 0, 0] } else { [255, 255, 255] }).unwrap();
        let g = Gray::intensity(&p);
        assert!(tamura_directionality(&g) > 0.99);
        assert!(tamura_contrast(&g) > 0.0);
    }

    #[test]
    fn tamura_coarseness_grows_with_texture_scale() {
        let fine = Patch::from_fn(64, |r, c| if (r + c) % 2 == 0 { [0, 0, 0] } else { [255, 255, 255] }).unwrap();
        let coarse = Patch::from_fn(64, |r, c| if (r / 16 + c / 16) % 2 == 0 { [0, 0, 0] } else { [255, 255, 255] }).unwrap();
        assert!(tamura_coarseness(&Gray::intensity(&coarse)) > tamura_coarseness(&Gray::intensity(&fine)));
    }
}
