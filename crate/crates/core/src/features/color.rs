//! Color features over a quantized patch: mean color, palette histogram,
//! auto-correlogram, coherence vector and Sobel edge histograms.

use crate::patch::{Patch, QuantizedPatch};

/// Palette slots; shorter palettes are zero-padded.
pub const PALETTE_SLOTS: usize = 32;
pub const CORRELOGRAM_DISTANCES: [usize; 4] = [1, 3, 5, 7];
/// Minimum connected-region size, as a fraction of patch area, for its
/// pixels to count as coherent.
pub const COHERENCE_FRACTION: f64 = 0.01;
pub const EDGE_BINS: usize = 16;

pub const MEAN_LEN: usize = 3;
pub const HISTOGRAM_LEN: usize = PALETTE_SLOTS;
pub const CORRELOGRAM_LEN: usize = PALETTE_SLOTS * CORRELOGRAM_DISTANCES.len();
pub const COHERENCE_LEN: usize = 2 * PALETTE_SLOTS;
pub const EDGE_LEN: usize = 2 * EDGE_BINS;
pub const COLOR_LEN: usize = MEAN_LEN + HISTOGRAM_LEN + CORRELOGRAM_LEN + COHERENCE_LEN + EDGE_LEN;

/// Mean R, G, B of the raw patch scaled to `[0, 1]`.
pub fn mean_rgb(patch: &Patch) -> [f64; 3] {
    let n = patch.pixels().len() as f64;
    let mut acc = [0.0; 3];
    for p in patch.pixels() {
        for ch in 0..3 {
            acc[ch] += f64::from(p[ch]);
        }
    }
    acc.map(|v| v / (n * 255.0))
}

/// Fraction of pixels assigned to each palette slot.
pub fn palette_histogram(q: &QuantizedPatch) -> Vec<f64> {
    let mut h = vec![0.0; PALETTE_SLOTS];
    let n = q.indices().len() as f64;
    for &i in q.indices() {
        h[usize::from(i)] += 1.0;
    }
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// For each distance `d` and color `c`: among in-bounds pixels at chessboard
/// distance exactly `d` from a pixel of color `c`, the fraction that also
/// have color `c`. Distance-major layout; absent colors give 0.
pub fn auto_correlogram(q: &QuantizedPatch, distances: &[usize]) -> Vec<f64> {
    let n = q.side() as isize;
    let mut out = Vec::with_capacity(PALETTE_SLOTS * distances.len());
    for &d in distances {
        let d = d as isize;
        let ring: Vec<(isize, isize)> = (-d..=d)
            .flat_map(|dr| (-d..=d).map(move |dc| (dr, dc)))
            .filter(|&(dr, dc)| dr.abs().max(dc.abs()) == d)
            .collect();
        let mut same = [0u64; PALETTE_SLOTS];
        let mut total = [0u64; PALETTE_SLOTS];
        for r in 0..n {
            for c in 0..n {
                let k = q.index(r as usize, c as usize);
                for &(dr, dc) in &ring {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= n || cc >= n {
                        continue;
                    }
                    total[k] += 1;
                    if q.index(rr as usize, cc as usize) == k {
                        same[k] += 1;
                    }
                }
            }
        }
        out.extend((0..PALETTE_SLOTS).map(|k| {
            if total[k] > 0 {
                same[k] as f64 / total[k] as f64
            } else {
                0.0
            }
        }));
    }
    out
}

/// Per color, the fraction of all pixels lying in 8-connected same-color
/// regions of at least `ceil(COHERENCE_FRACTION · area)` pixels (coherent),
/// followed by the fraction in smaller regions (incoherent).
pub fn coherence_vector(q: &QuantizedPatch) -> Vec<f64> {
    let n = q.side();
    let area = n * n;
    let threshold = ((COHERENCE_FRACTION * area as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut seen = vec![false; area];
    let mut out = vec![0.0; COHERENCE_LEN];
    let mut stack = Vec::new();
    for start in 0..area {
        if seen[start] {
            continue;
        }
        let k = usize::from(q.indices()[start]);
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            let (r, c) = ((p / n) as isize, (p % n) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= n as isize || cc >= n as isize {
                        continue;
                    }
                    let np = rr as usize * n + cc as usize;
                    if !seen[np] && usize::from(q.indices()[np]) == k {
                        seen[np] = true;
                        stack.push(np);
                    }
                }
            }
        }
        let slot = 2 * k + usize::from(size < threshold);
        out[slot] += size as f64 / area as f64;
    }
    out
}

/// Sobel edge magnitude and direction histograms, accumulated over the R, G
/// and B planes of the palette-reconstructed patch (values in `[0, 1]`).
///
/// Magnitude uses 16 bins over `[0, 4√2]` and counts every interior pixel of
/// every plane. Direction uses 16 bins over `[0°, 360°)` and counts only
/// pixels with non-zero magnitude, so a flat patch yields all zeros there.
pub fn edge_histograms(q: &QuantizedPatch) -> Vec<f64> {
    let n = q.side();
    let mut mag_hist = vec![0.0; EDGE_BINS];
    let mut dir_hist = vec![0.0; EDGE_BINS];
    if n < 3 {
        return [mag_hist, dir_hist].concat();
    }
    let max_mag = 4.0 * std::f64::consts::SQRT_2;
    let mut n_mag = 0.0;
    let mut n_dir = 0.0;
    for ch in 0..3 {
        let v = |r: usize, c: usize| q.palette()[q.index(r, c)][ch] / 255.0;
        for r in 1..n - 1 {
            for c in 1..n - 1 {
                let gx = (v(r - 1, c + 1) + 2.0 * v(r, c + 1) + v(r + 1, c + 1))
                    - (v(r - 1, c - 1) + 2.0 * v(r, c - 1) + v(r + 1, c - 1));
                let gy = (v(r + 1, c - 1) + 2.0 * v(r + 1, c) + v(r + 1, c + 1))
                    - (v(r - 1, c - 1) + 2.0 * v(r - 1, c) + v(r - 1, c + 1));
                let mag = gx.hypot(gy);
                let bin = ((mag / max_mag * EDGE_BINS as f64) as usize).min(EDGE_BINS - 1);
                mag_hist[bin] += 1.0;
                n_mag += 1.0;
                if mag > 1e-12 {
                    let deg = gy.atan2(gx).to_degrees().rem_euclid(360.0);
                    let bin = ((deg / (360.0 / EDGE_BINS as f64)) as usize).min(EDGE_BINS - 1);
                    dir_hist[bin] += 1.0;
                    n_dir += 1.0;
                }
            }
        }
    }
    mag_hist.iter_mut().for_each(|v| *v /= n_mag);
    if n_dir > 0.0 {
        dir_hist.iter_mut().for_each(|v| *v /= n_dir);
    }
    [mag_hist, dir_hist].concat()
}

/// The full 259-long color segment.
pub fn color_features(q: &QuantizedPatch, patch: &Patch) -> Vec<f64> {
    let mut out = Vec::with_capacity(COLOR_LEN);
    out.extend(mean_rgb(patch));
    out.extend(palette_histogram(q));
    out.extend(auto_correlogram(q, &CORRELOGRAM_DISTANCES));
    out.extend(coherence_vector(q));
    out.extend(edge_histograms(q));
    debug_assert_eq!(out.len(), COLOR_LEN);
    out
}
