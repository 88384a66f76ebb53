//! Image ingest, sliding-window patch extraction and k-means color quantization.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{invalid_arg, invalid_data, Error, Result};

pub type Rgb = [u8; 3];

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid_data("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(invalid_data(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> Rgb) -> Result<Self> {
        let pixels = (0..height)
            .flat_map(|r| (0..width).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, row: usize, col: usize) -> Rgb {
        self.pixels[row * self.width + col]
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    /// Loads any 8-bit image the `image` crate can decode, converted to RGB.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let pixels = img.pixels().map(|p| p.0).collect();
        Self::new(w as usize, h as usize, pixels)
    }
}

/// Binary region-of-interest raster; `true` marks pixels inside the ROI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl RoiMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(invalid_data("mask dimensions do not match its raster"));
        }
        if !bits.iter().any(|&b| b) {
            return Err(invalid_data("mask has no pixel inside the ROI"));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![true; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let bits = (0..height)
            .flat_map(|r| (0..width).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        Self::new(width, height, bits)
    }

    /// Grayscale PNG thresholded at 128 (values >= 128 are inside).
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        let bits = img.pixels().map(|p| p.0[0] >= 128).collect();
        Self::new(w as usize, h as usize, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }
}

/// A square block of pixels cut from an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    side: usize,
    pixels: Vec<Rgb>,
    /// `(row, col)` of the top-left pixel in the source image.
    pub origin: (usize, usize),
}

impl Patch {
    pub fn new(side: usize, pixels: Vec<Rgb>, origin: (usize, usize)) -> Result<Self> {
        if side == 0 || pixels.len() != side * side {
            return Err(invalid_data(format!(
                "patch of side {side} needs {} pixels, got {}",
                side * side,
                pixels.len()
            )));
        }
        Ok(Self {
            side,
            pixels,
            origin,
        })
    }

    pub fn from_fn(side: usize, f: impl Fn(usize, usize) -> Rgb) -> Result<Self> {
        let pixels = (0..side)
            .flat_map(|r| (0..side).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        Self::new(side, pixels, (0, 0))
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> Rgb {
        self.pixels[row * self.side + col]
    }

    /// Rotates the patch by 90 degrees clockwise.
    pub fn rotated_90(&self) -> Patch {
        let n = self.side;
        Patch::from_fn(n, |r, c| self.pixel(n - 1 - c, r)).expect("same size")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub size: usize,
    pub overlap: f64,
    /// Fraction of window pixels that must lie inside the mask.
    pub min_inside_fraction: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            size: 64,
            overlap: 0.5,
            min_inside_fraction: 1.0,
        }
    }
}

impl ExtractConfig {
    pub fn stride(&self) -> usize {
        ((self.size as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(invalid_arg("patch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(invalid_arg(format!("overlap must lie in [0, 1), got {}", self.overlap)));
        }
        if !(self.min_inside_fraction > 0.0 && self.min_inside_fraction <= 1.0) {
            return Err(invalid_arg(format!(
                "min_inside_fraction must lie in (0, 1], got {}",
                self.min_inside_fraction
            )));
        }
        Ok(())
    }
}

/// Slides a `size`×`size` window with stride `size·(1 − overlap)` and keeps
/// every window with enough pixels inside the mask. Patches come out
/// row-major by origin.
pub fn extract_patches(image: &RgbImage, mask: &RoiMask, cfg: &ExtractConfig) -> Result<Vec<Patch>> {
    cfg.validate()?;
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(invalid_data(format!(
            "mask is {}x{} but image is {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    let (w, h, size) = (image.width(), image.height(), cfg.size);
    if size > w.min(h) {
        return Err(invalid_arg(format!("patch size {size} exceeds image {w}x{h}")));
    }
    // Summed-area table over mask bits, (h+1)×(w+1).
    let mut sat = vec![0usize; (w + 1) * (h + 1)];
    for r in 0..h {
        let mut run = 0;
        for c in 0..w {
            run += usize::from(mask.get(r, c));
            sat[(r + 1) * (w + 1) + c + 1] = sat[r * (w + 1) + c + 1] + run;
        }
    }
    let inside = |r: usize, c: usize| {
        sat[(r + size) * (w + 1) + c + size] + sat[r * (w + 1) + c]
            - sat[r * (w + 1) + c + size]
            - sat[(r + size) * (w + 1) + c]
    };
    let required = (cfg.min_inside_fraction * (size * size) as f64 - 1e-9).ceil() as usize;
    let stride = cfg.stride();
    let mut out = Vec::new();
    for r in (0..=h - size).step_by(stride) {
        for c in (0..=w - size).step_by(stride) {
            if inside(r, c) >= required {
                let pixels = (r..r + size)
                    .flat_map(|y| (c..c + size).map(move |x| (y, x)))
                    .map(|(y, x)| image.pixel(y, x))
                    .collect();
                out.push(Patch::new(size, pixels, (r, c))?);
            }
        }
    }
    Ok(out)
}

/// Palette-index raster produced by color quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedPatch {
    side: usize,
    indices: Vec<u8>,
    palette: Vec<[f64; 3]>,
}

impl QuantizedPatch {
    pub fn new(side: usize, indices: Vec<u8>, palette: Vec<[f64; 3]>) -> Result<Self> {
        if indices.len() != side * side {
            return Err(invalid_data("index raster does not match patch side"));
        }
        if palette.is_empty() || palette.len() > 256 {
            return Err(invalid_data("palette must hold 1..=256 colors"));
        }
        if indices.iter().any(|&i| usize::from(i) >= palette.len()) {
            return Err(invalid_data("palette index out of range"));
        }
        Ok(Self {
            side,
            indices,
            palette,
        })
    }

    /// Maps every patch pixel to its nearest entry of a precomputed palette.
    pub fn from_palette(patch: &Patch, palette: &[[f64; 3]]) -> Result<Self> {
        let indices = patch
            .pixels()
            .iter()
            .map(|&p| nearest(&to_f64(p), palette).0 as u8)
            .collect();
        Self::new(patch.side(), indices, palette.to_vec())
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn indices(&self) -> &[u8] {
        &self.indices
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        usize::from(self.indices[row * self.side + col])
    }

    pub fn palette(&self) -> &[[f64; 3]] {
        &self.palette
    }
}

/// Result of k-means over a pixel set.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorClustering {
    pub palette: Vec<[f64; 3]>,
    /// Palette index of every input pixel, in input order.
    pub assignment: Vec<u8>,
    /// Within-cluster squared error after each assignment step.
    pub sse_trace: Vec<f64>,
}

pub const KMEANS_MAX_ITER: usize = 50;

fn to_f64(p: Rgb) -> [f64; 3] {
    [f64::from(p[0]), f64::from(p[1]), f64::from(p[2])]
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Index and squared distance of the nearest center; ties go to the lowest index.
fn nearest(p: &[f64; 3], centers: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Lloyd k-means over RGB triples with seeded farthest-point initialization.
///
/// Runs over the distinct colors weighted by multiplicity, which is
/// equivalent to running over every pixel. When there are at most
/// `n_colors` distinct colors the palette is exactly that set. Palettes are
/// returned sorted by luma.
pub fn kmeans_colors(pixels: &[Rgb], n_colors: usize, seed: u64) -> Result<ColorClustering> {
    if n_colors == 0 || n_colors > 256 {
        return Err(invalid_arg(format!("n_colors must lie in 1..=256, got {n_colors}")));
    }
    if pixels.is_empty() {
        return Err(invalid_data("cannot quantize an empty pixel set"));
    }
    let mut counts: BTreeMap<Rgb, usize> = BTreeMap::new();
    for &p in pixels {
        *counts.entry(p).or_default() += 1;
    }
    let colors: Vec<Rgb> = counts.keys().copied().collect();
    let weights: Vec<f64> = counts.values().map(|&c| c as f64).collect();
    let points: Vec<[f64; 3]> = colors.iter().map(|&c| to_f64(c)).collect();

    if colors.len() <= n_colors {
        let labels: Vec<usize> = (0..colors.len()).collect();
        return Ok(canonical_clustering(pixels, &colors, points, &labels, vec![0.0]));
    }

    // First center drawn in proportion to color multiplicity, so the result
    // depends on the pixel multiset only and not on pixel order.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ticket = rng.random_range(0..pixels.len());
    let mut first = 0;
    for (i, &w) in weights.iter().enumerate() {
        let w = w as usize;
        if ticket < w {
            first = i;
            break;
        }
        ticket -= w;
    }
    let mut centers = vec![points[first]];
    let mut min_d: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < n_colors {
        let mut far = 0;
        for (i, &d) in min_d.iter().enumerate() {
            if d > min_d[far] {
                far = i;
            }
        }
        let c = points[far];
        for (i, p) in points.iter().enumerate() {
            min_d[i] = min_d[i].min(dist2(p, &c));
        }
        centers.push(c);
    }

    let mut labels = vec![usize::MAX; points.len()];
    let mut sse_trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        let mut sse = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (k, d) = nearest(p, &centers);
            sse += weights[i] * d;
            if labels[i] != k {
                labels[i] = k;
                changed = true;
            }
        }
        sse_trace.push(sse);
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; 3]; centers.len()];
        let mut mass = vec![0.0; centers.len()];
        for (i, p) in points.iter().enumerate() {
            let k = labels[i];
            mass[k] += weights[i];
            for ch in 0..3 {
                sums[k][ch] += weights[i] * p[ch];
            }
        }
        for k in 0..centers.len() {
            // An emptied cluster keeps its previous center.
            if mass[k] > 0.0 {
                centers[k] = [sums[k][0] / mass[k], sums[k][1] / mass[k], sums[k][2] / mass[k]];
            }
        }
    }
    Ok(canonical_clustering(pixels, &colors, centers, &labels, sse_trace))
}

fn luma(c: &[f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Sorts the palette by luma (then R, G, B) and maps every pixel through
/// the per-distinct-color labels.
fn canonical_clustering(
    pixels: &[Rgb],
    colors: &[Rgb],
    centers: Vec<[f64; 3]>,
    labels: &[usize],
    sse_trace: Vec<f64>,
) -> ColorClustering {
    let mut order: Vec<usize> = (0..centers.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&centers[a], &centers[b]);
        luma(ca)
            .total_cmp(&luma(cb))
            .then(ca[0].total_cmp(&cb[0]))
            .then(ca[1].total_cmp(&cb[1]))
            .then(ca[2].total_cmp(&cb[2]))
    });
    let mut rank = vec![0usize; centers.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let palette = order.iter().map(|&k| centers[k]).collect();
    let assignment = pixels
        .iter()
        .map(|p| rank[labels[colors.binary_search(p).expect("color present")]] as u8)
        .collect();
    ColorClustering {
        palette,
        assignment,
        sse_trace,
    }
}

/// Quantizes one patch to at most `n_colors` palette entries.
pub fn quantize_colors(patch: &Patch, n_colors: usize, seed: u64) -> Result<QuantizedPatch> {
    let km = kmeans_colors(patch.pixels(), n_colors, seed)?;
    QuantizedPatch::new(patch.side(), km.assignment, km.palette)
}

/// Palette fitted on every ROI pixel of an image, for quantizing per ROI
/// instead of per patch.
pub fn roi_palette(image: &RgbImage, mask: &RoiMask, n_colors: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    let pixels: Vec<Rgb> = (0..image.height())
        .flat_map(|r| (0..image.width()).map(move |c| (r, c)))
        .filter(|&(r, c)| mask.get(r, c))
        .map(|(r, c)| image.pixel(r, c))
        .collect();
    Ok(kmeans_colors(&pixels, n_colors, seed)?.palette)
}

const PATCH_MAGIC: &[u8; 8] = b"VMPATCH\0";
const PATCH_VERSION: u32 = 1;

/// Writes patches as: header, `u64` count, then per patch `u64` side,
/// `u64` origin row, `u64` origin col and `side²·3` RGB bytes, row-major.
pub fn write_patches<W: Write>(w: &mut W, patches: &[Patch]) -> Result<()> {
    binio::write_header(w, PATCH_MAGIC, PATCH_VERSION)?;
    binio::write_usize(w, patches.len())?;
    for p in patches {
        binio::write_usize(w, p.side)?;
        binio::write_usize(w, p.origin.0)?;
        binio::write_usize(w, p.origin.1)?;
        let bytes: Vec<u8> = p.pixels.iter().flatten().copied().collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_patches<R: Read>(r: &mut R) -> Result<Vec<Patch>> {
    binio::read_header(r, PATCH_MAGIC, PATCH_VERSION)?;
    let n = binio::read_usize(r)?;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let side = binio::read_usize(r)?;
        let origin = (binio::read_usize(r)?, binio::read_usize(r)?);
        if side == 0 || side > 1 << 12 {
            return Err(Error::Format(format!("patch side {side} out of range")));
        }
        let mut bytes = vec![0u8; side * side * 3];
        r.read_exact(&mut bytes)?;
        let pixels = bytes.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        out.push(Patch::new(side, pixels, origin)?);
    }
    Ok(out)
}

pub fn save_patches(path: &Path, patches: &[Patch]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_patches(&mut w, patches)?;
    w.flush()?;
    Ok(())
}

pub fn load_patches(path: &Path) -> Result<Vec<Patch>> {
    read_patches(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_file_round_trip() {
        let a = Patch::new(2, vec![[1, 2, 3], [4, 5, 6], [7, 8, 9], [10, 11, 12]], (5, 7)).unwrap();
        let b = Patch::from_fn(3, |r, c| [r as u8, c as u8, 200]).unwrap();
        let mut buf = Vec::new();
        write_patches(&mut buf, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(read_patches(&mut buf.as_slice()).unwrap(), vec![a, b]);
        buf[0] = b'X';
        assert!(read_patches(&mut buf.as_slice()).is_err());
    }

    fn gradient_image(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |r, c| [(r % 256) as u8, (c % 256) as u8, 7]).unwrap()
    }

    #[test]
    fn single_window() {
        let img = gradient_image(64, 64);
        let patches = extract_patches(&img, &RoiMask::full(64, 64).unwrap(), &ExtractConfig::default()).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].origin, (0, 0));
    }

    #[test]
    fn stride_arithmetic() {
        let img = gradient_image(96, 64);
        let patches = extract_patches(&img, &RoiMask::full(96, 64).unwrap(), &ExtractConfig::default()).unwrap();
        let origins: Vec<_> = patches.iter().map(|p| p.origin).collect();
        assert_eq!(origins, vec![(0, 0), (0, 32)]);
        assert_eq!(patches[1].pixel(0, 0), img.pixel(0, 32));
    }

    #[test]
    fn full_mask_patch_count_formula() {
        for (w, h) in [(64, 64), (100, 200), (130, 97), (256, 128)] {
            let img = gradient_image(w, h);
            let n = extract_patches(&img, &RoiMask::full(w, h).unwrap(), &ExtractConfig::default())
                .unwrap()
                .len();
            assert_eq!(n, ((w - 64) / 32 + 1) * ((h - 64) / 32 + 1), "{w}x{h}");
        }
    }

    #[test]
    fn windows_lie_inside_the_mask() {
        let (w, h) = (160, 160);
        let mask = RoiMask::from_fn(w, h, |r, c| {
            let (dr, dc) = (r as f64 - 80.0, c as f64 - 80.0);
            dr * dr + dc * dc < 70.0 * 70.0
        })
        .unwrap();
        let img = gradient_image(w, h);
        let patches = extract_patches(&img, &mask, &ExtractConfig::default()).unwrap();
        assert!(!patches.is_empty());
        for p in &patches {
            let (r0, c0) = p.origin;
            for r in r0..r0 + 64 {
                for c in c0..c0 + 64 {
                    assert!(mask.get(r, c));
                }
            }
        }
        let loose = ExtractConfig {
            min_inside_fraction: 0.5,
            ..ExtractConfig::default()
        };
        assert!(extract_patches(&img, &mask, &loose).unwrap().len() > patches.len());
    }

    #[test]
    fn extraction_errors() {
        let img = gradient_image(64, 64);
        assert!(extract_patches(&img, &RoiMask::full(65, 64).unwrap(), &ExtractConfig::default()).is_err());
        let small = gradient_image(32, 32);
        assert!(extract_patches(&small, &RoiMask::full(32, 32).unwrap(), &ExtractConfig::default()).is_err());
        let tiny = RoiMask::from_fn(64, 64, |r, c| r == 0 && c == 0).unwrap();
        assert!(extract_patches(&img, &tiny, &ExtractConfig::default()).unwrap().is_empty());
        assert!(RoiMask::new(2, 2, vec![false; 4]).is_err());
    }

    #[test]
    fn constant_patch_quantizes_to_one_color() {
        let p = Patch::from_fn(8, |_, _| [10, 20, 30]).unwrap();
        let q = quantize_colors(&p, 32, 0).unwrap();
        assert_eq!(q.palette(), &[[10.0, 20.0, 30.0]]);
        assert!(q.indices().iter().all(|&i| i == 0));
    }

    #[test]
    fn two_colors_are_kept_exactly() {
        let p = Patch::from_fn(4, |r, c| if (r + c) % 2 == 0 { [0, 0, 0] } else { [200, 100, 50] }).unwrap();
        let q = quantize_colors(&p, 2, 3).unwrap();
        assert_eq!(q.palette(), &[[0.0, 0.0, 0.0], [200.0, 100.0, 50.0]]);
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(q.index(r, c), (r + c) % 2);
            }
        }
    }

    /// Minimum SSE over all two-cluster partitions of four points.
    fn brute_force_two_partition_sse(points: &[[f64; 3]]) -> f64 {
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << points.len()) - 1 {
            let mut sse = 0.0;
            for side in [true, false] {
                let members: Vec<_> = (0..points.len())
                    .filter(|&i| ((mask >> i) & 1 == 1) == side)
                    .map(|i| points[i])
                    .collect();
                let n = members.len() as f64;
                let mean = [0, 1, 2].map(|ch| members.iter().map(|p| p[ch]).sum::<f64>() / n);
                sse += members.iter().map(|p| dist2(p, &mean)).sum::<f64>();
            }
            best = best.min(sse);
        }
        best
    }

    #[test]
    fn four_pixel_quantization_reaches_exhaustive_optimum() {
        let cases: [[Rgb; 4]; 4] = [
            [[0, 0, 0], [10, 0, 0], [200, 200, 200], [220, 190, 200]],
            [[0, 0, 0], [40, 40, 40], [90, 90, 90], [250, 250, 250]],
            [[5, 100, 5], [5, 110, 5], [5, 120, 5], [200, 10, 10]],
            [[0, 0, 0], [0, 0, 60], [0, 0, 120], [0, 0, 200]],
        ];
        for (n, pixels) in cases.iter().enumerate() {
            for seed in 0..4 {
                let p = Patch::new(2, pixels.to_vec(), (0, 0)).unwrap();
                let q = quantize_colors(&p, 2, seed).unwrap();
                let pts: Vec<_> = pixels.iter().map(|&p| to_f64(p)).collect();
                let sse: f64 = pts
                    .iter()
                    .zip(q.indices())
                    .map(|(p, &i)| dist2(p, &q.palette()[usize::from(i)]))
                    .sum();
                let best = brute_force_two_partition_sse(&pts);
                assert!((sse - best).abs() < 1e-9, "case {n} seed {seed}: {sse} vs {best}");
            }
        }
    }

    #[test]
    fn sse_is_non_increasing_and_deterministic() {
        let p = Patch::from_fn(16, |r, c| [(r * 13 + c * 7) as u8, (r * c) as u8, (r * 31) as u8]).unwrap();
        let a = kmeans_colors(p.pixels(), 8, 42).unwrap();
        for w in a.sse_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs());
        }
        assert!(a.sse_trace.len() <= KMEANS_MAX_ITER);
        let b = kmeans_colors(p.pixels(), 8, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.palette.len(), 8);
    }

    #[test]
    fn palette_mapping_uses_nearest_entry() {
        let p = Patch::from_fn(2, |r, _| if r == 0 { [0, 0, 0] } else { [250, 250, 250] }).unwrap();
        let q = QuantizedPatch::from_palette(&p, &[[255.0, 255.0, 255.0], [1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(q.indices(), &[1, 1, 0, 0]);
    }
}
