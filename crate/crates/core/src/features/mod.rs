//! Handcrafted per-patch features: color ∥ texture ∥ statistical, 637 values.
//!
//! | segment                | offset | length |
//! |------------------------|--------|--------|
//! | `color.mean_rgb`       | 0      | 3      |
//! | `color.histogram`      | 3      | 32     |
//! | `color.correlogram`    | 35     | 128    |
//! | `color.coherence`      | 163    | 64     |
//! | `color.edge_magnitude` | 227    | 16     |
//! | `color.edge_direction` | 243    | 16     |
//! | `texture.hog`          | 259    | 252    |
//! | `texture.tamura`       | 511    | 3      |
//! | `texture.ehd`          | 514    | 80     |
//! | `stat.moments`         | 594    | 2      |
//! | `stat.glcm`            | 596    | 13     |
//! | `stat.glrlm`           | 609    | 11     |
//! | `stat.glszm`           | 620    | 12     |
//! | `stat.ngtdm`           | 632    | 5      |

pub mod color;
pub mod texture;
pub mod volume;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::patch::{quantize_colors, Patch, QuantizedPatch};
use volume::Volume;

pub const STAT_GRAY_LEVELS: usize = 8;
pub const STAT_LEN: usize = 43;
pub const FEATURE_LEN: usize = color::COLOR_LEN + texture::TEXTURE_LEN + STAT_LEN;

/// One named contiguous range of the feature vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub total: usize,
    pub segments: Vec<Segment>,
}

impl FeatureLayout {
    pub fn standard() -> Self {
        let parts: [(&str, usize); 14] = [
            ("color.mean_rgb", color::MEAN_LEN),
            ("color.histogram", color::HISTOGRAM_LEN),
            ("color.correlogram", color::CORRELOGRAM_LEN),
            ("color.coherence", color::COHERENCE_LEN),
            ("color.edge_magnitude", color::EDGE_BINS),
            ("color.edge_direction", color::EDGE_BINS),
            ("texture.hog", texture::HOG_LEN),
            ("texture.tamura", texture::TAMURA_LEN),
            ("texture.ehd", texture::EHD_LEN),
            ("stat.moments", 2),
            ("stat.glcm", 13),
            ("stat.glrlm", 11),
            ("stat.glszm", 12),
            ("stat.ngtdm", 5),
        ];
        let mut offset = 0;
        let segments = parts
            .iter()
            .map(|&(name, len)| {
                let s = Segment {
                    name: name.to_string(),
                    offset,
                    len,
                };
                offset += len;
                s
            })
            .collect();
        Self {
            total: offset,
            segments,
        }
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: FeatureLayout,
}

impl FeatureVector {
    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .segment(name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }
}

/// Skewness and (non-excess) kurtosis of raw channel values; zero when the
/// values have no spread.
pub fn moments(patch: &Patch) -> [f64; 2] {
    let vals: Vec<f64> = patch
        .pixels()
        .iter()
        .flat_map(|p| p.iter().map(|&v| f64::from(v)))
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in &vals {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if m2 <= 1e-12 {
        return [0.0, 0.0];
    }
    [m3 / m2.powf(1.5), m4 / (m2 * m2)]
}

/// Statistical segment from an explicit volume.
pub fn volume_features(vol: &Volume) -> Vec<f64> {
    let mut out = Vec::with_capacity(41);
    out.extend(volume::glcm_features(&volume::glcm(vol), vol.n_levels));
    out.extend(volume::glrlm_features(&volume::glrlm(vol)));
    out.extend(volume::glszm_features(&volume::glszm(vol)));
    out.extend(volume::ngtdm_features(&volume::ngtdm(vol)));
    out
}

/// The 43-long statistical segment of a patch.
pub fn statistical_features(patch: &Patch) -> Result<Vec<f64>> {
    let vol = Volume::from_patch(patch, STAT_GRAY_LEVELS)?;
    let mut out = moments(patch).to_vec();
    out.extend(volume_features(&vol));
    Ok(out)
}

/// All three segments for an already-quantized patch.
pub fn extract_with_quantized(patch: &Patch, q: &QuantizedPatch) -> Result<FeatureVector> {
    let mut values = color::color_features(q, patch);
    values.extend(texture::texture_features(patch)?);
    values.extend(statistical_features(patch)?);
    Ok(FeatureVector {
        values,
        layout: FeatureLayout::standard(),
    })
}

/// Quantizes `patch` to `n_colors` and computes the full feature vector.
pub fn extract_all(patch: &Patch, n_colors: usize, seed: u64) -> Result<FeatureVector> {
    let q = quantize_colors(patch, n_colors, seed)?;
    extract_with_quantized(patch, &q)
}
