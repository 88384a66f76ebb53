//! Seeded synthetic MIL datasets with a known generative concept.
//!
//! Cluster `0` is the concept; clusters `1..=n_background` form a background
//! pool. Background centers are drawn uniformly from `[−box, box]^d` with
//! `box = 2 · separation`, rejecting any closer than `separation` to an
//! earlier one. The concept sits at `(box + separation) · e_0`, outside the
//! box, so it is at least `separation` from every background center and
//! linearly separable from them. Background clusters have isotropic spread
//! `sigma`, the concept `concept_sigma`; a tight concept keeps cross-bag
//! concept pairs closer than pairs drawn from a shared background cluster.
//! Every background instance picks its cluster uniformly from the pool. Negative bags draw only
//! background instances; positive bags draw
//! `max(1, round(witness_rate · m))` concept instances and fill the rest from
//! background, in shuffled order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bag::{Bag, Dataset, Label};
use crate::error::{invalid_arg, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_videos: usize,
    pub bags_per_video: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub dim: usize,
    /// Size of the background cluster pool.
    pub n_background: usize,
    /// Minimum distance between any two cluster centers.
    pub separation: f64,
    /// Spread of the background clusters.
    pub sigma: f64,
    /// Spread of the concept cluster.
    pub concept_sigma: f64,
    pub witness_rate: f64,
    /// Fraction of positive bags, spread evenly over bag indices.
    pub positive_fraction: f64,
    /// Probability of flipping each bag label after generation.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_videos: 10,
            bags_per_video: 4,
            min_instances: 8,
            max_instances: 20,
            dim: 10,
            n_background: 3,
            separation: 10.0,
            sigma: 1.0,
            concept_sigma: 0.25,
            witness_rate: 0.3,
            positive_fraction: 0.5,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_videos == 0 || self.bags_per_video == 0 {
            return Err(invalid_arg("synthetic spec needs at least one video and one bag per video"));
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return Err(invalid_arg("instance range must satisfy 1 <= min <= max"));
        }
        if self.dim == 0 {
            return Err(invalid_arg("dim must be >= 1"));
        }
        if self.n_background == 0 {
            return Err(invalid_arg("n_background must be >= 1"));
        }
        if !(self.separation > 0.0 && self.sigma > 0.0 && self.concept_sigma > 0.0) {
            return Err(invalid_arg("separation, sigma and concept_sigma must be positive"));
        }
        if !(self.witness_rate > 0.0 && self.witness_rate <= 1.0) {
            return Err(invalid_arg("witness_rate must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(invalid_arg("positive_fraction must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(invalid_arg("label_noise must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Cluster centers, concept first. Fails when rejection sampling cannot
    /// place them.
    pub fn centers(&self) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "synth-centers"));
        let half = 2.0 * self.separation;
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(self.n_background + 1);
        let mut concept = vec![0.0; self.dim];
        concept[0] = half + self.separation;
        centers.push(concept);
        let mut attempts = 0usize;
        while centers.len() <= self.n_background {
            attempts += 1;
            if attempts > 1000 * (self.n_background + 1) {
                return Err(invalid_arg("cannot place cluster centers at the requested separation"));
            }
            let c: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-half..=half)).collect();
            let far = centers[1..]
                .iter()
                .all(|o| o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= self.separation);
            if far {
                centers.push(c);
            }
        }
        Ok(centers)
    }
}

/// Generated dataset plus the hidden per-instance concept flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// `concept[i][j]` is true when instance `j` of bag `i` was drawn from
    /// the concept cluster.
    pub concept: Vec<Vec<bool>>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let centers = spec.centers()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_bags = spec.n_videos * spec.bags_per_video;
    let mut bags = Vec::with_capacity(n_bags);
    let mut concept = Vec::with_capacity(n_bags);
    let vid_width = spec.n_videos.to_string().len().max(2);
    let bag_width = n_bags.to_string().len().max(3);
    for i in 0..n_bags {
        let p = spec.positive_fraction;
        let positive = ((i + 1) as f64 * p).floor() > (i as f64 * p).floor();
        let m = rng.random_range(spec.min_instances..=spec.max_instances);
        let n_concept = if positive {
            ((spec.witness_rate * m as f64).round() as usize).clamp(1, m)
        } else {
            0
        };
        let mut flags: Vec<bool> = (0..m).map(|j| j < n_concept).collect();
        flags.shuffle(&mut rng);
        let rows: Vec<Vec<f64>> = flags
            .iter()
            .map(|&is_concept| {
                let (cluster, spread) = if is_concept {
                    (0, spec.concept_sigma)
                } else {
                    (rng.random_range(1..=spec.n_background), spec.sigma)
                };
                centers[cluster]
                    .iter()
                    .map(|c| c + spread * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut label = if positive { Label::Positive } else { Label::Negative };
        if spec.label_noise > 0.0 && rng.random::<f64>() < spec.label_noise {
            label = label.flip();
        }
        bags.push(Bag::from_rows(
            format!("b{i:0bag_width$}"),
            format!("v{:0vid_width$}", i % spec.n_videos),
            rows,
            Some(label),
        ));
        concept.push(flags);
    }
    Ok(SyntheticData {
        dataset: Dataset::new(bags)?,
        concept,
    })
}

/// Nearest-center classifier of the generating clusters: a bag is positive
/// iff one of its instances is closest to the concept center.
pub fn oracle_label(centers: &[Vec<f64>], bag: &Bag) -> Label {
    let nearest = |x: &[f64]| {
        (0..centers.len())
            .map(|j| (j, x.iter().zip(&centers[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
            .0
    };
    if bag.rows().any(|x| nearest(x) == 0) {
        Label::Positive
    } else {
        Label::Negative
    }
}
