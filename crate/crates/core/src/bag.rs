//! Bags, instances and datasets, plus the by-video fold protocol.
//!
//! A [`Bag`] is one labeled set of instance vectors (one ROI image); its
//! `video_id` ties it to the operation it was taken from. Folds are always
//! formed over videos so that no operation contributes to both sides of a
//! train/test split.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_data, Error, Result};

/// Binary bag label. `Positive` is high vascularity (H), `Negative` low (L).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    /// `+1.0` for positive, `-1.0` for negative.
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    /// Label of a real-valued score; a score of exactly zero maps to positive.
    pub fn from_score(score: f64) -> Label {
        if score >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Label::Positive => 'H',
            Label::Negative => 'L',
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "H" | "h" | "+1" | "1" => Ok(Label::Positive),
            "L" | "l" | "-1" => Ok(Label::Negative),
            other => Err(invalid_data(format!("unknown label `{other}`"))),
        }
    }
}

/// Where an instance came from inside its source image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSource {
    pub image_id: String,
    pub row: usize,
    pub col: usize,
}

/// One instance feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceVec {
    pub values: Vec<f64>,
    pub source: Option<PatchSource>,
}

impl InstanceVec {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            source: None,
        }
    }

    pub fn with_source(values: Vec<f64>, source: PatchSource) -> Self {
        Self {
            values,
            source: Some(source),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub bag_id: String,
    pub video_id: String,
    pub instances: Vec<InstanceVec>,
    pub label: Option<Label>,
}

impl Bag {
    pub fn new(
        bag_id: impl Into<String>,
        video_id: impl Into<String>,
        instances: Vec<InstanceVec>,
        label: Option<Label>,
    ) -> Self {
        Self {
            bag_id: bag_id.into(),
            video_id: video_id.into(),
            instances,
            label,
        }
    }

    /// Convenience constructor from raw rows.
    pub fn from_rows(
        bag_id: impl Into<String>,
        video_id: impl Into<String>,
        rows: Vec<Vec<f64>>,
        label: Option<Label>,
    ) -> Self {
        Self::new(
            bag_id,
            video_id,
            rows.into_iter().map(InstanceVec::new).collect(),
            label,
        )
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Label, or an error naming the bag when it is unlabeled.
    pub fn require_label(&self) -> Result<Label> {
        self.label
            .ok_or_else(|| invalid_data(format!("bag `{}` is unlabeled", self.bag_id)))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.instances.iter().map(|i| i.values.as_slice())
    }
}

/// A validated collection of bags sharing one feature dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    bags: Vec<Bag>,
    feature_dim: usize,
}

fn check_id(kind: &str, id: &str) -> Result<()> {
    if id.is_empty() || id.trim() != id || id.contains([',', '\n', '\r']) {
        return Err(invalid_data(format!(
            "{kind} `{id}` must be non-empty, untrimmed-whitespace free and contain no commas or newlines"
        )));
    }
    Ok(())
}

impl Dataset {
    /// Validates and wraps `bags`. Bags must be non-empty, ids unique and every
    /// instance finite with the same dimension.
    pub fn new(bags: Vec<Bag>) -> Result<Self> {
        let first = bags
            .first()
            .ok_or_else(|| invalid_data("dataset must contain at least one bag"))?;
        let feature_dim = first
            .instances
            .first()
            .map(InstanceVec::dim)
            .ok_or_else(|| invalid_data(format!("bag `{}` has no instances", first.bag_id)))?;
        if feature_dim == 0 {
            return Err(invalid_data("feature dimension must be positive"));
        }
        let mut seen = HashSet::with_capacity(bags.len());
        for bag in &bags {
            check_id("bag id", &bag.bag_id)?;
            check_id("video id", &bag.video_id)?;
            if !seen.insert(bag.bag_id.as_str()) {
                return Err(invalid_data(format!("duplicate bag id `{}`", bag.bag_id)));
            }
            if bag.instances.is_empty() {
                return Err(invalid_data(format!("bag `{}` has no instances", bag.bag_id)));
            }
            for inst in &bag.instances {
                if inst.dim() != feature_dim {
                    return Err(Error::DimensionMismatch {
                        expected: feature_dim,
                        got: inst.dim(),
                    });
                }
                if inst.values.iter().any(|v| !v.is_finite()) {
                    return Err(invalid_data(format!(
                        "bag `{}` contains a non-finite value",
                        bag.bag_id
                    )));
                }
            }
        }
        Ok(Self { bags, feature_dim })
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn into_bags(self) -> Vec<Bag> {
        self.bags
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn n_instances(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }

    /// Distinct video ids in lexicographic order.
    pub fn video_ids(&self) -> Vec<String> {
        self.bags
            .iter()
            .map(|b| b.video_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// All instance rows, bag by bag.
    pub fn instance_rows(&self) -> Vec<&[f64]> {
        self.bags.iter().flat_map(|b| b.rows()).collect()
    }

    /// Applies `f` to every instance vector, producing a dataset of the new dimension.
    pub fn map_instances<F>(&self, mut f: F) -> Result<Dataset>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let bags = self
            .bags
            .iter()
            .map(|b| {
                let instances = b
                    .instances
                    .iter()
                    .map(|inst| {
                        Ok(InstanceVec {
                            values: f(&inst.values)?,
                            source: inst.source.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Bag {
                    bag_id: b.bag_id.clone(),
                    video_id: b.video_id.clone(),
                    instances,
                    label: b.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(bags)
    }
}

/// Assignment of every video to exactly one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, video_id: &str) -> Option<usize> {
        self.assignment.get(video_id).copied()
    }

    /// Number of videos per fold.
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Splits the videos of `dataset` into `k` folds; see [`split_by_video_with`].
pub fn split_by_video(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldSplit> {
    split_by_video_with(dataset, k, seed, false)
}

/// Seeded shuffle of the video ids followed by a round-robin deal, so fold
/// sizes differ by at most one video.
///
/// With `stratify`, videos are grouped by their majority bag label (positive
/// on ties or when unlabeled) and each group is shuffled separately before the
/// single round-robin deal continues across groups.
pub fn split_by_video_with(
    dataset: &Dataset,
    k: usize,
    seed: u64,
    stratify: bool,
) -> Result<FoldSplit> {
    if k < 2 {
        return Err(invalid_arg(format!("fold count must be >= 2, got {k}")));
    }
    let videos = dataset.video_ids();
    if videos.len() < k {
        return Err(invalid_data(format!(
            "{} distinct videos cannot fill {k} folds",
            videos.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<String> = if stratify {
        let mut votes: BTreeMap<&str, i64> = BTreeMap::new();
        for bag in dataset.bags() {
            let v = match bag.label {
                Some(Label::Positive) => 1,
                Some(Label::Negative) => -1,
                None => 0,
            };
            *votes.entry(bag.video_id.as_str()).or_default() += v;
        }
        let (mut neg, mut pos): (Vec<String>, Vec<String>) =
            videos.into_iter().partition(|v| votes[v.as_str()] < 0);
        neg.shuffle(&mut rng);
        pos.shuffle(&mut rng);
        neg.into_iter().chain(pos).collect()
    } else {
        let mut v = videos;
        v.shuffle(&mut rng);
        v
    };
    let assignment = order
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i % k))
        .collect();
    Ok(FoldSplit { k, assignment })
}

/// Train/test views for one fold. Bags in each view are ordered by bag id.
pub fn fold_view(dataset: &Dataset, split: &FoldSplit, test_fold: usize) -> Result<(Dataset, Dataset)> {
    if test_fold >= split.k {
        return Err(invalid_arg(format!(
            "test fold {test_fold} out of range for k = {}",
            split.k
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for bag in dataset.bags() {
        let fold = split.fold_of(&bag.video_id).ok_or_else(|| {
            invalid_data(format!("video `{}` missing from fold split", bag.video_id))
        })?;
        if fold == test_fold {
            test.push(bag.clone());
        } else {
            train.push(bag.clone());
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(invalid_data(format!("fold {test_fold} yields an empty train or test view")));
    }
    train.sort_by(|a, b| a.bag_id.cmp(&b.bag_id));
    test.sort_by(|a, b| a.bag_id.cmp(&b.bag_id));
    Ok((Dataset::new(train)?, Dataset::new(test)?))
}

/// `(n_negative, n_positive)`; every bag must be labeled.
pub fn class_counts(dataset: &Dataset) -> Result<(usize, usize)> {
    let mut neg = 0;
    let mut pos = 0;
    for bag in dataset.bags() {
        match bag.require_label()? {
            Label::Negative => neg += 1,
            Label::Positive => pos += 1,
        }
    }
    Ok((neg, pos))
}
