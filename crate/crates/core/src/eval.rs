//! By-video cross-validation, metrics and the evaluation report.
//!
//! Every fold fits its standardizer, PCA and classifier on the training
//! bags only. Image-level predictions are aggregated into video-level
//! predictions by majority vote; exact ties go to the label of the record
//! with the largest absolute score.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bag::{class_counts, fold_view, split_by_video_with, Dataset, FoldSplit, Label};
use crate::error::{invalid_arg, invalid_data, Error, Result};
use crate::mil::{self, MethodConfig, MilClassifier};
use crate::reduce::{ReduceConfig, Reducer};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Image,
    Video,
    Both,
}

impl Task {
    pub fn image(self) -> bool {
        matches!(self, Task::Image | Task::Both)
    }

    pub fn video(self) -> bool {
        matches!(self, Task::Video | Task::Both)
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Task::Image),
            "video" => Ok(Task::Video),
            "both" => Ok(Task::Both),
            other => Err(invalid_arg(format!("unknown task `{other}` (expected image, video or both)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub folds: usize,
    /// Deal negative-majority and positive-majority videos separately.
    pub stratify: bool,
    pub reduce: ReduceConfig,
    pub method: MethodConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            stratify: false,
            reduce: ReduceConfig::default(),
            method: MethodConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(invalid_arg("fold count must be >= 2"));
        }
        self.reduce.validate()?;
        self.method.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub bag_id: String,
    pub video_id: String,
    pub truth: Label,
    pub predicted: Label,
    pub score: f64,
    pub fold: usize,
}

/// Everything fitted on one training split.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldState {
    pub reducer: Reducer,
    pub classifier: MilClassifier,
}

impl FoldState {
    /// Serialized reducer followed by the serialized classifier.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.reducer.write_to(&mut buf)?;
        self.classifier.write_to(&mut buf)?;
        Ok(buf)
    }
}

/// Fits the reducer and classifier on `train`.
pub fn fit_fold(train: &Dataset, cfg: &EvalConfig, seed: u64) -> Result<FoldState> {
    let (neg, pos) = class_counts(train)?;
    if neg == 0 || pos == 0 {
        return Err(Error::SingleClass(format!(
            "training split has {neg} negative and {pos} positive bags"
        )));
    }
    let reducer = Reducer::fit_dataset(train, &cfg.reduce)?;
    let reduced = reducer.transform_dataset(train)?;
    let classifier = mil::train(&cfg.method, &reduced, derive_seed(seed, "classifier"))?;
    Ok(FoldState { reducer, classifier })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_bags: usize,
    pub test_bags: usize,
    pub train_instances: usize,
    pub test_videos: Vec<String>,
    pub pca_dims: usize,
    pub variance_kept: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub split: FoldSplit,
    pub folds: Vec<FoldSummary>,
    /// Sorted by fold, then bag id.
    pub records: Vec<PredictionRecord>,
}

/// The fold seed used by [`run_cv`] for fold `fold`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    derive_seed(seed, &format!("fold-{fold}"))
}

/// The video split used by [`run_cv`].
pub fn cv_split(ds: &Dataset, cfg: &EvalConfig, seed: u64) -> Result<FoldSplit> {
    split_by_video_with(ds, cfg.folds, derive_seed(seed, "split"), cfg.stratify)
}

pub fn run_cv(ds: &Dataset, cfg: &EvalConfig, seed: u64) -> Result<CvResult> {
    cfg.validate()?;
    let split = cv_split(ds, cfg, seed)?;
    let outcomes: Vec<(FoldSummary, Vec<PredictionRecord>)> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let (train, test) = fold_view(ds, &split, f)?;
            let state = fit_fold(&train, cfg, fold_seed(seed, f)).map_err(|e| match e {
                Error::SingleClass(msg) => Error::SingleClass(format!("fold {f}: {msg}")),
                other => other,
            })?;
            let reduced = state.reducer.transform_dataset(&test)?;
            let records = reduced
                .bags()
                .iter()
                .map(|b| {
                    let p = state.classifier.predict(b)?;
                    Ok(PredictionRecord {
                        bag_id: b.bag_id.clone(),
                        video_id: b.video_id.clone(),
                        truth: b.require_label()?,
                        predicted: p.label,
                        score: p.score,
                        fold: f,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let summary = FoldSummary {
                fold: f,
                train_bags: train.len(),
                test_bags: test.len(),
                train_instances: train.n_instances(),
                test_videos: test.video_ids(),
                pca_dims: state.reducer.pca.components.len(),
                variance_kept: state.reducer.pca.variance_kept,
            };
            Ok((summary, records))
        })
        .collect::<Result<_>>()?;
    let (folds, records): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    Ok(CvResult {
        split,
        folds,
        records: records.concat(),
    })
}

/// 2×2 counts; rows are truth and columns prediction, both ordered L, H.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

fn idx(l: Label) -> usize {
    match l {
        Label::Negative => 0,
        Label::Positive => 1,
    }
}

impl ConfusionMatrix {
    pub fn from_pairs<I: IntoIterator<Item = (Label, Label)>>(pairs: I) -> Self {
        let mut m = Self::default();
        for (t, p) in pairs {
            m.counts[idx(t)][idx(p)] += 1;
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn tp(&self) -> u64 {
        self.counts[1][1]
    }

    pub fn tn(&self) -> u64 {
        self.counts[0][0]
    }

    pub fn fp(&self) -> u64 {
        self.counts[0][1]
    }

    pub fn fn_(&self) -> u64 {
        self.counts[1][0]
    }

    /// Rows scaled to percentages; an empty row stays zero.
    pub fn normalized(&self) -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for (r, row) in self.counts.iter().enumerate() {
            let s = row[0] + row[1];
            if s > 0 {
                for c in 0..2 {
                    out[r][c] = 100.0 * row[c] as f64 / s as f64;
                }
            }
        }
        out
    }
}

/// Percentages. Undefined ratios are reported as 0 and named in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// F1 from precision and recall in percent; `None` when both are zero.
pub fn f1_score(pre: f64, rec: f64) -> Option<f64> {
    (pre + rec > 0.0).then(|| 2.0 * pre * rec / (pre + rec))
}

impl MetricTable {
    pub fn from_confusion(m: &ConfusionMatrix) -> Self {
        let mut undefined = Vec::new();
        let acc = ratio(m.tp() + m.tn(), m.total(), "acc", &mut undefined);
        let pre = ratio(m.tp(), m.tp() + m.fp(), "pre", &mut undefined);
        let rec = ratio(m.tp(), m.tp() + m.fn_(), "rec", &mut undefined);
        let f1 = if undefined.iter().any(|u| u == "pre" || u == "rec") {
            undefined.push("f1".into());
            0.0
        } else {
            f1_score(pre, rec).unwrap_or_else(|| {
                undefined.push("f1".into());
                0.0
            })
        };
        Self {
            acc,
            pre,
            rec,
            f1,
            undefined,
        }
    }

    /// Field-wise mean; `undefined` lists every field undefined in any table.
    pub fn mean(tables: &[MetricTable]) -> Result<Self> {
        if tables.is_empty() {
            return Err(invalid_data("mean of no metric tables"));
        }
        let n = tables.len() as f64;
        let avg = |f: fn(&MetricTable) -> f64| tables.iter().map(f).sum::<f64>() / n;
        let mut undefined: Vec<String> = tables.iter().flat_map(|t| t.undefined.clone()).collect();
        undefined.sort();
        undefined.dedup();
        Ok(Self {
            acc: avg(|t| t.acc),
            pre: avg(|t| t.pre),
            rec: avg(|t| t.rec),
            f1: avg(|t| t.f1),
            undefined,
        })
    }
}

/// Positive class is H.
pub fn compute_metrics(records: &[PredictionRecord]) -> MetricTable {
    MetricTable::from_confusion(&ConfusionMatrix::from_pairs(records.iter().map(|r| (r.truth, r.predicted))))
}

pub fn aggregate_confusion(records: &[PredictionRecord]) -> ConfusionMatrix {
    ConfusionMatrix::from_pairs(records.iter().map(|r| (r.truth, r.predicted)))
}

/// Majority label of a video's image predictions and the vote margin
/// `|#H − #L|`. On a tie the label of the record with the largest `|score|`
/// wins; if that is tied across labels too, H wins. The result does not
/// depend on record order.
pub fn video_vote(records: &[&PredictionRecord]) -> Result<(Label, u64)> {
    if records.is_empty() {
        return Err(invalid_data("video vote over no records"));
    }
    let pos = records.iter().filter(|r| r.predicted == Label::Positive).count() as u64;
    let neg = records.len() as u64 - pos;
    let label = match pos.cmp(&neg) {
        std::cmp::Ordering::Greater => Label::Positive,
        std::cmp::Ordering::Less => Label::Negative,
        std::cmp::Ordering::Equal => {
            let strongest = |l: Label| {
                records
                    .iter()
                    .filter(|r| r.predicted == l)
                    .map(|r| r.score.abs())
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            if strongest(Label::Negative) > strongest(Label::Positive) {
                Label::Negative
            } else {
                Label::Positive
            }
        }
    };
    Ok((label, pos.abs_diff(neg)))
}

/// Majority of each video's ground-truth bag labels. A tie is an error.
pub fn video_ground_truth(ds: &Dataset) -> Result<BTreeMap<String, Label>> {
    let mut votes: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for b in ds.bags() {
        let e = votes.entry(b.video_id.clone()).or_default();
        match b.require_label()? {
            Label::Negative => e.0 += 1,
            Label::Positive => e.1 += 1,
        }
    }
    votes
        .into_iter()
        .map(|(v, (neg, pos))| match pos.cmp(&neg) {
            std::cmp::Ordering::Greater => Ok((v, Label::Positive)),
            std::cmp::Ordering::Less => Ok((v, Label::Negative)),
            std::cmp::Ordering::Equal => Err(Error::VideoLabelTie(format!(
                "video `{v}` has {pos} H and {neg} L bags"
            ))),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub truth: Label,
    pub predicted: Label,
    pub margin: u64,
    pub fold: usize,
}

/// One record per video present in `records`, sorted by video id.
pub fn video_records(records: &[PredictionRecord], truth: &BTreeMap<String, Label>) -> Result<Vec<VideoRecord>> {
    let mut by_video: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in records {
        by_video.entry(r.video_id.as_str()).or_default().push(r);
    }
    by_video
        .into_iter()
        .map(|(v, recs)| {
            let (predicted, margin) = video_vote(&recs)?;
            let fold = recs[0].fold;
            if recs.iter().any(|r| r.fold != fold) {
                return Err(invalid_data(format!("video `{v}` appears in more than one test fold")));
            }
            let truth = *truth
                .get(v)
                .ok_or_else(|| invalid_data(format!("no ground truth for video `{v}`")))?;
            Ok(VideoRecord {
                video_id: v.to_string(),
                truth,
                predicted,
                margin,
                fold,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub counts: [[u64; 2]; 2],
    pub normalized: [[f64; 2]; 2],
}

impl From<ConfusionMatrix> for ConfusionReport {
    fn from(m: ConfusionMatrix) -> Self {
        Self {
            counts: m.counts,
            normalized: m.normalized(),
        }
    }
}

struct LevelReport {
    pub per_fold: Vec<MetricTable>,
    pub mean: MetricTable,
    pub pooled: MetricTable,
    pub confusion: ConfusionReport,
}

fn level_report(pairs_by_fold: &[Vec<(Label, Label)>]) -> Result<LevelReport> {
    let per_fold: Vec<MetricTable> = pairs_by_fold
        .iter()
        .map(|p| MetricTable::from_confusion(&ConfusionMatrix::from_pairs(p.iter().copied())))
        .collect();
    let pooled_m = ConfusionMatrix::from_pairs(pairs_by_fold.iter().flatten().copied());
    Ok(LevelReport {
        mean: MetricTable::mean(&per_fold)?,
        per_fold,
        pooled: MetricTable::from_confusion(&pooled_m),
        confusion: pooled_m.into(),
    })
}

/// Image-level fields are present for tasks `image` and `both`, video-level
/// fields for `video` and `both`. `mean` and `video_level` are per-fold means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub config_digest: String,
    pub seed: u64,
    pub task: Task,
    pub folds: usize,
    pub n_bags: usize,
    pub n_instances: usize,
    pub n_videos: usize,
    pub fold_details: Vec<FoldSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_fold: Option<Vec<MetricTable>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<MetricTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pooled: Option<MetricTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion_image: Option<ConfusionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub video_level: Option<MetricTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub video_per_fold: Option<Vec<MetricTable>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub video_pooled: Option<MetricTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion_video: Option<ConfusionReport>,
    pub predictions: Vec<PredictionRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub video_predictions: Option<Vec<VideoRecord>>,
}

pub fn build_report(
    ds: &Dataset,
    cv: &CvResult,
    task: Task,
    method: &str,
    config_digest: &str,
    seed: u64,
) -> Result<EvalReport> {
    let k = cv.folds.len();
    let image_level = if task.image() {
        let by_fold: Vec<Vec<(Label, Label)>> = (0..k)
            .map(|f| {
                cv.records
                    .iter()
                    .filter(|r| r.fold == f)
                    .map(|r| (r.truth, r.predicted))
                    .collect()
            })
            .collect();
        Some(level_report(&by_fold)?)
    } else {
        None
    };
    let (video_level, video_predictions) = if task.video() {
        let truth = video_ground_truth(ds)?;
        let vids = video_records(&cv.records, &truth)?;
        let by_fold: Vec<Vec<(Label, Label)>> = (0..k)
            .map(|f| {
                vids.iter()
                    .filter(|v| v.fold == f)
                    .map(|v| (v.truth, v.predicted))
                    .collect()
            })
            .collect();
        (Some(level_report(&by_fold)?), Some(vids))
    } else {
        (None, None)
    };
    let (per_fold, mean, pooled, confusion_image) = match image_level {
        Some(l) => (Some(l.per_fold), Some(l.mean), Some(l.pooled), Some(l.confusion)),
        None => (None, None, None, None),
    };
    let (video_per_fold, video_mean, video_pooled, confusion_video) = match video_level {
        Some(l) => (Some(l.per_fold), Some(l.mean), Some(l.pooled), Some(l.confusion)),
        None => (None, None, None, None),
    };
    Ok(EvalReport {
        method: method.to_string(),
        config_digest: config_digest.to_string(),
        seed,
        task,
        folds: k,
        n_bags: ds.len(),
        n_instances: ds.n_instances(),
        n_videos: ds.video_ids().len(),
        fold_details: cv.folds.clone(),
        per_fold,
        mean,
        pooled,
        confusion_image,
        video_level: video_mean,
        video_per_fold,
        video_pooled,
        confusion_video,
        predictions: cv.records.clone(),
        video_predictions,
    })
}

impl EvalReport {
    /// Plain-text summary table.
    pub fn render_text(&self) -> String {
        let mut s = format!(
            "method {}  seed {}  folds {}  bags {}  instances {}  videos {}\n",
            self.method, self.seed, self.folds, self.n_bags, self.n_instances, self.n_videos
        );
        let mut level = |name: &str, per_fold: &[MetricTable], mean: &MetricTable, pooled: &MetricTable, c: &ConfusionReport| {
            s.push_str(&format!("\n{name}\n{:<10}{:>8}{:>8}{:>8}{:>8}\n", "", "Acc ", "Pre ", "Rec ", "F1 "));
            let mut row = |lab: String, t: &MetricTable| {
                let cell = |name: &str, v: f64| {
                    let mark = if t.undefined.iter().any(|u| u == name) { "*" } else { " " };
                    format!("{:>8}", format!("{v:.1}{mark}"))
                };
                s.push_str(&format!(
                    "{lab:<10}{}{}{}{}\n",
                    cell("acc", t.acc),
                    cell("pre", t.pre),
                    cell("rec", t.rec),
                    cell("f1", t.f1)
                ));
            };
            for (i, t) in per_fold.iter().enumerate() {
                row(format!("fold {i}"), t);
            }
            row("mean".into(), mean);
            row("pooled".into(), pooled);
            let n = c.normalized;
            s.push_str(&format!(
                "confusion (rows truth L/H, %): [{:.1} {:.1}] [{:.1} {:.1}]\n",
                n[0][0], n[0][1], n[1][0], n[1][1]
            ));
        };
        if let (Some(f), Some(m), Some(p), Some(c)) = (&self.per_fold, &self.mean, &self.pooled, &self.confusion_image) {
            level("image level", f, m, p, c);
        }
        if let (Some(f), Some(m), Some(p), Some(c)) =
            (&self.video_per_fold, &self.video_level, &self.video_pooled, &self.confusion_video)
        {
            level("video level", f, m, p, c);
        }
        if s.contains("* ") || s.contains("*\n") {
            s.push_str("\n* undefined ratio (zero denominator) counted as 0\n");
        }
        s
    }
}
