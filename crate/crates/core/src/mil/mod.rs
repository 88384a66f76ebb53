//! Multiple-instance classifiers.
//!
//! Under the standard MIL assumption a bag is positive iff at least one of
//! its instances is. [`MilClassifier`] wraps the four supported methods:
//!
//! * `mivbgmm`: a VB-GMM is fit on all training instances, each bag is
//!   embedded as the mean responsibility vector of its instances over the
//!   surviving components, and an SVM classifies the embeddings.
//! * `cknn`: citation kNN under the minimal Hausdorff distance.
//! * `misvm`: instance-level mi-SVM.
//! * `MISVM`: bag-level MI-SVM with one witness per positive bag.

pub mod cknn;
pub mod misvm;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bag::{Bag, Dataset, Label};
use crate::binio;
use crate::error::{invalid_arg, invalid_data, Error, Result};
use crate::seed::derive_seed;
use crate::svm::{self, default_gamma_grid, inner_folds, svm_grid, KernelKind, SvmModel, SvmParams};
use crate::vbgmm::{VbgmmConfig, VbgmmModel};

pub use cknn::{cknn_predict, min_hausdorff, CknnModel};
pub use misvm::{BagSvm, InstanceSvm};

/// Bag label implied by instance labels: positive iff any is positive.
pub fn bag_label_from_instances(labels: &[Label]) -> Result<Label> {
    if labels.is_empty() {
        return Err(invalid_data("cannot label an empty bag"));
    }
    Ok(if labels.contains(&Label::Positive) {
        Label::Positive
    } else {
        Label::Negative
    })
}

/// `z = c · Σ_j γ_j` with `c = 1/m`, so that `‖z‖₁ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagEmbedding {
    pub z: Vec<f64>,
    pub normalizer: f64,
}

/// Embeds a bag given its per-instance responsibility rows.
pub fn embed_responsibilities(gammas: &[Vec<f64>]) -> Result<BagEmbedding> {
    let first = gammas.first().ok_or_else(|| invalid_data("cannot embed an empty bag"))?;
    let k = first.len();
    let mut z = vec![0.0; k];
    for g in gammas {
        if g.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: g.len(),
            });
        }
        for (acc, v) in z.iter_mut().zip(g) {
            *acc += v;
        }
    }
    let normalizer = 1.0 / gammas.len() as f64;
    z.iter_mut().for_each(|v| *v *= normalizer);
    Ok(BagEmbedding { z, normalizer })
}

pub fn embed_bag(model: &VbgmmModel, bag: &Bag) -> Result<BagEmbedding> {
    let rows: Vec<&[f64]> = bag.rows().collect();
    if rows.is_empty() {
        return Err(invalid_data(format!("bag {} is empty", bag.bag_id)));
    }
    embed_responsibilities(&model.responsibilities_batch(&rows)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "mivbgmm")]
    MiVbgmm,
    #[serde(rename = "cknn")]
    Cknn,
    /// Instance-level mi-SVM.
    #[serde(rename = "misvm")]
    MiSvm,
    /// Bag-level MI-SVM.
    #[serde(rename = "MISVM")]
    BagMiSvm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::MiVbgmm, Method::Cknn, Method::MiSvm, Method::BagMiSvm];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::MiVbgmm => "mivbgmm",
            Method::Cknn => "cknn",
            Method::MiSvm => "misvm",
            Method::BagMiSvm => "MISVM",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Method::MiVbgmm => 0,
            Method::Cknn => 1,
            Method::MiSvm => 2,
            Method::BagMiSvm => 3,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| invalid_arg(format!("unknown method `{s}` (expected mivbgmm, cknn, misvm or MISVM)")))
    }
}

/// SVM hyperparameter search settings shared by the SVM-based methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSearchConfig {
    pub kernel: KernelKind,
    pub c_grid: Vec<f64>,
    /// `None` uses `2^j / d` for `j ∈ −3..=3`.
    pub gamma_grid: Option<Vec<f64>>,
    pub inner_folds: usize,
    pub tol: f64,
}

impl Default for SvmSearchConfig {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Linear,
            c_grid: svm::DEFAULT_C_GRID.to_vec(),
            gamma_grid: None,
            inner_folds: 3,
            tol: svm::DEFAULT_TOL,
        }
    }
}

impl SvmSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_grid.is_empty() || self.c_grid.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(invalid_arg("C grid must be non-empty and positive"));
        }
        if let Some(g) = &self.gamma_grid {
            if g.is_empty() || g.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(invalid_arg("gamma grid must be non-empty and positive"));
            }
        }
        if self.inner_folds < 2 {
            return Err(invalid_arg("inner folds must be >= 2"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid_arg("SVM tol must be positive"));
        }
        Ok(())
    }

    pub fn grid(&self, dim: usize) -> Vec<SvmParams> {
        let gammas = self.gamma_grid.clone().unwrap_or_else(|| default_gamma_grid(dim));
        svm_grid(self.kernel, &self.c_grid, &gammas)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CknnConfig {
    pub r_grid: Vec<usize>,
    pub c_grid: Vec<usize>,
    /// Label returned when positive and negative votes are equal.
    pub tie: Label,
}

impl Default for CknnConfig {
    fn default() -> Self {
        Self {
            r_grid: vec![1, 3, 5],
            c_grid: vec![0, 3, 5],
            tie: Label::Negative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub method: Method,
    pub svm: SvmSearchConfig,
    pub vbgmm: VbgmmConfig,
    pub cknn: CknnConfig,
    /// Iteration cap for mi-SVM and MI-SVM.
    pub mil_max_iter: usize,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            method: Method::MiVbgmm,
            svm: SvmSearchConfig::default(),
            vbgmm: VbgmmConfig::default(),
            cknn: CknnConfig::default(),
            mil_max_iter: 20,
        }
    }
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        self.svm.validate()?;
        self.vbgmm.validate()?;
        if self.cknn.r_grid.is_empty() || self.cknn.r_grid.contains(&0) {
            return Err(invalid_arg("CKNN R grid must be non-empty with R >= 1"));
        }
        if self.cknn.c_grid.is_empty() {
            return Err(invalid_arg("CKNN C grid must be non-empty"));
        }
        if self.mil_max_iter == 0 {
            return Err(invalid_arg("mil_max_iter must be >= 1"));
        }
        Ok(())
    }
}

/// Predicted label and raw score of one bag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MilClassifier {
    MiVbgmm {
        vbgmm: VbgmmModel,
        svm: SvmModel,
        params: SvmParams,
    },
    Cknn(CknnModel),
    MiSvm(InstanceSvm),
    BagMiSvm(BagSvm),
}

fn labeled(bags: &[&Bag]) -> Result<Vec<Label>> {
    let labels = bags.iter().map(|b| b.require_label()).collect::<Result<Vec<_>>>()?;
    if !(labels.contains(&Label::Positive) && labels.contains(&Label::Negative)) {
        return Err(Error::SingleClass("training bags contain one class".into()));
    }
    Ok(labels)
}

fn bag_folds(bags: &[&Bag], labels: &[Label], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let groups: Vec<&str> = bags.iter().map(|b| b.video_id.as_str()).collect();
    inner_folds(&groups, labels, k, seed)
}

fn bag_accuracy<F: Fn(&Bag) -> Result<Label>>(bags: &[&Bag], idx: &[usize], predict: F) -> Result<f64> {
    let mut hits = 0usize;
    for &i in idx {
        hits += usize::from(predict(bags[i])? == bags[i].require_label()?);
    }
    Ok(hits as f64 / idx.len() as f64)
}

fn pick<'a>(bags: &[&'a Bag], idx: &[usize]) -> Vec<&'a Bag> {
    idx.iter().map(|&i| bags[i]).collect()
}

/// Trains the configured method on labeled bags. Hyperparameters are chosen
/// by inner cross-validation on `train` only.
pub fn train(cfg: &MethodConfig, train: &Dataset, seed: u64) -> Result<MilClassifier> {
    cfg.validate()?;
    let bags: Vec<&Bag> = train.bags().iter().collect();
    let labels = labeled(&bags)?;
    let fold_seed = derive_seed(seed, "inner-folds");
    match cfg.method {
        Method::MiVbgmm => {
            let rows = train.instance_rows();
            let vbgmm = VbgmmModel::fit(&rows, &cfg.vbgmm, None, derive_seed(seed, "vbgmm"))?
                .prune(cfg.vbgmm.prune_threshold);
            let embeddings: Vec<Vec<f64>> = bags
                .iter()
                .map(|b| embed_bag(&vbgmm, b).map(|e| e.z))
                .collect::<Result<_>>()?;
            let erows: Vec<&[f64]> = embeddings.iter().map(Vec::as_slice).collect();
            let groups: Vec<&str> = bags.iter().map(|b| b.video_id.as_str()).collect();
            let grid = cfg.svm.grid(vbgmm.n_surviving());
            let params = svm::select_svm(&erows, &labels, &groups, &grid, cfg.svm.inner_folds, fold_seed, cfg.svm.tol)?.best;
            let svm = svm::train_svm(&erows, &labels, params.c, params.kernel, cfg.svm.tol)?;
            Ok(MilClassifier::MiVbgmm { vbgmm, svm, params })
        }
        Method::Cknn => {
            let model = CknnModel::new(&bags, 1, 0, cfg.cknn.tie)?;
            let grid: Vec<(usize, usize)> = cfg
                .cknn
                .r_grid
                .iter()
                .flat_map(|&r| cfg.cknn.c_grid.iter().map(move |&c| (r, c)))
                .collect();
            let mut grid = grid;
            grid.sort_unstable();
            grid.dedup();
            let folds = bag_folds(&bags, &labels, cfg.svm.inner_folds, fold_seed)?;
            let best = svm::grid_search(&grid, &labels, &folds, |&(r, c), tr, te| {
                let mut hits = 0usize;
                for &q in te {
                    let p = model.vote_subset(tr, q, r, c)?;
                    hits += usize::from(p.label == labels[q]);
                }
                Ok(hits as f64 / te.len() as f64)
            })?
            .best;
            Ok(MilClassifier::Cknn(model.with_params(best.0, best.1)))
        }
        Method::MiSvm => {
            let grid = cfg.svm.grid(train.feature_dim());
            let folds = bag_folds(&bags, &labels, cfg.svm.inner_folds, fold_seed)?;
            let best = svm::grid_search(&grid, &labels, &folds, |p, tr, te| {
                let m = InstanceSvm::train(&pick(&bags, tr), *p, cfg.mil_max_iter, cfg.svm.tol)?;
                bag_accuracy(&bags, te, |b| Ok(m.predict(b)?.label))
            })?
            .best;
            Ok(MilClassifier::MiSvm(InstanceSvm::train(&bags, best, cfg.mil_max_iter, cfg.svm.tol)?))
        }
        Method::BagMiSvm => {
            let grid = cfg.svm.grid(train.feature_dim());
            let folds = bag_folds(&bags, &labels, cfg.svm.inner_folds, fold_seed)?;
            let best = svm::grid_search(&grid, &labels, &folds, |p, tr, te| {
                let m = BagSvm::train(&pick(&bags, tr), *p, cfg.mil_max_iter, cfg.svm.tol)?;
                bag_accuracy(&bags, te, |b| Ok(m.predict(b)?.label))
            })?
            .best;
            Ok(MilClassifier::BagMiSvm(BagSvm::train(&bags, best, cfg.mil_max_iter, cfg.svm.tol)?))
        }
    }
}

impl MilClassifier {
    pub fn method(&self) -> Method {
        match self {
            MilClassifier::MiVbgmm { .. } => Method::MiVbgmm,
            MilClassifier::Cknn(_) => Method::Cknn,
            MilClassifier::MiSvm(_) => Method::MiSvm,
            MilClassifier::BagMiSvm(_) => Method::BagMiSvm,
        }
    }

    pub fn predict(&self, bag: &Bag) -> Result<Prediction> {
        match self {
            MilClassifier::MiVbgmm { vbgmm, svm, .. } => {
                let z = embed_bag(vbgmm, bag)?.z;
                let score = svm.decision(&z)?;
                Ok(Prediction {
                    label: Label::from_score(score),
                    score,
                })
            }
            MilClassifier::Cknn(m) => m.predict(bag),
            MilClassifier::MiSvm(m) => m.predict(bag),
            MilClassifier::BagMiSvm(m) => m.predict(bag),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_header(w, MAGIC, VERSION)?;
        binio::write_u8(w, self.method().tag())?;
        match self {
            MilClassifier::MiVbgmm { vbgmm, svm, .. } => {
                vbgmm.write_to(w)?;
                svm.write_to(w)
            }
            MilClassifier::Cknn(m) => m.write_to(w),
            MilClassifier::MiSvm(m) => m.write_to(w),
            MilClassifier::BagMiSvm(m) => m.write_to(w),
        }
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, MAGIC, VERSION)?;
        match binio::read_u8(r)? {
            0 => {
                let vbgmm = VbgmmModel::read_from(r)?;
                let svm = SvmModel::read_from(r)?;
                let params = SvmParams {
                    c: svm.c,
                    kernel: svm.kernel,
                };
                Ok(MilClassifier::MiVbgmm { vbgmm, svm, params })
            }
            1 => Ok(MilClassifier::Cknn(CknnModel::read_from(r)?)),
            2 => Ok(MilClassifier::MiSvm(InstanceSvm::read_from(r)?)),
            3 => Ok(MilClassifier::BagMiSvm(BagSvm::read_from(r)?)),
            t => Err(Error::Format(format!("unknown classifier tag {t}"))),
        }
    }

    /// Serialized bytes; equal bytes mean equal fitted state.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }
}

const MAGIC: &[u8; 8] = b"VMMILCLF";
const VERSION: u32 = 1;
