//! Multiple-instance learning over bags of image patches.
//!
//! The pipeline: patch extraction ([`patch`]), handcrafted features
//! ([`features`]), train-fitted standardization and PCA ([`reduce`]), a
//! variational Bayesian Gaussian mixture over instances ([`vbgmm`]) whose
//! responsibilities embed each bag, and kernel SVM classification
//! ([`svm`]). [`mil`] holds the MIL methods and baselines; [`eval`] runs the
//! by-video cross-validation protocol.

pub mod bag;
mod binio;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod manifest;
pub mod mil;
pub mod patch;
pub mod reduce;
pub mod seed;
pub mod svm;
pub mod synth;
pub mod vbgmm;

pub use bag::{Bag, Dataset, FoldSplit, InstanceVec, Label};
pub use error::{Error, Result};
