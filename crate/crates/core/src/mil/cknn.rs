//! Citation kNN with the minimal Hausdorff bag distance.

use std::io::{Read, Write};

use log::warn;
use rayon::prelude::*;

use super::Prediction;
use crate::bag::{Bag, Dataset, Label};
use crate::binio;
use crate::error::{invalid_arg, invalid_data, Error, Result};

fn min_hausdorff_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for x in a {
        for y in b {
            let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            best = best.min(d2);
        }
    }
    best.sqrt()
}

/// Smallest Euclidean distance over all cross-bag instance pairs.
pub fn min_hausdorff(a: &Bag, b: &Bag) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid_data("minimal Hausdorff distance of an empty bag"));
    }
    let (da, db) = (a.instances[0].dim(), b.instances[0].dim());
    if da != db {
        return Err(Error::DimensionMismatch { expected: da, got: db });
    }
    Ok(min_hausdorff_rows(&rows_of(a), &rows_of(b)))
}

fn rows_of(b: &Bag) -> Vec<Vec<f64>> {
    b.rows().map(<[f64]>::to_vec).collect()
}

/// Stored training bags, their pairwise distances and the chosen `(R, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CknnModel {
    pub bags: Vec<Vec<Vec<f64>>>,
    pub labels: Vec<Label>,
    /// Row-major `n × n` minimal Hausdorff distances between training bags.
    pub dist: Vec<f64>,
    pub r: usize,
    pub c: usize,
    pub tie: Label,
}

impl CknnModel {
    pub fn new(train: &[&Bag], r: usize, c: usize, tie: Label) -> Result<Self> {
        if train.is_empty() {
            return Err(invalid_data("CKNN needs at least one training bag"));
        }
        if r == 0 {
            return Err(invalid_arg("CKNN R must be >= 1"));
        }
        let labels = train.iter().map(|b| b.require_label()).collect::<Result<Vec<_>>>()?;
        let bags: Vec<Vec<Vec<f64>>> = train.iter().map(|b| rows_of(b)).collect();
        if bags.iter().any(Vec::is_empty) {
            return Err(invalid_data("CKNN training bag is empty"));
        }
        let n = bags.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { min_hausdorff_rows(&bags[i], &bags[j]) }).collect())
            .collect();
        Ok(Self {
            bags,
            labels,
            dist: rows.concat(),
            r,
            c,
            tie,
        })
    }

    pub fn with_params(mut self, r: usize, c: usize) -> Self {
        self.r = r;
        self.c = c;
        self
    }

    fn n(&self) -> usize {
        self.labels.len()
    }

    /// Vote among the training bags `train` for a query whose distance to
    /// training bag `i` is `qdist(i)`.
    ///
    /// References are the `R` nearest bags (distance ties by index). A bag
    /// `b` cites the query when fewer than `C` other bags of `train` lie
    /// strictly closer to `b` than the query does. Positive and negative
    /// counts are summed over references and citers; the score is
    /// `(p − n) / (p + n)`.
    fn vote<F: Fn(usize) -> f64>(&self, train: &[usize], qdist: F, r: usize, c: usize) -> Result<Prediction> {
        if train.is_empty() {
            return Err(invalid_data("CKNN vote over no training bags"));
        }
        if r == 0 {
            return Err(invalid_arg("CKNN R must be >= 1"));
        }
        let r = if r > train.len() {
            warn!("CKNN R = {r} exceeds {} training bags, clamping", train.len());
            train.len()
        } else {
            r
        };
        let mut order: Vec<usize> = train.to_vec();
        order.sort_by(|&a, &b| qdist(a).total_cmp(&qdist(b)).then(a.cmp(&b)));
        let (mut pos, mut neg) = (0usize, 0usize);
        let mut count = |l: Label| match l {
            Label::Positive => pos += 1,
            Label::Negative => neg += 1,
        };
        for &i in &order[..r] {
            count(self.labels[i]);
        }
        if c > 0 {
            let n = self.n();
            for &b in train {
                let dq = qdist(b);
                let closer = train
                    .iter()
                    .filter(|&&o| o != b && self.dist[b * n + o] < dq)
                    .count();
                if closer < c {
                    count(self.labels[b]);
                }
            }
        }
        let label = match pos.cmp(&neg) {
            std::cmp::Ordering::Greater => Label::Positive,
            std::cmp::Ordering::Less => Label::Negative,
            std::cmp::Ordering::Equal => self.tie,
        };
        Ok(Prediction {
            label,
            score: (pos as f64 - neg as f64) / (pos + neg) as f64,
        })
    }

    /// Classifies training bag `query` using only the bags in `train`.
    pub fn vote_subset(&self, train: &[usize], query: usize, r: usize, c: usize) -> Result<Prediction> {
        let n = self.n();
        self.vote(train, |i| self.dist[query * n + i], r, c)
    }

    pub fn predict(&self, bag: &Bag) -> Result<Prediction> {
        let d = self.bags[0][0].len();
        if bag.is_empty() {
            return Err(invalid_data(format!("bag {} is empty", bag.bag_id)));
        }
        if bag.instances[0].dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bag.instances[0].dim(),
            });
        }
        let q = rows_of(bag);
        let qd: Vec<f64> = self.bags.par_iter().map(|b| min_hausdorff_rows(b, &q)).collect();
        let all: Vec<usize> = (0..self.n()).collect();
        self.vote(&all, |i| qd[i], self.r, self.c)
    }

    pub(crate) fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_usize(w, self.r)?;
        binio::write_usize(w, self.c)?;
        binio::write_u8(w, u8::from(self.tie == Label::Positive))?;
        binio::write_usize(w, self.n())?;
        for (bag, label) in self.bags.iter().zip(&self.labels) {
            binio::write_u8(w, u8::from(*label == Label::Positive))?;
            binio::write_usize(w, bag.len())?;
            for row in bag {
                binio::write_f64s(w, row)?;
            }
        }
        binio::write_f64s(w, &self.dist)
    }

    pub(crate) fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let rr = binio::read_usize(r)?;
        let c = binio::read_usize(r)?;
        let as_label = |v: u8| if v != 0 { Label::Positive } else { Label::Negative };
        let tie = as_label(binio::read_u8(r)?);
        let n = binio::read_usize(r)?;
        let mut bags = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            labels.push(as_label(binio::read_u8(r)?));
            let m = binio::read_usize(r)?;
            let rows = (0..m).map(|_| binio::read_f64s(r)).collect::<Result<Vec<_>>>()?;
            bags.push(rows);
        }
        let dist = binio::read_f64s(r)?;
        if n == 0 || dist.len() != n * n || bags.iter().any(Vec::is_empty) {
            return Err(Error::Format("inconsistent CKNN model".into()));
        }
        Ok(Self {
            bags,
            labels,
            dist,
            r: rr,
            c,
            tie,
        })
    }
}

/// Citation-kNN label of `query` against all bags of `train`, ties negative.
pub fn cknn_predict(train: &Dataset, query: &Bag, r: usize, c: usize) -> Result<Label> {
    let bags: Vec<&Bag> = train.bags().iter().collect();
    Ok(CknnModel::new(&bags, r, c, Label::Negative)?.predict(query)?.label)
}
