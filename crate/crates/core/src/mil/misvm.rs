//! mi-SVM (instance-level) and MI-SVM (bag-level) heuristics.

use std::io::{Read, Write};

use super::{bag_label_from_instances, Prediction};
use crate::bag::{Bag, Label};
use crate::binio;
use crate::error::{invalid_data, Error, Result};
use crate::svm::{train_svm, train_svm_balanced, SvmModel, SvmParams};

fn instance_scores(svm: &SvmModel, bag: &Bag) -> Result<Vec<f64>> {
    if bag.is_empty() {
        return Err(invalid_data(format!("bag {} is empty", bag.bag_id)));
    }
    bag.rows().map(|x| svm.decision(x)).collect()
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

/// Instance-level mi-SVM: working instance labels are re-estimated from the
/// SVM until they stop changing. Each SVM uses class-balanced bounds; with
/// plain bounds, background clusters shared by both classes start out with
/// more positive than negative instances whenever positive bags dominate the
/// training set, and the relabelling then keeps them positive.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSvm {
    pub svm: SvmModel,
    pub params: SvmParams,
    /// Number of SVM trainings performed.
    pub iterations: usize,
    pub converged: bool,
    /// Final working labels, per training bag and instance.
    pub working: Vec<Vec<Label>>,
}

impl InstanceSvm {
    pub fn train(bags: &[&Bag], params: SvmParams, max_iter: usize, tol: f64) -> Result<Self> {
        let bag_labels = bags.iter().map(|b| b.require_label()).collect::<Result<Vec<_>>>()?;
        let rows: Vec<&[f64]> = bags.iter().flat_map(|b| b.rows()).collect();
        let mut working: Vec<Vec<Label>> = bags.iter().zip(&bag_labels).map(|(b, &l)| vec![l; b.len()]).collect();
        let mut iterations = 0;
        loop {
            let flat: Vec<Label> = working.concat();
            let svm = train_svm_balanced(&rows, &flat, params.c, params.kernel, tol)?;
            iterations += 1;
            let mut next = working.clone();
            for ((bag, &label), w) in bags.iter().zip(&bag_labels).zip(next.iter_mut()) {
                if label == Label::Negative {
                    continue;
                }
                let scores = instance_scores(&svm, bag)?;
                for (wl, &s) in w.iter_mut().zip(&scores) {
                    *wl = Label::from_score(s);
                }
                if !w.contains(&Label::Positive) {
                    w[argmax(&scores)] = Label::Positive;
                }
            }
            let stable = next == working;
            if stable || iterations >= max_iter {
                return Ok(Self {
                    svm,
                    params,
                    iterations,
                    converged: stable,
                    working: next,
                });
            }
            working = next;
        }
    }

    /// Bag label by the standard MIL assumption on instance predictions;
    /// the score is the largest instance decision value.
    pub fn predict(&self, bag: &Bag) -> Result<Prediction> {
        let scores = instance_scores(&self.svm, bag)?;
        let labels: Vec<Label> = scores.iter().map(|&s| Label::from_score(s)).collect();
        Ok(Prediction {
            label: bag_label_from_instances(&labels)?,
            score: scores[argmax(&scores)],
        })
    }

    pub(crate) fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_usize(w, self.iterations)?;
        binio::write_u8(w, u8::from(self.converged))?;
        self.svm.write_to(w)
    }

    pub(crate) fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let iterations = binio::read_usize(r)?;
        let converged = binio::read_u8(r)? != 0;
        let svm = SvmModel::read_from(r)?;
        Ok(Self {
            params: SvmParams {
                c: svm.c,
                kernel: svm.kernel,
            },
            svm,
            iterations,
            converged,
            working: Vec::new(),
        })
    }
}

/// Bag-level MI-SVM: each positive bag is represented by one witness, first
/// its instance mean and then its highest-scoring instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BagSvm {
    pub svm: SvmModel,
    pub params: SvmParams,
    pub iterations: usize,
    pub converged: bool,
    /// Selected witness index per training bag; `None` for negative bags.
    pub witnesses: Vec<Option<usize>>,
}

impl BagSvm {
    pub fn train(bags: &[&Bag], params: SvmParams, max_iter: usize, tol: f64) -> Result<Self> {
        let bag_labels = bags.iter().map(|b| b.require_label()).collect::<Result<Vec<_>>>()?;
        if bags.iter().any(|b| b.is_empty()) {
            return Err(invalid_data("MI-SVM training bag is empty"));
        }
        let negatives: Vec<&[f64]> = bags
            .iter()
            .zip(&bag_labels)
            .filter(|(_, &l)| l == Label::Negative)
            .flat_map(|(b, _)| b.rows())
            .collect();
        let positives: Vec<&Bag> = bags
            .iter()
            .zip(&bag_labels)
            .filter(|(_, &l)| l == Label::Positive)
            .map(|(b, _)| *b)
            .collect();
        if negatives.is_empty() || positives.is_empty() {
            return Err(Error::SingleClass("MI-SVM needs positive and negative bags".into()));
        }
        let mut reps: Vec<Vec<f64>> = positives
            .iter()
            .map(|b| {
                let m = b.len() as f64;
                let mut mean = vec![0.0; b.instances[0].dim()];
                for x in b.rows() {
                    for (a, v) in mean.iter_mut().zip(x) {
                        *a += v / m;
                    }
                }
                mean
            })
            .collect();
        let mut selected: Vec<Option<usize>> = vec![None; positives.len()];
        let mut iterations = 0;
        loop {
            let mut rows: Vec<&[f64]> = reps.iter().map(Vec::as_slice).collect();
            rows.extend(&negatives);
            let mut labels = vec![Label::Positive; reps.len()];
            labels.extend(std::iter::repeat_n(Label::Negative, negatives.len()));
            let svm = train_svm(&rows, &labels, params.c, params.kernel, tol)?;
            iterations += 1;
            let next: Vec<Option<usize>> = positives
                .iter()
                .map(|b| instance_scores(&svm, b).map(|s| Some(argmax(&s))))
                .collect::<Result<_>>()?;
            let stable = next == selected;
            if stable || iterations >= max_iter {
                let mut it = next.into_iter();
                let witnesses = bag_labels
                    .iter()
                    .map(|&l| if l == Label::Positive { it.next().flatten() } else { None })
                    .collect();
                return Ok(Self {
                    svm,
                    params,
                    iterations,
                    converged: stable,
                    witnesses,
                });
            }
            for ((rep, b), w) in reps.iter_mut().zip(&positives).zip(&next) {
                *rep = b.instances[w.expect("witness selected")].values.clone();
            }
            selected = next;
        }
    }

    /// Thresholds the largest instance decision value at zero.
    pub fn predict(&self, bag: &Bag) -> Result<Prediction> {
        let scores = instance_scores(&self.svm, bag)?;
        let score = scores[argmax(&scores)];
        Ok(Prediction {
            label: Label::from_score(score),
            score,
        })
    }

    pub(crate) fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_usize(w, self.iterations)?;
        binio::write_u8(w, u8::from(self.converged))?;
        self.svm.write_to(w)
    }

    pub(crate) fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let iterations = binio::read_usize(r)?;
        let converged = binio::read_u8(r)? != 0;
        let svm = SvmModel::read_from(r)?;
        Ok(Self {
            params: SvmParams {
                c: svm.c,
                kernel: svm.kernel,
            },
            svm,
            iterations,
            converged,
            witnesses: Vec::new(),
        })
    }
}
