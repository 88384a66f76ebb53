mod common;

use common::{blobs, kkt_violation};
use nalgebra::DMatrix;
use proptest::prelude::*;
use vascmil::svm::{
    gram_matrix, grid_search, solve_dual, solve_dual_bounded, train_svm, train_svm_balanced, KernelSpec,
};
use vascmil::Label;

#[test]
fn kkt_holds_on_random_problems() {
    for seed in 0..20u64 {
        let separable = seed % 2 == 0;
        let (rows, y) = blobs(seed, 30, if separable { 4.0 } else { 0.5 });
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let kernel = if seed % 4 < 2 { KernelSpec::Linear } else { KernelSpec::Rbf { gamma: 0.5 } };
        let gram = gram_matrix(&kernel, &refs);
        let c = if separable { 100.0 } else { 1.0 };
        let sol = solve_dual(&gram, &y, c, 1e-3).unwrap();
        let v = kkt_violation(&gram, &y, &vec![c; y.len()], &sol.alpha, sol.bias);
        assert!(v <= 1e-3, "seed {seed}: KKT violation {v}");
    }
}

#[test]
fn kkt_holds_with_per_sample_bounds() {
    for seed in 0..10u64 {
        let (rows, y) = blobs(100 + seed, 24, 0.8);
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let gram = gram_matrix(&KernelSpec::Linear, &refs);
        let c: Vec<f64> = y.iter().map(|&s| if s > 0.0 { 3.0 } else { 0.5 }).collect();
        let sol = solve_dual_bounded(&gram, &y, &c, 1e-3).unwrap();
        let v = kkt_violation(&gram, &y, &c, &sol.alpha, sol.bias);
        assert!(v <= 1e-3, "seed {seed}: KKT violation {v}");
    }
}

#[test]
fn separable_blobs_have_zero_hinge_loss() {
    let (rows, y) = blobs(7, 40, 5.0);
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let labels: Vec<Label> = y.iter().map(|&s| Label::from_score(s)).collect();
    let m = train_svm(&refs, &labels, 1e3, KernelSpec::Linear, 1e-3).unwrap();
    for (x, s) in refs.iter().zip(&y) {
        let hinge = (1.0 - s * m.decision(x).unwrap()).max(0.0);
        assert!(hinge <= 1e-3, "hinge {hinge}");
    }
}

#[test]
fn balanced_bounds_equalize_class_weight() {
    // Nine negatives and one positive on a line with an overlapping pair.
    let xs = [-4.0, -3.0, -2.0, -1.5, -1.0, -0.5, 0.0, 0.2, 0.4, 0.3];
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let mut labels = vec![Label::Negative; 9];
    labels.push(Label::Positive);
    let plain = train_svm(&refs, &labels, 0.05, KernelSpec::Linear, 1e-3).unwrap();
    let balanced = train_svm_balanced(&refs, &labels, 0.05, KernelSpec::Linear, 1e-3).unwrap();
    assert_eq!(plain.predict(&[0.3]).unwrap(), Label::Negative);
    assert_eq!(balanced.predict(&[0.3]).unwrap(), Label::Positive);
}

#[test]
fn grid_search_prefers_perfect_setting() {
    // Labels alternate; setting 1 predicts them exactly, the others by a
    // fixed label, which scores 50% on every balanced fold.
    let labels: Vec<Label> = (0..8).map(|i| if i % 2 == 0 { Label::Negative } else { Label::Positive }).collect();
    let folds = vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]];
    let grid = [0usize, 1, 2];
    let r = grid_search(&grid, &labels, &folds, |&p, _train, test| {
        let hits = test
            .iter()
            .filter(|&&i| if p == 1 { true } else { labels[i] == Label::Negative })
            .count();
        Ok(hits as f64 / test.len() as f64)
    })
    .unwrap();
    assert_eq!(r.best, 1);
    assert_eq!(r.scores, vec![0.5, 1.0, 0.5]);
}

proptest! {
    #[test]
    fn gram_matrices_are_positive_semidefinite(
        pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 2..12),
        gamma in 0.01f64..5.0,
    ) {
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        for kernel in [KernelSpec::Linear, KernelSpec::Rbf { gamma }] {
            let n = refs.len();
            let g = gram_matrix(&kernel, &refs);
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(g[i * n + j], g[j * n + i]);
                    prop_assert!((g[i * n + j] - kernel.eval(refs[i], refs[j])).abs() < 1e-12);
                }
            }
            let eig = DMatrix::from_row_slice(n, n, &g).symmetric_eigenvalues();
            let scale = eig.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
            prop_assert!(eig.iter().all(|&l| l >= -1e-9 * scale));
        }
    }
}
