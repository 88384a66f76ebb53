use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vascmil::mil::{self, embed_responsibilities, BagSvm, CknnModel, InstanceSvm, Method, MethodConfig, MilClassifier};
use vascmil::svm::{train_svm, KernelSpec, SvmParams};
use vascmil::synth::{generate_synthetic, SyntheticSpec};
use vascmil::{Bag, Dataset, Label};

use Label::{Negative as N, Positive as P};

fn bag(id: &str, rows: &[&[f64]], label: Label) -> Bag {
    Bag::from_rows(id, id, rows.iter().map(|r| r.to_vec()).collect(), Some(label))
}

fn dist(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for x in a {
        for y in b {
            best = best.min(x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt());
        }
    }
    best
}

/// Citation-kNN vote by explicit enumeration. Bag `b` cites the query when,
/// among all other bags and the query, fewer than `c` are strictly closer to
/// `b` than the query.
fn cknn_oracle(train: &[(Vec<Vec<f64>>, Label)], q: &[Vec<f64>], r: usize, c: usize) -> Label {
    let n = train.len();
    let dq: Vec<f64> = train.iter().map(|(b, _)| dist(b, q)).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| dq[a].partial_cmp(&dq[b]).unwrap().then(a.cmp(&b)));
    let mut voters: Vec<usize> = idx[..r.min(n)].to_vec();
    for b in 0..n {
        let closer = (0..n).filter(|&o| o != b && dist(&train[b].0, &train[o].0) < dq[b]).count();
        if closer < c {
            voters.push(b);
        }
    }
    let pos = voters.iter().filter(|&&v| train[v].1 == P).count();
    if 2 * pos > voters.len() {
        P
    } else {
        N
    }
}

fn model(train: &[(Vec<Vec<f64>>, Label)], r: usize, c: usize) -> CknnModel {
    let bags: Vec<Bag> = train
        .iter()
        .enumerate()
        .map(|(i, (rows, l))| Bag::from_rows(format!("b{i}"), "v", rows.clone(), Some(*l)))
        .collect();
    let refs: Vec<&Bag> = bags.iter().collect();
    CknnModel::new(&refs, r, c, N).unwrap()
}

#[test]
fn cknn_citers_flip_the_reference_vote() {
    let layout: Vec<(Vec<Vec<f64>>, Label)> = vec![
        (vec![vec![1.0, 0.0]], P),
        (vec![vec![1.5, 0.0]], P),
        (vec![vec![0.0, -1.2]], N),
        (vec![vec![0.0, 1.2]], N),
        (vec![vec![-5.0, -1.2]], N),
    ];
    let q = Bag::from_rows("q", "v", vec![vec![0.0, 0.0]], None);
    let qrows = vec![vec![0.0, 0.0]];
    assert_eq!(cknn_oracle(&layout, &qrows, 1, 0), P);
    assert_eq!(cknn_oracle(&layout, &qrows, 1, 1), N);
    assert_eq!(model(&layout, 1, 0).predict(&q).unwrap().label, P);
    let p = model(&layout, 1, 1).predict(&q).unwrap();
    assert_eq!(p.label, N);
    assert!((p.score - (1.0 - 2.0) / 3.0).abs() < 1e-12);
}

#[test]
fn cknn_matches_enumeration_on_random_layouts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..60 {
        let n = rng.random_range(1..8);
        let mut layout = Vec::new();
        for i in 0..n {
            let m = rng.random_range(1..4);
            let rows = (0..m).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
            layout.push((rows, if i % 2 == 0 { P } else { N }));
        }
        let qrows: Vec<Vec<f64>> = (0..rng.random_range(1..4)).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
        let q = Bag::from_rows("q", "v", qrows.clone(), None);
        for r in 1..=n {
            for c in 0..=n {
                let got = model(&layout, r, c).predict(&q).unwrap().label;
                assert_eq!(got, cknn_oracle(&layout, &qrows, r, c), "n={n} r={r} c={c}");
            }
        }
    }
}

#[test]
fn cknn_with_one_reference_and_no_citers_is_nearest_neighbor() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let layout: Vec<(Vec<Vec<f64>>, Label)> = (0..6)
            .map(|i| {
                let rows = (0..3).map(|_| vec![rng.random_range(-5.0..5.0)]).collect();
                (rows, if i < 3 { P } else { N })
            })
            .collect();
        let qrows = vec![vec![rng.random_range(-5.0..5.0)]];
        let q = Bag::from_rows("q", "v", qrows.clone(), None);
        let nearest = (0..6)
            .min_by(|&a, &b| dist(&layout[a].0, &qrows).partial_cmp(&dist(&layout[b].0, &qrows)).unwrap())
            .unwrap();
        assert_eq!(model(&layout, 1, 0).predict(&q).unwrap().label, layout[nearest].1);
    }
}

fn params(c: f64) -> SvmParams {
    SvmParams { c, kernel: KernelSpec::Linear }
}

#[test]
fn mi_svm_on_label_consistent_instances_converges_at_once() {
    let bags = [
        bag("p1", &[&[4.0, 0.0], &[5.0, 1.0]], P),
        bag("p2", &[&[4.5, -1.0]], P),
        bag("n1", &[&[-4.0, 0.0], &[-5.0, 0.5]], N),
        bag("n2", &[&[-4.5, -1.0], &[-3.5, 1.0]], N),
    ];
    let refs: Vec<&Bag> = bags.iter().collect();
    let m = InstanceSvm::train(&refs, params(1.0), 20, 1e-3).unwrap();
    assert_eq!(m.iterations, 1);
    assert!(m.converged);
    for b in &bags {
        assert_eq!(m.predict(b).unwrap().label, b.label.unwrap());
    }
}

#[test]
fn mi_svm_forces_the_top_instance_of_a_negative_looking_bag() {
    let bags = [
        bag("p1", &[&[5.0], &[6.0]], P),
        bag("p2", &[&[-1.0], &[-1.1]], P),
        bag("n1", &[&[-1.05], &[-0.95], &[-1.2], &[-2.0]], N),
        bag("n2", &[&[-3.0], &[-0.9], &[-1.5], &[-2.5]], N),
    ];
    let refs: Vec<&Bag> = bags.iter().collect();
    let m = InstanceSvm::train(&refs, params(1.0), 20, 1e-3).unwrap();
    let scores: Vec<f64> = bags[1].rows().map(|x| m.svm.decision(x).unwrap()).collect();
    assert!(scores.iter().all(|&s| s < 0.0), "scores {scores:?}");
    assert_eq!(m.working[1], vec![P, N]);
}

#[test]
fn mi_svm_bag_level_on_singletons_is_a_plain_svm() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bags = Vec::new();
    for i in 0..20 {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        bags.push(bag(&format!("b{i:02}"), &[&[2.0 * s + x, y]], Label::from_score(s)));
    }
    let refs: Vec<&Bag> = bags.iter().collect();
    let m = BagSvm::train(&refs, params(1.0), 20, 1e-3).unwrap();
    let rows: Vec<&[f64]> = bags.iter().map(|b| b.instances[0].values.as_slice()).collect();
    let labels: Vec<Label> = bags.iter().map(|b| b.label.unwrap()).collect();
    let plain = train_svm(&rows, &labels, 1.0, KernelSpec::Linear, 1e-3).unwrap();
    for x in [[0.0, 0.0], [1.0, -2.0], [-3.0, 1.0], [0.5, 0.5]] {
        let (a, b) = (m.svm.decision(&x).unwrap(), plain.decision(&x).unwrap());
        assert!((a - b).abs() < 1e-2, "{a} vs {b}");
    }
    assert!(m.witnesses.iter().zip(&labels).all(|(w, l)| (*l == P) == (*w == Some(0))));
}

#[test]
fn mi_svm_bag_level_witnesses_lie_in_the_concept() {
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let refs: Vec<&Bag> = data.dataset.bags().iter().collect();
    let m = BagSvm::train(&refs, params(1.0), 20, 1e-3).unwrap();
    assert!(m.converged);
    for ((w, flags), b) in m.witnesses.iter().zip(&data.concept).zip(&refs) {
        match b.label.unwrap() {
            P => assert!(flags[w.unwrap()], "bag {} witness outside the concept", b.bag_id),
            N => assert!(w.is_none()),
        }
    }
}

fn small_synthetic(seed: u64) -> Dataset {
    let spec = SyntheticSpec { n_videos: 5, bags_per_video: 4, dim: 4, seed, ..SyntheticSpec::default() };
    generate_synthetic(&spec).unwrap().dataset
}

#[test]
fn mi_vbgmm_fits_a_separable_training_set() {
    let ds = small_synthetic(2);
    let clf = mil::train(&MethodConfig::default(), &ds, 9).unwrap();
    for b in ds.bags() {
        assert_eq!(clf.predict(b).unwrap().label, b.label.unwrap(), "bag {}", b.bag_id);
    }
    let again = mil::train(&MethodConfig::default(), &ds, 9).unwrap();
    assert_eq!(clf.to_bytes().unwrap(), again.to_bytes().unwrap());
}

#[test]
fn mi_vbgmm_separates_one_bag_per_class() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut blob = |cx: f64| -> Vec<Vec<f64>> {
        (0..100).map(|_| vec![cx + rng.sample::<f64, _>(StandardNormal), rng.sample(StandardNormal)]).collect()
    };
    let ds = Dataset::new(vec![
        Bag::from_rows("a", "va", blob(10.0), Some(P)),
        Bag::from_rows("b", "vb", blob(-10.0), Some(N)),
    ])
    .unwrap();
    let clf = mil::train(&MethodConfig::default(), &ds, 0).unwrap();
    let MilClassifier::MiVbgmm { vbgmm, .. } = &clf else { panic!("wrong variant") };
    assert_eq!(vbgmm.n_surviving(), 2);
    for b in ds.bags() {
        assert_eq!(clf.predict(b).unwrap().label, b.label.unwrap());
    }
}

#[test]
fn every_method_round_trips_through_bytes() {
    let ds = small_synthetic(4);
    for method in Method::ALL {
        let cfg = MethodConfig { method, ..MethodConfig::default() };
        let clf = mil::train(&cfg, &ds, 1).unwrap();
        let bytes = clf.to_bytes().unwrap();
        let back = MilClassifier::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        for b in ds.bags() {
            assert_eq!(back.predict(b).unwrap(), clf.predict(b).unwrap());
        }
    }
}

fn gamma_rows(k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.001f64..1.0, k), 1..15).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn embedding_is_a_distribution(g in gamma_rows(4)) {
        let z = embed_responsibilities(&g).unwrap().z;
        prop_assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(z.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn embedding_ignores_order_and_duplication(g in gamma_rows(3), shift in 0usize..15) {
        let z = embed_responsibilities(&g).unwrap().z;
        let mut rotated = g.clone();
        let n = rotated.len();
        rotated.rotate_left(shift % n);
        let twice: Vec<Vec<f64>> = g.iter().chain(&g).cloned().collect();
        for other in [embed_responsibilities(&rotated).unwrap().z, embed_responsibilities(&twice).unwrap().z] {
            for (a, b) in z.iter().zip(&other) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
