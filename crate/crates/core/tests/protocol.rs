use std::collections::BTreeSet;

use proptest::prelude::*;
use vascmil::bag::{fold_view, split_by_video};
use vascmil::eval::{build_report, cv_split, fit_fold, run_cv, EvalConfig, Task};
use vascmil::manifest::{load_dataset, save_dataset};
use vascmil::mil::Method;
use vascmil::synth::{generate_synthetic, SyntheticSpec};
use vascmil::{Bag, Dataset, Label};

fn synthetic(seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec { seed, ..SyntheticSpec::default() }).unwrap().dataset
}

fn cfg(method: Method) -> EvalConfig {
    let mut c = EvalConfig::default();
    c.method.method = method;
    c
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(-0.0),
        Just(f64::MIN_POSITIVE / 4.0),
    ]
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..5, 1usize..6).prop_flat_map(|(dim, n_bags)| {
        prop::collection::vec(
            (
                prop::collection::vec(prop::collection::vec(finite(), dim), 1..5),
                prop::option::of(prop_oneof![Just(Label::Negative), Just(Label::Positive)]),
                0usize..3,
            ),
            n_bags,
        )
        .prop_map(|bags| {
            Dataset::new(
                bags.into_iter()
                    .enumerate()
                    .map(|(i, (rows, label, v))| Bag::from_rows(format!("bag-{i}"), format!("video {v}"), rows, label))
                    .collect(),
            )
            .unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn manifest_round_trip_is_bit_exact(ds in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&ds, dir.path(), "set").unwrap();
        let back = load_dataset(&manifest).unwrap();
        prop_assert_eq!(back.len(), ds.len());
        for (a, b) in ds.bags().iter().zip(back.bags()) {
            prop_assert_eq!(&a.bag_id, &b.bag_id);
            prop_assert_eq!(&a.video_id, &b.video_id);
            prop_assert_eq!(a.label, b.label);
            let bits = |bag: &Bag| bag.rows().flat_map(|r| r.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
    }
}

#[test]
fn folds_never_share_a_video() {
    let ds = synthetic(0);
    for seed in 0..20 {
        let split = split_by_video(&ds, 5, seed).unwrap();
        let mut covered = 0;
        for f in 0..5 {
            let (train, test) = fold_view(&ds, &split, f).unwrap();
            let tv: BTreeSet<String> = train.video_ids().into_iter().collect();
            let sv: BTreeSet<String> = test.video_ids().into_iter().collect();
            assert!(tv.is_disjoint(&sv), "seed {seed} fold {f}");
            assert_eq!(train.len() + test.len(), ds.len());
            covered += test.len();
        }
        assert_eq!(covered, ds.len());
    }
}

#[test]
fn every_fold_keeps_enough_variance() {
    let ds = synthetic(1);
    let cv = run_cv(&ds, &cfg(Method::Cknn), 3).unwrap();
    for f in &cv.folds {
        assert!(f.variance_kept >= 0.95, "fold {} kept {}", f.fold, f.variance_kept);
        assert!(f.pca_dims >= 1 && f.pca_dims <= ds.feature_dim());
    }
}

#[test]
fn test_instances_never_reach_the_fit() {
    let ds = synthetic(0);
    for method in Method::ALL {
        let c = cfg(method);
        let split = cv_split(&ds, &c, 42).unwrap();
        let (train, test) = fold_view(&ds, &split, 0).unwrap();
        let before = fit_fold(&train, &c, 5).unwrap().to_bytes().unwrap();
        let victims: BTreeSet<String> = test.bags().iter().map(|b| b.bag_id.clone()).collect();
        let perturbed = Dataset::new(
            ds.bags()
                .iter()
                .map(|b| {
                    let mut b = b.clone();
                    if victims.contains(&b.bag_id) {
                        for inst in &mut b.instances {
                            inst.values.iter_mut().for_each(|v| *v = *v * 3.0 + 1000.0);
                        }
                    }
                    b
                })
                .collect(),
        )
        .unwrap();
        let (train2, test2) = fold_view(&perturbed, &split, 0).unwrap();
        assert_ne!(test, test2);
        let after = fit_fold(&train2, &c, 5).unwrap().to_bytes().unwrap();
        assert_eq!(before, after, "{method} fit depends on test instances");
    }
}

#[test]
fn report_is_reproducible() {
    let ds = synthetic(3);
    let c = cfg(Method::Cknn);
    let render = || {
        let cv = run_cv(&ds, &c, 11).unwrap();
        let r = build_report(&ds, &cv, Task::Both, "cknn", "digest", 11).unwrap();
        serde_json::to_vec_pretty(&r).unwrap()
    };
    assert_eq!(render(), render());
}
