mod common;

use std::collections::HashSet;

use hqnn::data::{filter_and_split, load_idx, write_idx, DEFAULT_CLASSES};
use hqnn::Error;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_is_deterministic_disjoint_and_balanced(
        seed in any::<u64>(),
        n_train in 1usize..60,
        n_test in 1usize..40,
    ) {
        let raw = common::synthetic_mnist(30, 1);
        let (tr, te) = filter_and_split(&raw, &DEFAULT_CLASSES, n_train, n_test, seed).unwrap();
        let (tr2, te2) = filter_and_split(&raw, &DEFAULT_CLASSES, n_train, n_test, seed).unwrap();
        prop_assert_eq!(&tr, &tr2);
        prop_assert_eq!(&te, &te2);
        prop_assert_eq!((tr.len(), te.len()), (n_train, n_test));
        let train_ids: HashSet<_> = tr.source.iter().collect();
        prop_assert_eq!(train_ids.len(), tr.len());
        prop_assert!(te.source.iter().all(|i| !train_ids.contains(i)));
        for ds in [&tr, &te] {
            let counts = ds.class_counts(4);
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            for (&l, &s) in ds.labels.iter().zip(&ds.source) {
                prop_assert_eq!(raw.labels[s] as usize, l);
                prop_assert_eq!(&raw.images[s], &ds.images[ds.source.iter().position(|&x| x == s).unwrap()]);
            }
        }
    }

    #[test]
    fn idx_round_trip(pixels in proptest::collection::vec(any::<u8>(), 1..8).prop_flat_map(|row| {
        let side = row.len();
        (Just(side), proptest::collection::vec(any::<u8>(), side * side * 3), proptest::collection::vec(0u8..10, 3))
    })) {
        let (side, bytes, labels) = pixels;
        let images: Vec<Vec<f64>> = bytes.chunks(side * side).map(|c| c.iter().map(|&b| b as f64 / 255.0).collect()).collect();
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&ip, &lp, side, side, &images, &labels).unwrap();
        let back = load_idx(&ip, &lp).unwrap();
        prop_assert_eq!(back.images, images);
        prop_assert_eq!(back.labels, labels);
    }
}

#[test]
fn different_seeds_pick_different_samples() {
    let raw = common::synthetic_mnist(30, 1);
    let (a, _) = filter_and_split(&raw, &DEFAULT_CLASSES, 40, 10, 0).unwrap();
    let (b, _) = filter_and_split(&raw, &DEFAULT_CLASSES, 40, 10, 1).unwrap();
    assert_ne!(a.source, b.source);
}

#[test]
fn too_few_samples_is_a_data_error() {
    let raw = common::synthetic_mnist(5, 1);
    assert!(matches!(filter_and_split(&raw, &DEFAULT_CLASSES, 16, 8, 0), Err(Error::Data(_))));
}

#[test]
fn bundled_subset_loads_when_present() {
    let Some(raw) = common::real_mnist() else {
        eprintln!("data/mnist not found; skipping");
        return;
    };
    assert_eq!((raw.rows, raw.cols), (28, 28));
    assert!(raw.len() >= 1000);
    assert!(raw.images.iter().flatten().all(|&p| (0.0..=1.0).contains(&p)));
    let (tr, te) = filter_and_split(&raw, &DEFAULT_CLASSES, 100, 100, 0).unwrap();
    assert_eq!(tr.class_counts(4), vec![25; 4]);
    assert_eq!(te.class_counts(4), vec![25; 4]);
}
