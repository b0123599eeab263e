mod common;

use std::collections::BTreeMap;

use dmlkit::batching::{spc_r_sampler, spc_sampler};
use dmlkit::evaluation::{kmeans_cluster, map_at_c, nmi, ranked_neighbors, recall_at_k};
use dmlkit::spectral::{rho, rho_full, singular_spectrum};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn recall_is_monotone_in_k(seed in 0u64..10_000) {
        let mut r = common::rng(seed);
        let (e, y) = common::random_batch(&mut r, (8, 30), (2, 5), 3);
        let mut last = 0.0;
        for k in 1..e.rows().min(10) {
            let v = recall_at_k(&e, &y, k).unwrap();
            prop_assert!(v >= last && (0.0..=1.0).contains(&v));
            last = v;
        }
    }

    #[test]
    fn metrics_ignore_uniform_scaling(seed in 0u64..10_000, c in 0.01f64..100.0) {
        let mut r = common::rng(seed);
        let (e, y) = common::random_batch(&mut r, (8, 30), (2, 5), 3);
        let s = e.map(|v| v * c).unwrap();
        prop_assert_eq!(ranked_neighbors(&e, 5), ranked_neighbors(&s, 5));
        prop_assert_eq!(map_at_c(&e, &y).unwrap(), map_at_c(&s, &y).unwrap());
    }

    #[test]
    fn rho_is_nonnegative(seed in 0u64..10_000) {
        let mut r = common::rng(seed);
        let e = common::gaussian(&mut r, 4 + (seed as usize % 20), 2 + (seed as usize % 6));
        let s = singular_spectrum(&e).unwrap();
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(rho(&s).unwrap() >= -1e-12);
        prop_assert!(rho_full(&s).unwrap() >= -1e-12);
    }

    #[test]
    fn nmi_is_symmetric_under_relabeling(seed in 0u64..10_000) {
        let mut r = common::rng(seed);
        let (e, y) = common::random_batch(&mut r, (8, 30), (2, 5), 3);
        let a = kmeans_cluster(&e, 3, seed).unwrap().assignments;
        let renamed: Vec<usize> = a.iter().map(|&c| (c + 1) % 3).collect();
        let v = nmi(&a, y.as_slice()).unwrap();
        prop_assert!((v - nmi(&renamed, y.as_slice()).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn spc_batches_have_n_per_class(seed in 0u64..10_000, n in prop::sample::select(vec![2usize, 4])) {
        let labels = dmlkit::LabelVector::new((0..60).map(|i| (i % 10) as u32).collect());
        let batch = spc_sampler(&labels, 4 * n, n, seed).unwrap();
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &i in &batch.indices {
            *counts.entry(labels.get(i)).or_default() += 1;
        }
        prop_assert_eq!(counts.len(), 4);
        prop_assert!(counts.values().all(|&c| c == n));
        let r = spc_r_sampler(&labels, 12, seed).unwrap();
        prop_assert_eq!(r.indices.len(), 12);
    }
}
