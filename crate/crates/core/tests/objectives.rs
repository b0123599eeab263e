mod common;

use dmlkit::mining::{
    all_pairs, random_miner, rho_regularize_tuples, triplets_to_pairs, Tuple, TupleKind, TupleSet,
};
use dmlkit::objectives::{
    arcface_loss, contrastive_loss, evaluate, normalized_softmax_loss, proxynca_loss, softtriple_loss, triplet_loss,
    LossInputs, ObjectiveKind, ObjectiveSpec, ProxyBank,
};
use dmlkit::{EmbeddingMatrix, LabelVector};
use proptest::prelude::*;

fn permute_tuple(t: &Tuple, inv: &[usize]) -> Tuple {
    match *t {
        Tuple::Pair { a, b, positive } => Tuple::Pair {
            a: inv[a],
            b: inv[b],
            positive,
        },
        Tuple::Triplet {
            anchor,
            positive,
            negative,
        } => Tuple::Triplet {
            anchor: inv[anchor],
            positive: inv[positive],
            negative: inv[negative],
        },
        Tuple::Quadruplet {
            anchor,
            positive,
            negative,
            negative2,
        } => Tuple::Quadruplet {
            anchor: inv[anchor],
            positive: inv[positive],
            negative: inv[negative],
            negative2: inv[negative2],
        },
    }
}

fn batch_losses() -> [ObjectiveKind; 6] {
    [
        ObjectiveKind::GeneralizedLifted,
        ObjectiveKind::NPair,
        ObjectiveKind::Angular,
        ObjectiveKind::Histogram,
        ObjectiveKind::MultiSimilarity,
        ObjectiveKind::Contrastive,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Reordering the batch (and re-indexing the tuples) leaves the value
    /// unchanged and permutes the gradient rows.
    #[test]
    fn losses_are_permutation_invariant(seed in 0u64..10_000, which in 0usize..6, rot in 1usize..5) {
        let kind = batch_losses()[which];
        let mut r = common::rng(seed);
        let (batch, labels) = common::random_batch(&mut r, (6, 12), (2, 6), 3);
        let n = batch.rows();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let pb = batch.select_rows(&perm).unwrap();
        let pl = labels.select(&perm);
        let spec = ObjectiveSpec::new(kind);
        let pairs = all_pairs(&labels);
        let ppairs = TupleSet::manual(
            TupleKind::Pairs,
            pairs.tuples.iter().map(|t| permute_tuple(t, &inv)).collect(),
        ).unwrap();
        let needs = kind == ObjectiveKind::Contrastive;
        let a = evaluate(&spec, &batch, &labels, LossInputs { tuples: needs.then_some(&pairs), ..Default::default() }).unwrap();
        let b = evaluate(&spec, &pb, &pl, LossInputs { tuples: needs.then_some(&ppairs), ..Default::default() }).unwrap();
        prop_assert!((a.value - b.value).abs() <= 1e-10 * a.value.abs().max(1.0));
        for (new, &old) in perm.iter().enumerate() {
            for (x, y) in b.grad_row(new).iter().zip(a.grad_row(old)) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    /// Rows outside every tuple receive no gradient.
    #[test]
    fn untouched_rows_have_zero_gradient(seed in 0u64..10_000) {
        let mut r = common::rng(seed);
        let (batch, labels) = common::random_batch(&mut r, (8, 14), (2, 6), 2);
        let triplets = random_miner(&labels, seed).unwrap();
        let kept = TupleSet::manual(TupleKind::Triplets, triplets.tuples[..2].to_vec()).unwrap();
        let used: Vec<usize> = kept.tuples.iter().flat_map(|t| t.indices()).collect();
        let spec = ObjectiveSpec::new(ObjectiveKind::Triplet);
        let out = triplet_loss(&batch, &labels, &kept, &spec).unwrap();
        let pairs = triplets_to_pairs(&kept).unwrap();
        let cout = contrastive_loss(&batch, &labels, &pairs, &ObjectiveSpec::new(ObjectiveKind::Contrastive)).unwrap();
        for i in (0..batch.rows()).filter(|i| !used.contains(i)) {
            prop_assert!(out.grad_row(i).iter().all(|&g| g == 0.0));
            prop_assert!(cout.grad_row(i).iter().all(|&g| g == 0.0));
        }
    }

    /// Losses on the unit sphere ignore the scale of each row.
    #[test]
    fn sphere_losses_ignore_row_scale(seed in 0u64..10_000, scale in 0.1f64..10.0) {
        let mut r = common::rng(seed);
        let (batch, labels) = common::random_batch(&mut r, (6, 12), (2, 6), 2);
        let scaled = batch.map(|v| v * scale).unwrap();
        let pairs = all_pairs(&labels);
        for kind in [ObjectiveKind::Contrastive, ObjectiveKind::Histogram, ObjectiveKind::MultiSimilarity] {
            let spec = ObjectiveSpec::new(kind);
            let inputs = LossInputs { tuples: Some(&pairs), ..Default::default() };
            let a = evaluate(&spec, &batch, &labels, inputs).unwrap().value;
            let b = evaluate(&spec, &scaled, &labels, inputs).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{:?}: {} vs {}", kind, a, b);
        }
    }

    /// Switching twice with probability one restores the tuples.
    #[test]
    fn double_switch_is_identity(seed in 0u64..10_000) {
        let labels = LabelVector::new(vec![0, 0, 1, 1, 2, 2, 0]);
        let t = random_miner(&labels, seed).unwrap();
        let once = rho_regularize_tuples(&t, &labels, 1.0, seed).unwrap();
        let twice = rho_regularize_tuples(&once, &labels, 1.0, seed + 1).unwrap();
        prop_assert_eq!(&twice.tuples, &t.tuples);
        prop_assert!(once.provenance.switched.iter().all(|&s| s));
        prop_assert!(twice.provenance.switched.iter().all(|&s| !s));
    }
}

/// Proxies of classes absent from the batch get no gradient, except through
/// terms that range over every class of the bank.
#[test]
fn absent_class_proxies() {
    let mut r = common::rng(9);
    let batch = common::gaussian(&mut r, 6, 4);
    let labels = LabelVector::new(vec![0, 0, 1, 1, 0, 1]);
    let classes = 4;
    let absent = |g: &[f64], per_class: usize| -> bool { g[2 * per_class * 4..].iter().all(|&v| v == 0.0) };

    let spec = ObjectiveSpec::new(ObjectiveKind::ArcFace);
    let bank = ProxyBank::random(classes, 1, 4, spec.proxy_lr, 1).unwrap();
    let out = arcface_loss(&batch, &labels, &bank, &spec).unwrap();
    assert!(absent(out.grad_proxies.as_ref().unwrap(), 1));

    let spec = ObjectiveSpec::new(ObjectiveKind::NormalizedSoftmax);
    let out = normalized_softmax_loss(&batch, &labels, &bank, &spec).unwrap();
    assert!(absent(out.grad_proxies.as_ref().unwrap(), 1));

    // ProxyNCA normalizes over the whole bank, so absent proxies do move.
    let spec = ObjectiveSpec::new(ObjectiveKind::ProxyNca);
    let out = proxynca_loss(&batch, &labels, &bank, &spec).unwrap();
    assert!(!absent(out.grad_proxies.as_ref().unwrap(), 1));

    // SoftTriple's regularizer spans every class; without it absent
    // proxies are untouched.
    let mut spec = ObjectiveSpec::new(ObjectiveKind::SoftTriple);
    spec.st_tau = 0.0;
    let bank2 = ProxyBank::random(classes, 2, 4, spec.proxy_lr, 2).unwrap();
    let out = softtriple_loss(&batch, &labels, &bank2, &spec).unwrap();
    assert!(absent(out.grad_proxies.as_ref().unwrap(), 2));
}

#[test]
fn empty_tuple_sets_give_zero_loss() {
    let batch = EmbeddingMatrix::new(vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8], 3, 2).unwrap();
    let labels = LabelVector::new(vec![0, 0, 0]);
    let empty = random_miner(&labels, 0).unwrap();
    assert!(empty.is_empty());
    for kind in [ObjectiveKind::Triplet, ObjectiveKind::Margin, ObjectiveKind::Snr] {
        let mut spec = ObjectiveSpec::new(kind);
        // The SNR embedding penalty does not depend on tuples.
        spec.snr_lambda = 0.0;
        let out = evaluate(
            &spec,
            &batch,
            &labels,
            LossInputs {
                tuples: Some(&empty),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad_embeddings.iter().all(|&g| g == 0.0));
    }
}

#[test]
fn gradient_cases_cover_proxies_and_boundary() {
    let margin = common::gradient_case(ObjectiveKind::Margin, 3);
    let st = common::gradient_case(ObjectiveKind::SoftTriple, 3);
    assert!(margin.check(1e-5) < 1e-4);
    assert!(st.check(1e-5) < 1e-4);
    let (_, g) = (st.eval)(&st.params);
    assert_eq!(g.len(), st.params.len());
    assert_eq!(st.kind, ObjectiveKind::SoftTriple);
}
