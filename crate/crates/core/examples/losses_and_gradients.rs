//! Evaluates every objective on one random batch and prints the loss value
//! and gradient norm.
//!
//! cargo run --example losses_and_gradients -- [seed]

use dmlkit::embedding::normalize_rows;
use dmlkit::mining::{all_pairs, quadruplets_from_triplets, random_miner};
use dmlkit::objectives::{
    evaluate, mine_mixup_triplets, mix_embeddings, LossInputs, ObjectiveKind, ObjectiveSpec, ProxyBank,
};
use dmlkit::{rng, EmbeddingMatrix, LabelVector};
use rand_distr::{Distribution, StandardNormal};

fn main() -> dmlkit::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let (n, d, classes) = (12, 8, 3);
    let mut r = rng::seeded(seed);
    let data: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut r)).collect();
    let batch = normalize_rows(&EmbeddingMatrix::new(data, n, d)?)?;
    let labels = LabelVector::new((0..n as u32).map(|i| i % classes as u32).collect());

    let pairs = all_pairs(&labels);
    let triplets = random_miner(&labels, seed)?;
    let quads = quadruplets_from_triplets(&triplets, &labels, seed)?;
    let mixes: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, (i + 1) % n, 0.7)).collect();
    let (mixed_batch, mixed) = mix_embeddings(&batch, &labels, &mixes)?;
    let mixup_sets = mine_mixup_triplets(&mixed, seed)?;

    println!("{:<16} {:>10} {:>12} {:>12}", "loss", "value", "|grad x|", "|grad proxy|");
    for kind in ObjectiveKind::ALL {
        let spec = ObjectiveSpec::new(kind);
        let bank = ProxyBank::random(classes, spec.proxies_per_class, d, spec.proxy_lr, seed)?;
        let tuples = match kind {
            ObjectiveKind::Contrastive => Some(&pairs),
            ObjectiveKind::Quadruplet => Some(&quads),
            ObjectiveKind::Triplet | ObjectiveKind::Margin | ObjectiveKind::Snr => Some(&triplets),
            _ => None,
        };
        let inputs = LossInputs {
            tuples,
            proxies: kind.uses_proxies().then_some(&bank),
            beta: None,
            mixed_labels: Some(&mixed),
            mixup_triplets: Some(&mixup_sets),
        };
        let x = if kind == ObjectiveKind::MixupTriplet { &mixed_batch } else { &batch };
        let out = evaluate(&spec, x, &labels, inputs)?;
        let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!(
            "{:<16} {:>10.5} {:>12.5} {:>12}",
            kind.name(),
            out.value,
            norm(&out.grad_embeddings),
            out.grad_proxies.as_deref().map_or("-".into(), |g| format!("{:.5}", norm(g)))
        );
    }
    Ok(())
}
