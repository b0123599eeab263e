//! Mines triplets with each miner on one batch and reports the mean
//! anchor-negative distance, then applies tuple switching.
//!
//! cargo run --example tuple_mining -- [p_switch]

use dmlkit::embedding::{normalize_rows, pairwise_distances};
use dmlkit::mining::{
    distance_weighted_miner, random_miner, rho_regularize_tuples, semihard_miner, softhard_miner, DistanceWeighting,
    Tuple, TupleSet,
};
use dmlkit::{rng, EmbeddingMatrix, LabelVector};
use rand_distr::{Distribution, StandardNormal};

fn main() -> dmlkit::Result<()> {
    let p_switch: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.2);
    let (n, d) = (32, 16);
    let mut r = rng::seeded(1);
    let data: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut r)).collect();
    let batch = normalize_rows(&EmbeddingMatrix::new(data, n, d)?)?;
    let labels = LabelVector::new((0..n as u32).map(|i| i % 8).collect());
    let dist = pairwise_distances(&batch);

    let mean_neg = |set: &TupleSet| {
        let ds: Vec<f64> = set
            .tuples
            .iter()
            .filter_map(|t| match *t {
                Tuple::Triplet { anchor, negative, .. } => Some(dist.get(anchor, negative)),
                _ => None,
            })
            .collect();
        ds.iter().sum::<f64>() / ds.len() as f64
    };
    let sets = [
        ("random", random_miner(&labels, 0)?),
        ("semihard", semihard_miner(&batch, &labels, 0)?),
        ("softhard", softhard_miner(&batch, &labels, 0)?),
        ("distance", distance_weighted_miner(&batch, &labels, 0, DistanceWeighting::default())?),
    ];
    for (name, set) in &sets {
        println!("{name:<9} {:>3} triplets, mean d(a, n) = {:.4}", set.len(), mean_neg(set));
    }
    let switched = rho_regularize_tuples(&sets[0].1, &labels, p_switch, 7)?;
    let k = switched.provenance.switched.iter().filter(|&&s| s).count();
    println!("switching with p = {p_switch}: {k} of {} tuples", switched.len());
    Ok(())
}
