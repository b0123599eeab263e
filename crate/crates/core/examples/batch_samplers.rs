//! Draws one mini-batch with every sampler from a synthetic memory bank and
//! compares class coverage and distance spread.
//!
//! cargo run --release --example batch_samplers

use std::collections::BTreeSet;

use dmlkit::batching::{
    coreset_select, ddm_select, frd_select, spc_r_sampler, spc_sampler, EmbeddedSamplerConfig, MemoryBank,
};
use dmlkit::embedding::{normalize_rows, pairwise_distances};
use dmlkit::{rng, EmbeddingMatrix, LabelVector};
use rand_distr::{Distribution, StandardNormal};

fn main() -> dmlkit::Result<()> {
    let (n, d, classes) = (2048, 32, 64);
    let mut r = rng::seeded(5);
    // Class centers plus noise, so classes are visible in the geometry.
    let centers: Vec<f64> = (0..classes * d).map(|_| StandardNormal.sample(&mut r)).collect();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for j in 0..d {
            let noise: f64 = StandardNormal.sample(&mut r);
            data.push(centers[c * d + j] + 0.8 * noise);
        }
        labels.push(c as u32);
    }
    let emb = normalize_rows(&EmbeddingMatrix::new(data, n, d)?)?;
    let labels = LabelVector::new(labels);
    let bank = MemoryBank::from_embeddings(&emb, labels.clone())?;
    let cfg = EmbeddedSamplerConfig::default();
    let b = 112;

    let batches = [
        ("spc2", spc_sampler(&labels, b, 2, 0)?),
        ("spc4", spc_sampler(&labels, b, 4, 0)?),
        ("spc8", spc_sampler(&labels, b, 8, 0)?),
        ("spcr", spc_r_sampler(&labels, b, 0)?),
        ("gc", coreset_select(&bank, b, &cfg, 0)?),
        ("ddm", ddm_select(&bank, b, &cfg, 0)?),
        ("frd", frd_select(&bank, b, &cfg, 0)?),
    ];
    println!("{:<6} {:>8} {:>10}", "sampler", "classes", "mean dist");
    for (name, batch) in batches {
        let sub = emb.select_rows(&batch.indices)?;
        let dm = pairwise_distances(&sub);
        let mut total = 0.0;
        for i in 0..b {
            for j in i + 1..b {
                total += dm.get(i, j);
            }
        }
        let covered: BTreeSet<u32> = batch.indices.iter().map(|&i| labels.get(i)).collect();
        println!("{name:<6} {:>8} {:>10.4}", covered.len(), total / (b * (b - 1) / 2) as f64);
    }
    Ok(())
}
