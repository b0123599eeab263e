//! Scores progressively noisier embeddings of a clustered dataset with all
//! retrieval and clustering metrics.
//!
//! cargo run --release --example retrieval_metrics

use dmlkit::embedding::normalize_rows;
use dmlkit::evaluation::MetricReport;
use dmlkit::{rng, EmbeddingMatrix, LabelVector};
use rand_distr::{Distribution, StandardNormal};

fn main() -> dmlkit::Result<()> {
    let (n, d, classes) = (600, 16, 20);
    let mut r = rng::seeded(2);
    let centers: Vec<f64> = (0..classes * d).map(|_| StandardNormal.sample(&mut r)).collect();
    let noise: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut r)).collect();
    let labels = LabelVector::new((0..n).map(|i| (i % classes) as u32).collect());
    println!("noise  R@1    R@4    NMI    F1     mAP@C  mAP@1000");
    for sigma in [0.1, 0.4, 0.8, 1.6] {
        let data: Vec<f64> = (0..n * d)
            .map(|k| centers[(k / d % classes) * d + k % d] + sigma * noise[k])
            .collect();
        let emb = normalize_rows(&EmbeddingMatrix::new(data, n, d)?)?;
        let m = MetricReport::compute(&emb, &labels, &[1, 4], 0)?;
        println!(
            "{sigma:<5}  {:.3}  {:.3}  {:.3}  {:.3}  {:.3}  {:.3}",
            m.recall_at[&1], m.recall_at[&4], m.nmi, m.f1, m.map_at_c, m.map_at_1000
        );
    }
    Ok(())
}
