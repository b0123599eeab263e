//! Correlates retrieval metrics with spectral decay and density over a set
//! of synthetic embedding runs of varying quality.
//!
//! cargo run --release --example metric_correlation

use dmlkit::embedding::normalize_rows;
use dmlkit::evaluation::{metric_correlation_matrix, MetricReport};
use dmlkit::spectral::{density_measures, SpectralReport};
use dmlkit::{rng, EmbeddingMatrix, LabelVector};
use rand_distr::{Distribution, StandardNormal};

fn main() -> dmlkit::Result<()> {
    let (n, d, classes) = (300, 16, 15);
    let labels = LabelVector::new((0..n).map(|i| (i % classes) as u32).collect());
    let (mut metrics, mut spectral, mut density) = (Vec::new(), Vec::new(), Vec::new());
    for run in 0..8u64 {
        let mut r = rng::seeded(100 + run);
        let sigma = 0.3 + 0.15 * run as f64;
        let decay = 0.02 * run as f64;
        let centers: Vec<f64> = (0..classes * d).map(|_| StandardNormal.sample(&mut r)).collect();
        let data: Vec<f64> = (0..n * d)
            .map(|k| {
                let noise: f64 = StandardNormal.sample(&mut r);
                (centers[(k / d % classes) * d + k % d] + sigma * noise) * f64::exp(-decay * (k % d) as f64)
            })
            .collect();
        let emb = normalize_rows(&EmbeddingMatrix::new(data, n, d)?)?;
        metrics.push(MetricReport::compute(&emb, &labels, &[1, 2], run)?);
        spectral.push(SpectralReport::compute(&emb, None)?);
        density.push(density_measures(&emb, &labels)?);
    }
    let corr = metric_correlation_matrix(&metrics, &spectral, &density)?;
    print!("{}", corr.to_csv());
    Ok(())
}
