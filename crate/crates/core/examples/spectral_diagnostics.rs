//! Spectral decay and density of embeddings whose variance is squeezed into
//! fewer and fewer directions.
//!
//! cargo run --release --example spectral_diagnostics

use dmlkit::embedding::normalize_rows;
use dmlkit::spectral::{density_measures, SpectralReport};
use dmlkit::{rng, EmbeddingMatrix, LabelVector};
use rand_distr::{Distribution, StandardNormal};

fn main() -> dmlkit::Result<()> {
    let (n, d, classes) = (400, 32, 10);
    let mut r = rng::seeded(3);
    let base: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut r)).collect();
    let labels = LabelVector::new((0..n).map(|i| (i % classes) as u32).collect());
    println!("decay  rho     rho_full  pi_intra  pi_inter  pi_ratio");
    for decay in [0.0, 0.05, 0.1, 0.2, 0.4] {
        // Column j is scaled by exp(-decay * j).
        let data: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(k, v)| v * f64::exp(-decay * (k % d) as f64))
            .collect();
        let emb = normalize_rows(&EmbeddingMatrix::new(data, n, d)?)?;
        let s = SpectralReport::compute(&emb, Some(&labels))?;
        let p = density_measures(&emb, &labels)?;
        println!(
            "{decay:<5}  {:.4}  {:.4}    {:.4}    {:.4}    {:.4}",
            s.rho, s.rho_full, p.pi_intra, p.pi_inter, p.pi_ratio
        );
    }
    Ok(())
}
