//! Writes a labeled embedding dump, reads it back and analyzes it through
//! the same entry points the command-line tool uses.
//!
//! cargo run --example embedding_dump -- [path]

use std::path::PathBuf;

use dmlkit::cli::{cmd_analyze, cmd_eval, cmd_sample};
use dmlkit::dump::EmbeddingDump;
use dmlkit::embedding::normalize_rows;
use dmlkit::{rng, EmbeddingMatrix, LabelVector};
use rand_distr::{Distribution, StandardNormal};

fn main() -> dmlkit::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("dmlkit_example.dmle"));
    let (n, d) = (64, 8);
    let mut r = rng::seeded(9);
    let data: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut r)).collect();
    let emb = normalize_rows(&EmbeddingMatrix::new(data, n, d)?)?;
    let labels = LabelVector::new((0..n as u32).map(|i| i % 4).collect());
    EmbeddingDump::new(emb, Some(labels))?.write(&path)?;
    println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());

    let dump = EmbeddingDump::read(&path)?;
    print!("{}", cmd_analyze(&dump, true, &path.with_extension("spectrum.csv"))?);
    print!("{}", cmd_eval(&dump, &[1, 4], 0)?);
    let picks = cmd_sample(&dump, "spc4", 8, 8, 0, None)?;
    println!("spc4 batch: {}", picks.lines().collect::<Vec<_>>().join(" "));
    Ok(())
}
