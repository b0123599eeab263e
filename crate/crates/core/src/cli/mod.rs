//! Command-line driver: toy reproduction, embedding diagnostics, retrieval
//! evaluation and batch sampling on embedding dumps.

pub mod config;
pub mod svg;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::batching::{
    ddm_select, frd_select, greedy_coreset_select, spc_r_sampler, spc_sampler, EmbeddedSamplerConfig, MemoryBank,
    SamplerKind,
};
use crate::dump::EmbeddingDump;
use crate::error::{Error, Result};
use crate::evaluation::MetricReport;
use crate::spectral::{density_measures, SpectralReport};
use crate::toytrain::{train_toy, ToyRun};

pub use config::RunConfig;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "DMLE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dmlkit", version, about = "Deep metric learning diagnostics and toy experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the 2D toy network and write traces, spectra, metrics and plots.
    Toy {
        /// `key = value` run configuration; defaults apply when omitted.
        config: Option<PathBuf>,
        /// Apply role switching with the configured p_switch.
        #[arg(long)]
        regularized: bool,
        /// Comma-separated seeds, overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, default_value = "toy_out")]
        out: PathBuf,
    },
    /// Spectral decay and density of an embedding dump.
    Analyze {
        dump: PathBuf,
        /// Also compute per-class spectra; needs labels.
        #[arg(long)]
        per_class: bool,
        /// Spectrum CSV path; defaults to the dump path with `.spectrum.csv`.
        #[arg(long)]
        spectrum: Option<PathBuf>,
    },
    /// Retrieval and clustering metrics of a labeled dump.
    Eval {
        dump: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8])]
        k: Vec<usize>,
        /// Seed for the k-means initialization.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Select one mini-batch and print its indices.
    Sample {
        dump: PathBuf,
        /// spc2, spc4, spc8, spcr, gc, ddm or frd.
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        b: usize,
        /// Candidate batches scored by ddm and frd.
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reference set size for ddm and frd; defaults to min(1024, n).
        #[arg(long)]
        reference: Option<usize>,
    },
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 2 for unreadable inputs and usage errors, 1 otherwise.
pub fn run<I, T>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command).and_then(|out| Ok(stdout.write_all(out.as_bytes())?)) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Format(_) | Error::Config { .. } => 2,
        _ => 1,
    }
}

/// Applies the thread cap from the environment to the global pool.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // A pool may already exist when called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one command and returns what it prints.
pub fn execute(cmd: &Command) -> Result<String> {
    configure_threads()?;
    match cmd {
        Command::Toy {
            config,
            regularized,
            seeds,
            out,
        } => {
            let cfg = match config {
                Some(p) => RunConfig::parse(&fs::read_to_string(p)?)?,
                None => RunConfig::default(),
            };
            cmd_toy(&cfg, *regularized, seeds.as_deref(), out)
        }
        Command::Analyze {
            dump,
            per_class,
            spectrum,
        } => {
            let csv = spectrum.clone().unwrap_or_else(|| dump.with_extension("spectrum.csv"));
            cmd_analyze(&EmbeddingDump::read(dump)?, *per_class, &csv)
        }
        Command::Eval { dump, k, seed } => cmd_eval(&EmbeddingDump::read(dump)?, k, *seed),
        Command::Sample {
            dump,
            strategy,
            b,
            m,
            seed,
            reference,
        } => cmd_sample(&EmbeddingDump::read(dump)?, strategy, *b, *m, *seed, *reference),
    }
}

/// Writes one `seed_<s>` directory per seed under `out`.
pub fn cmd_toy(cfg: &RunConfig, regularized: bool, seeds: Option<&[u64]>, out: &Path) -> Result<String> {
    let seeds = seeds.unwrap_or(&cfg.seeds);
    let mut summary = String::new();
    for &seed in seeds {
        let mut toy = cfg.toy.clone();
        toy.seed = seed;
        let run = train_toy(&toy, regularized)?;
        let dir = out.join(format!("seed_{seed}"));
        fs::create_dir_all(&dir)?;
        write_toy_run(&run, regularized, &dir)?;
        writeln!(
            summary,
            "seed={seed} regularized={regularized} recall@1={} rho_full={} switched_pairs={}",
            run.metrics.recall_at.get(&1).copied().unwrap_or(f64::NAN),
            run.spectral.rho_full,
            run.switched_pairs
        )
        .unwrap();
    }
    Ok(summary)
}

fn write_toy_run(run: &ToyRun, regularized: bool, dir: &Path) -> Result<()> {
    let mut trace = String::from("iteration,loss,rho_full\n");
    let header: Vec<String> = (0..run.train_embeddings.dim()).map(|j| format!("e{j}")).collect();
    let mut points = format!("iteration,index,label,{}\n", header.join(","));
    for t in &run.trace {
        writeln!(trace, "{},{},{}", t.iteration, t.loss, t.rho).unwrap();
        for (i, row) in t.embeddings.iter_rows().enumerate() {
            let values: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(points, "{},{i},{},{}", t.iteration, run.train.labels.get(i), values.join(",")).unwrap();
        }
    }
    fs::write(dir.join("trace.csv"), trace)?;
    fs::write(dir.join("trace_embeddings.csv"), points)?;
    fs::write(dir.join("spectrum.csv"), run.spectral.spectrum_csv())?;
    let density = density_measures(&run.train_embeddings, &run.train.labels)?;
    let metrics = format!(
        "regularized={regularized}\nswitched_pairs={}\n{}{}{}",
        run.switched_pairs,
        run.metrics.to_key_values(),
        run.spectral.to_key_values(),
        density.to_key_values()
    );
    fs::write(dir.join("metrics.txt"), metrics)?;
    fs::write(
        dir.join("embed_train.svg"),
        svg::scatter(&run.train_embeddings, &run.train.labels, "train embeddings"),
    )?;
    fs::write(
        dir.join("embed_test.svg"),
        svg::scatter(&run.test_embeddings, &run.test.labels, "test embeddings"),
    )?;
    Ok(())
}

pub fn cmd_analyze(dump: &EmbeddingDump, per_class: bool, spectrum_csv: &Path) -> Result<String> {
    let labels = if per_class {
        Some(dump.require_labels("--per-class")?)
    } else {
        None
    };
    let report = SpectralReport::compute(&dump.embeddings, labels)?;
    let mut out = report.to_key_values();
    if let Some(l) = &dump.labels {
        if l.num_classes() >= 2 {
            out.push_str(&density_measures(&dump.embeddings, l)?.to_key_values());
        }
    }
    fs::write(spectrum_csv, report.spectrum_csv())?;
    Ok(out)
}

pub fn cmd_eval(dump: &EmbeddingDump, ks: &[usize], seed: u64) -> Result<String> {
    let labels = dump.require_labels("eval")?;
    let n = dump.embeddings.rows();
    let ks: Vec<usize> = ks.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k >= n) {
        return Err(Error::invalid(format!("k={k} must lie in [1, {}) for {n} samples", n)));
    }
    Ok(MetricReport::compute(&dump.embeddings, labels, &ks, seed)?.to_key_values())
}

pub fn cmd_sample(
    dump: &EmbeddingDump,
    strategy: &str,
    b: usize,
    m: usize,
    seed: u64,
    reference: Option<usize>,
) -> Result<String> {
    let kind = SamplerKind::from_name(strategy).ok_or_else(|| Error::invalid(format!("unknown strategy {strategy:?}")))?;
    let indices = match kind {
        SamplerKind::Spc(n) => spc_sampler(dump.require_labels("spc")?, b, n, seed)?.indices,
        SamplerKind::SpcR => spc_r_sampler(dump.require_labels("spcr")?, b, seed)?.indices,
        SamplerKind::GreedyCoreset => greedy_coreset_select(&dump.embeddings, b, seed)?,
        SamplerKind::Ddm | SamplerKind::Frd => {
            let labels = dump.require_labels(strategy)?.clone();
            let bank = MemoryBank::from_embeddings(&dump.embeddings, labels)?;
            let cfg = EmbeddedSamplerConfig {
                reference_size: reference.unwrap_or(EmbeddedSamplerConfig::default().reference_size.min(bank.len())),
                candidates: m,
                ..EmbeddedSamplerConfig::default()
            };
            if kind == SamplerKind::Ddm {
                ddm_select(&bank, b, &cfg, seed)?.indices
            } else {
                frd_select(&bank, b, &cfg, seed)?.indices
            }
        }
    };
    let mut out = String::new();
    for i in indices {
        writeln!(out, "{i}").unwrap();
    }
    Ok(out)
}
