//! Mini-batch construction: samples-per-class heuristics, the embedding
//! memory bank and the embedded samplers (greedy coreset, distance
//! distribution matching, Fréchet matching).

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::{index, IndexedRandom};
use rayon::prelude::*;

use crate::embedding::{sq_dist, EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// Samples-per-class with `n` samples for each class.
    Spc(usize),
    SpcR,
    GreedyCoreset,
    Ddm,
    Frd,
}

impl SamplerKind {
    pub fn name(self) -> String {
        match self {
            SamplerKind::Spc(n) => format!("spc{n}"),
            SamplerKind::SpcR => "spcr".into(),
            SamplerKind::GreedyCoreset => "gc".into(),
            SamplerKind::Ddm => "ddm".into(),
            SamplerKind::Frd => "frd".into(),
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "spcr" => SamplerKind::SpcR,
            "gc" | "coreset" => SamplerKind::GreedyCoreset,
            "ddm" => SamplerKind::Ddm,
            "frd" => SamplerKind::Frd,
            _ => SamplerKind::Spc(s.strip_prefix("spc")?.parse().ok()?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch {
    pub indices: Vec<usize>,
    pub sampler: SamplerKind,
}

impl MiniBatch {
    pub fn new(indices: Vec<usize>, sampler: SamplerKind) -> Result<Self> {
        if indices.len() < 2 {
            return Err(Error::invalid("a mini-batch needs at least 2 samples"));
        }
        let unique: BTreeSet<usize> = indices.iter().copied().collect();
        if unique.len() != indices.len() {
            return Err(Error::invalid("mini-batch indices must be unique"));
        }
        Ok(Self { indices, sampler })
    }

    pub fn b(&self) -> usize {
        self.indices.len()
    }
}

/// SPC-n: `b / n` distinct classes drawn uniformly among those with at least
/// `n` samples, then `n` samples of each without replacement.
pub fn spc_sampler(labels: &LabelVector, b: usize, n: usize, seed: u64) -> Result<MiniBatch> {
    if n < 2 || b == 0 || b % n != 0 {
        return Err(Error::invalid(format!(
            "batch size {b} must be a positive multiple of samples per class {n} >= 2"
        )));
    }
    let per_class: Vec<Vec<usize>> = labels
        .class_members()
        .into_values()
        .filter(|m| m.len() >= n)
        .collect();
    let k = b / n;
    if per_class.len() < k {
        return Err(Error::TooFewClasses {
            needed: k,
            found: per_class.len(),
        });
    }
    let mut r = rng::seeded(seed);
    let mut indices = Vec::with_capacity(b);
    for c in index::sample(&mut r, per_class.len(), k) {
        let members = &per_class[c];
        indices.extend(index::sample(&mut r, members.len(), n).into_iter().map(|i| members[i]));
    }
    MiniBatch::new(indices, SamplerKind::Spc(n))
}

const SPC_R_ATTEMPTS: usize = 1000;

/// SPC-R: `b - 1` uniform samples plus a final sample sharing its class with
/// one of them. The `b - 1` draw is repeated if no final sample exists.
pub fn spc_r_sampler(labels: &LabelVector, b: usize, seed: u64) -> Result<MiniBatch> {
    let n = labels.len();
    if b < 2 || b > n {
        return Err(Error::invalid(format!("batch size {b} must lie in [2, {n}]")));
    }
    if !labels.class_members().values().any(|m| m.len() >= 2) {
        return Err(Error::invalid("no class has two samples"));
    }
    let y = labels.as_slice();
    let mut r = rng::seeded(seed);
    for _ in 0..SPC_R_ATTEMPTS {
        let mut indices = index::sample(&mut r, n, b - 1).into_vec();
        let chosen: BTreeSet<usize> = indices.iter().copied().collect();
        let classes: BTreeSet<u32> = indices.iter().map(|&i| y[i]).collect();
        let eligible: Vec<usize> = (0..n)
            .filter(|i| !chosen.contains(i) && classes.contains(&y[*i]))
            .collect();
        if let Some(&last) = eligible.choose(&mut r) {
            indices.push(last);
            return MiniBatch::new(indices, SamplerKind::SpcR);
        }
    }
    Err(Error::invalid(format!(
        "no valid final sample found in {SPC_R_ATTEMPTS} attempts"
    )))
}

/// Last-seen embedding of every dataset sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    entries: Vec<f64>,
    labels: LabelVector,
    filled: Vec<bool>,
    dim: usize,
}

impl MemoryBank {
    pub fn new(labels: LabelVector, dim: usize) -> Result<Self> {
        if dim == 0 || labels.is_empty() {
            return Err(Error::invalid("memory bank needs samples and a positive dimension"));
        }
        Ok(Self {
            entries: vec![0.0; labels.len() * dim],
            filled: vec![false; labels.len()],
            labels,
            dim,
        })
    }

    /// Bank initialized from a warm-up pass over the whole dataset.
    pub fn from_embeddings(embeddings: &EmbeddingMatrix, labels: LabelVector) -> Result<Self> {
        labels.check_len(embeddings.rows())?;
        let mut bank = Self::new(labels, embeddings.dim())?;
        let all: Vec<usize> = (0..embeddings.rows()).collect();
        bank.update(&all, embeddings)?;
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.filled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filled.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &LabelVector {
        &self.labels
    }

    pub fn is_filled(&self, i: usize) -> bool {
        self.filled.get(i).copied().unwrap_or(false)
    }

    pub fn filled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.filled[i]).collect()
    }

    /// Overwrites the rows of `indices` with the unit-normalized `embeddings`.
    pub fn update(&mut self, indices: &[usize], embeddings: &EmbeddingMatrix) -> Result<()> {
        if indices.len() != embeddings.rows() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                found: embeddings.rows(),
            });
        }
        if embeddings.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: embeddings.dim(),
            });
        }
        embeddings.check_unit_rows()?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.len(),
            });
        }
        for (row, &i) in indices.iter().enumerate() {
            self.entries[i * self.dim..(i + 1) * self.dim].copy_from_slice(embeddings.row(row));
            self.filled[i] = true;
        }
        Ok(())
    }

    pub fn read(&self, i: usize) -> Result<&[f64]> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.len() });
        }
        if !self.filled[i] {
            return Err(Error::invalid(format!("memory bank row {i} has not been filled")));
        }
        Ok(&self.entries[i * self.dim..(i + 1) * self.dim])
    }

    /// Rows `indices` as a matrix; every row must be filled.
    pub fn gather(&self, indices: &[usize]) -> Result<EmbeddingMatrix> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.read(i)?);
        }
        EmbeddingMatrix::new(data, indices.len(), self.dim)
    }
}

/// Settings shared by the embedded samplers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddedSamplerConfig {
    /// Size `b*` of the reference set drawn from the bank.
    pub reference_size: usize,
    /// Number `m` of candidate batches scored by DDM and FRD.
    pub candidates: usize,
    /// Distance histogram bins over `[0, 2]`.
    pub bins: usize,
}

impl Default for EmbeddedSamplerConfig {
    fn default() -> Self {
        Self {
            reference_size: 1024,
            candidates: 8,
            bins: 50,
        }
    }
}

/// Greedy k-center selection starting from a seeded uniform pick.
pub fn greedy_coreset_select(candidates: &EmbeddingMatrix, b: usize, seed: u64) -> Result<Vec<usize>> {
    if b == 0 || b > candidates.rows() {
        return Err(Error::invalid(format!(
            "cannot select {b} of {} candidates",
            candidates.rows()
        )));
    }
    let start = index::sample(&mut rng::seeded(seed), candidates.rows(), 1).index(0);
    greedy_coreset_from(candidates, b, start)
}

/// Greedy k-center selection from a fixed first index. Each further pick
/// maximizes the distance to the nearest selected point; ties go to the
/// lowest index.
pub fn greedy_coreset_from(candidates: &EmbeddingMatrix, b: usize, start: usize) -> Result<Vec<usize>> {
    let n = candidates.rows();
    if b == 0 || b > n {
        return Err(Error::invalid(format!("cannot select {b} of {n} candidates")));
    }
    if start >= n {
        return Err(Error::IndexOutOfRange { index: start, len: n });
    }
    let mut selected = vec![start];
    let mut taken = vec![false; n];
    taken[start] = true;
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(candidates.row(i), candidates.row(start)))
        .collect();
    while selected.len() < b {
        let mut best = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            if best.is_none_or(|j: usize| nearest[i] > nearest[j]) {
                best = Some(i);
            }
        }
        let pick = best.expect("b <= n");
        taken[pick] = true;
        selected.push(pick);
        for i in 0..n {
            nearest[i] = nearest[i].min(sq_dist(candidates.row(i), candidates.row(pick)));
        }
    }
    Ok(selected)
}

/// Normalized histogram of all pairwise distances, `bins` uniform bins over
/// `[0, 2]`; distances beyond 2 land in the last bin.
pub fn distance_histogram(points: &EmbeddingMatrix, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let n = points.rows();
    if n < 2 {
        return Err(Error::invalid("distance histogram needs at least 2 points"));
    }
    let mut h = vec![0.0; bins];
    let width = 2.0 / bins as f64;
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(points.row(i), points.row(j)).sqrt();
            h[((d / width) as usize).min(bins - 1)] += 1.0;
        }
    }
    let total = (n * (n - 1) / 2) as f64;
    h.iter_mut().for_each(|v| *v /= total);
    Ok(h)
}

const HIST_MASS_TOLERANCE: f64 = 1e-9;

/// One-dimensional Wasserstein-1 distance between histograms on a shared
/// uniform grid: `sum |CDF1 - CDF2| * bin_width`.
pub fn wasserstein_hist_distance(h1: &[f64], h2: &[f64], bin_width: f64) -> Result<f64> {
    if h1.len() != h2.len() {
        return Err(Error::DimensionMismatch {
            expected: h1.len(),
            found: h2.len(),
        });
    }
    for h in [h1, h2] {
        let mass: f64 = h.iter().sum();
        if h.iter().any(|&v| v < 0.0) || (mass - 1.0).abs() > HIST_MASS_TOLERANCE {
            return Err(Error::invalid(format!(
                "histogram must be non-negative with unit mass, got mass {mass}"
            )));
        }
    }
    let (mut c1, mut c2, mut total) = (0.0, 0.0, 0.0);
    for (a, b) in h1.iter().zip(h2) {
        c1 += a;
        c2 += b;
        total += (c1 - c2).abs();
    }
    Ok(total * bin_width)
}

/// Reference set and candidate batches drawn from the filled bank rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateDraw {
    pub reference: Vec<usize>,
    pub candidates: Vec<Vec<usize>>,
}

pub fn draw_candidates(bank: &MemoryBank, b: usize, cfg: &EmbeddedSamplerConfig, seed: u64) -> Result<CandidateDraw> {
    if b < 2 || cfg.candidates == 0 || cfg.reference_size < 2 {
        return Err(Error::invalid(
            "embedded sampling needs b >= 2, m >= 1 and a reference set of at least 2",
        ));
    }
    let filled = bank.filled_indices();
    let needed = b.max(cfg.reference_size);
    if filled.len() < needed {
        return Err(Error::InsufficientBank {
            filled: filled.len(),
            needed,
        });
    }
    let pick = |stream: u64, k: usize| -> Vec<usize> {
        index::sample(&mut rng::stream(seed, stream), filled.len(), k)
            .into_iter()
            .map(|i| filled[i])
            .collect()
    };
    Ok(CandidateDraw {
        reference: pick(0, cfg.reference_size),
        candidates: (0..cfg.candidates).map(|j| pick(j as u64 + 1, b)).collect(),
    })
}

fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    best
}

/// Wasserstein distance of each candidate's distance histogram to the
/// reference histogram.
pub fn ddm_scores(bank: &MemoryBank, draw: &CandidateDraw, bins: usize) -> Result<Vec<f64>> {
    let reference = distance_histogram(&bank.gather(&draw.reference)?, bins)?;
    let width = 2.0 / bins as f64;
    draw.candidates
        .par_iter()
        .map(|c| {
            let h = distance_histogram(&bank.gather(c)?, bins)?;
            wasserstein_hist_distance(&h, &reference, width)
        })
        .collect()
}

/// Distance distribution matching: the candidate whose pairwise distance
/// histogram is closest to the reference set's.
pub fn ddm_select(bank: &MemoryBank, b: usize, cfg: &EmbeddedSamplerConfig, seed: u64) -> Result<MiniBatch> {
    let draw = draw_candidates(bank, b, cfg, seed)?;
    let scores = ddm_scores(bank, &draw, cfg.bins)?;
    MiniBatch::new(draw.candidates[argmin(&scores)].clone(), SamplerKind::Ddm)
}

const PSD_TOLERANCE: f64 = -1e-9;
const DEGENERATE_RIDGE: f64 = 1e-6;

/// Mean and unbiased covariance of a point set; covariance of fewer points
/// than dimensions gets a small ridge.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn from_points(points: &EmbeddingMatrix) -> Result<Self> {
        let (n, d) = (points.rows(), points.dim());
        if n < 2 {
            return Err(Error::invalid("covariance needs at least 2 points"));
        }
        let x = DMatrix::from_row_slice(n, d, points.as_slice());
        let mean = x.row_mean().transpose();
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        if n < d {
            cov += DMatrix::identity(d, d) * DEGENERATE_RIDGE;
        }
        Ok(Self { mean, cov })
    }
}

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    if let Some(&low) = eig.eigenvalues.iter().find(|&&v| v < PSD_TOLERANCE) {
        return Err(Error::NotPsd { eigenvalue: low });
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

fn check_cov(s: &DMatrix<f64>, d: usize) -> Result<()> {
    if s.nrows() != d || s.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: s.nrows(),
        });
    }
    let scale = s.amax().max(1.0);
    if (s - s.transpose()).amax() > 1e-9 * scale {
        return Err(Error::invalid("covariance must be symmetric"));
    }
    Ok(())
}

/// Fréchet distance `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))`, with the
/// trace of the square root taken from the eigenvalues of `S1^(1/2) S2 S1^(1/2)`.
pub fn frechet_distance(mu1: &DVector<f64>, s1: &DMatrix<f64>, mu2: &DVector<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: mu2.len(),
        });
    }
    check_cov(s1, d)?;
    check_cov(s2, d)?;
    let root1 = psd_sqrt(s1)?;
    psd_sqrt(s2)?;
    let mut inner = &root1 * s2 * &root1;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let value = (mu1 - mu2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

pub fn frd_scores(bank: &MemoryBank, draw: &CandidateDraw) -> Result<Vec<f64>> {
    let r = GaussianStats::from_points(&bank.gather(&draw.reference)?)?;
    draw.candidates
        .par_iter()
        .map(|c| {
            let s = GaussianStats::from_points(&bank.gather(c)?)?;
            frechet_distance(&s.mean, &s.cov, &r.mean, &r.cov)
        })
        .collect()
}

/// Fréchet matching: the candidate whose mean and covariance are closest to
/// the reference set's.
pub fn frd_select(bank: &MemoryBank, b: usize, cfg: &EmbeddedSamplerConfig, seed: u64) -> Result<MiniBatch> {
    let draw = draw_candidates(bank, b, cfg, seed)?;
    let scores = frd_scores(bank, &draw)?;
    MiniBatch::new(draw.candidates[argmin(&scores)].clone(), SamplerKind::Frd)
}

/// Greedy coreset over a reference set drawn from the bank.
pub fn coreset_select(bank: &MemoryBank, b: usize, cfg: &EmbeddedSamplerConfig, seed: u64) -> Result<MiniBatch> {
    let draw = draw_candidates(bank, b, &EmbeddedSamplerConfig { candidates: 1, ..*cfg }, seed)?;
    let reference = bank.gather(&draw.reference)?;
    let picks = greedy_coreset_select(&reference, b, seed)?;
    MiniBatch::new(picks.into_iter().map(|i| draw.reference[i]).collect(), SamplerKind::GreedyCoreset)
}
