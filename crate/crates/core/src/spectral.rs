//! Embedding-space diagnostics: singular value spectra, spectral decay and
//! class density measures.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::embedding::{sq_dist, EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};

/// Floor applied to normalized singular values inside the logarithm.
pub const SPECTRUM_FLOOR: f64 = 1e-12;

/// Singular values of the `n x D` matrix in descending order, padded with
/// zeros to length `D` when `n < D`.
pub fn singular_spectrum(embeddings: &EmbeddingMatrix) -> Result<Vec<f64>> {
    if embeddings.rows() < 2 {
        return Err(Error::invalid("spectrum needs at least 2 rows"));
    }
    let m = DMatrix::from_row_slice(embeddings.rows(), embeddings.dim(), embeddings.as_slice());
    let mut s: Vec<f64> = m.svd(false, false).singular_values.iter().map(|v| v.max(0.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.resize(embeddings.dim(), 0.0);
    Ok(s)
}

/// `KL(U || s / sum(s))` against the uniform distribution over the entries.
fn kl_from_uniform(values: &[f64]) -> Result<f64> {
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("spectrum has no mass to normalize"));
    }
    let u = 1.0 / values.len() as f64;
    Ok(values
        .iter()
        .map(|v| u * (u / (v / total).max(SPECTRUM_FLOOR)).ln())
        .sum::<f64>()
        .max(0.0))
}

/// Spectral decay: drop the largest singular value, normalize the remaining
/// ones to sum 1 and measure their KL divergence from uniform.
pub fn rho(spectrum: &[f64]) -> Result<f64> {
    if spectrum.len() < 2 {
        return Err(Error::invalid("rho needs at least 2 singular values"));
    }
    let mut s = spectrum.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    kl_from_uniform(&s[1..])
}

/// Spectral decay over the whole spectrum, nothing dropped. In two
/// dimensions the dropped variant is identically zero.
pub fn rho_full(spectrum: &[f64]) -> Result<f64> {
    if spectrum.is_empty() {
        return Err(Error::invalid("empty spectrum"));
    }
    kl_from_uniform(spectrum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerClassSpectra {
    pub spectra: BTreeMap<u32, Vec<f64>>,
    /// Entrywise mean of the class spectra, truncated to the shortest.
    pub mean: Vec<f64>,
    /// Classes with a single member.
    pub skipped: Vec<u32>,
}

pub fn per_class_spectra(embeddings: &EmbeddingMatrix, labels: &LabelVector) -> Result<PerClassSpectra> {
    labels.check_len(embeddings.rows())?;
    let members = labels.class_members();
    let skipped: Vec<u32> = members.iter().filter(|(_, m)| m.len() < 2).map(|(&c, _)| c).collect();
    let spectra: BTreeMap<u32, Vec<f64>> = members
        .into_par_iter()
        .filter(|(_, m)| m.len() >= 2)
        .map(|(c, m)| Ok((c, singular_spectrum(&embeddings.select_rows(&m)?)?)))
        .collect::<Result<_>>()?;
    if spectra.is_empty() {
        return Err(Error::invalid("no class has two members"));
    }
    let len = spectra.values().map(Vec::len).min().unwrap_or(0);
    let mean = (0..len)
        .map(|i| spectra.values().map(|s| s[i]).sum::<f64>() / spectra.len() as f64)
        .collect();
    Ok(PerClassSpectra { spectra, mean, skipped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    pub singular_values: Vec<f64>,
    pub rho: f64,
    pub rho_full: f64,
    pub per_class: Option<PerClassSpectra>,
}

impl SpectralReport {
    pub fn compute(embeddings: &EmbeddingMatrix, labels: Option<&LabelVector>) -> Result<Self> {
        let singular_values = singular_spectrum(embeddings)?;
        Ok(Self {
            rho: rho(&singular_values)?,
            rho_full: rho_full(&singular_values)?,
            per_class: labels.map(|l| per_class_spectra(embeddings, l)).transpose()?,
            singular_values,
        })
    }

    /// Singular values scaled to sum 1.
    pub fn normalized_spectrum(&self) -> Vec<f64> {
        let total: f64 = self.singular_values.iter().sum();
        self.singular_values.iter().map(|v| v / total).collect()
    }

    pub fn to_key_values(&self) -> String {
        let mut s = format!("rho={}\nrho_full={}\n", self.rho, self.rho_full);
        if let Some(pc) = &self.per_class {
            writeln!(s, "classes_skipped={}", pc.skipped.len()).unwrap();
        }
        s
    }

    /// `index,singular_value,normalized[,class_mean]` per entry.
    pub fn spectrum_csv(&self) -> String {
        let norm = self.normalized_spectrum();
        let mean = self.per_class.as_ref().map(|p| &p.mean);
        let mut s = String::from("index,singular_value,normalized");
        if mean.is_some() {
            s.push_str(",class_mean");
        }
        s.push('\n');
        for (i, (v, n)) in self.singular_values.iter().zip(&norm).enumerate() {
            write!(s, "{i},{v},{n}").unwrap();
            if let Some(m) = mean {
                match m.get(i) {
                    Some(x) => write!(s, ",{x}").unwrap(),
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityReport {
    pub pi_intra: f64,
    pub pi_inter: f64,
    pub pi_ratio: f64,
    /// Set when `pi_inter` is zero and the ratio is reported as 0.
    pub degenerate: bool,
}

impl DensityReport {
    pub fn to_key_values(&self) -> String {
        format!(
            "pi_intra={}\npi_inter={}\npi_ratio={}\ndegenerate={}\n",
            self.pi_intra, self.pi_inter, self.pi_ratio, self.degenerate
        )
    }
}

/// Mean within-class pair distance, mean distance between class means over
/// class pairs, and their ratio.
pub fn density_measures(embeddings: &EmbeddingMatrix, labels: &LabelVector) -> Result<DensityReport> {
    labels.check_len(embeddings.rows())?;
    labels.require_classes(2)?;
    let members = labels.class_members();
    let (mut intra, mut pairs) = (0.0, 0usize);
    for m in members.values() {
        for (a, &i) in m.iter().enumerate() {
            for &j in &m[a + 1..] {
                intra += sq_dist(embeddings.row(i), embeddings.row(j)).sqrt();
                pairs += 1;
            }
        }
    }
    let means: Vec<Vec<f64>> = members
        .values()
        .map(|m| {
            let mut mu = vec![0.0; embeddings.dim()];
            for &i in m {
                for (s, v) in mu.iter_mut().zip(embeddings.row(i)) {
                    *s += v;
                }
            }
            mu.iter_mut().for_each(|s| *s /= m.len() as f64);
            mu
        })
        .collect();
    let (mut inter, mut class_pairs) = (0.0, 0usize);
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            inter += sq_dist(&means[a], &means[b]).sqrt();
            class_pairs += 1;
        }
    }
    let pi_intra = if pairs > 0 { intra / pairs as f64 } else { 0.0 };
    let pi_inter = inter / class_pairs as f64;
    let degenerate = pi_inter == 0.0;
    Ok(DensityReport {
        pi_intra,
        pi_inter,
        pi_ratio: if degenerate { 0.0 } else { pi_intra / pi_inter },
        degenerate,
    })
}
