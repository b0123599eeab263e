//! Proxy and classification based losses.
//!
//! Embeddings and proxies are projected onto the unit sphere inside the
//! graph. Softmax denominators range over the other classes present in the
//! batch, except for ProxyNCA which uses every class of the bank.

use std::collections::BTreeSet;

use super::{check_labels, differentiate, mean_of, LossOutput, ObjectiveSpec, ProxyBank};
use crate::autodiff::{self, distance, dot, log_sum_exp, Var};
use crate::embedding::{l2_norm, EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};

/// Cosine clamp applied before `acos`.
const COS_CLAMP: f64 = 1.0 - 1e-7;
/// Norm tolerance for banks that must arrive unit-normalized.
const PROXY_NORM_TOLERANCE: f64 = 1e-4;

fn check_bank(batch: &EmbeddingMatrix, labels: &LabelVector, bank: &ProxyBank, per_class: Option<usize>) -> Result<()> {
    check_labels(batch, labels)?;
    if bank.dim() != batch.dim() {
        return Err(Error::DimensionMismatch {
            expected: batch.dim(),
            found: bank.dim(),
        });
    }
    if let Some(k) = per_class {
        if bank.per_class() != k {
            return Err(Error::invalid(format!(
                "expected {k} proxy per class, bank has {}",
                bank.per_class()
            )));
        }
    }
    if let Some(&c) = labels.as_slice().iter().find(|&&c| c as usize >= bank.classes()) {
        return Err(Error::IndexOutOfRange {
            index: c as usize,
            len: bank.classes(),
        });
    }
    Ok(())
}

fn present_classes(labels: &LabelVector) -> Vec<usize> {
    labels
        .as_slice()
        .iter()
        .map(|&c| c as usize)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// `-log(exp(pos) / (exp(pos) + sum exp(neg)))`.
fn softmax_nll<'t>(pos: Var<'t>, neg: Vec<Var<'t>>) -> Var<'t> {
    let mut all = Vec::with_capacity(neg.len() + 1);
    all.push(pos);
    all.extend(neg);
    log_sum_exp(pos.tape(), &all) - pos
}

/// ArcFace: `-log softmax` with logit `s cos(theta_y + m)` for the true class
/// and `s cos(theta_c)` for the other classes in the batch.
pub fn arcface_loss(
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    bank: &ProxyBank,
    spec: &ObjectiveSpec,
) -> Result<LossOutput> {
    check_bank(batch, labels, bank, Some(1))?;
    let y = labels.as_slice();
    let classes = present_classes(labels);
    let (s, m) = (spec.scale, spec.gamma);
    differentiate(batch, Some(bank), None, |g| {
        let u = g.unit_rows()?;
        let w = g.unit_proxies()?;
        let terms = (0..u.len())
            .map(|i| {
                let yi = y[i] as usize;
                let angle = dot(&u[i], &w[yi]).acos_clamped(-COS_CLAMP, COS_CLAMP);
                let pos = (angle + m).cos() * s;
                let neg = classes
                    .iter()
                    .filter(|&&c| c != yi)
                    .map(|&c| dot(&u[i], &w[c]) * s)
                    .collect();
                softmax_nll(pos, neg)
            })
            .collect();
        Ok(mean_of(g.tape, terms))
    })
}

/// ProxyNCA: `d(x, p_y) + log sum_{c != y} exp(-d(x, p_c))` over every bank
/// class, Euclidean distance between unit vectors.
pub fn proxynca_loss(
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    bank: &ProxyBank,
    _spec: &ObjectiveSpec,
) -> Result<LossOutput> {
    check_bank(batch, labels, bank, Some(1))?;
    if bank.classes() < 2 {
        return Err(Error::TooFewClasses {
            needed: 2,
            found: bank.classes(),
        });
    }
    let y = labels.as_slice();
    differentiate(batch, Some(bank), None, |g| {
        let u = g.unit_rows()?;
        let p = g.unit_proxies()?;
        let terms = (0..u.len())
            .map(|i| {
                let yi = y[i] as usize;
                let neg: Vec<Var<'_>> = (0..p.len())
                    .filter(|&c| c != yi)
                    .map(|c| -distance(&u[i], &p[c]))
                    .collect();
                distance(&u[i], &p[yi]) + log_sum_exp(g.tape, &neg)
            })
            .collect();
        Ok(mean_of(g.tape, terms))
    })
}

/// Normalized softmax: `-log(exp(x^T p_y / T) / sum_{c != y} exp(x^T p_c / T))`
/// with the denominator over the other classes present in the batch.
pub fn normalized_softmax_loss(
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    bank: &ProxyBank,
    spec: &ObjectiveSpec,
) -> Result<LossOutput> {
    if !(spec.temperature > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be > 0, got {}",
            spec.temperature
        )));
    }
    check_bank(batch, labels, bank, Some(1))?;
    labels.require_classes(2)?;
    let y = labels.as_slice();
    let classes = present_classes(labels);
    let t = spec.temperature;
    differentiate(batch, Some(bank), None, |g| {
        let u = g.unit_rows()?;
        let p = g.unit_proxies()?;
        let terms = (0..u.len())
            .map(|i| {
                let yi = y[i] as usize;
                let neg: Vec<Var<'_>> = classes
                    .iter()
                    .filter(|&&c| c != yi)
                    .map(|&c| dot(&u[i], &p[c]) / t)
                    .collect();
                log_sum_exp(g.tape, &neg) - dot(&u[i], &p[yi]) / t
            })
            .collect();
        Ok(mean_of(g.tape, terms))
    })
}

/// Soft similarity of a row to the `k` proxies of one class:
/// `sum_k softmax_k(x^T p_k / gamma) * x^T p_k`.
fn soft_similarity<'t>(x: &[Var<'t>], proxies: &[Vec<Var<'t>>], gamma: f64) -> Var<'t> {
    let tape = x[0].tape();
    let sims: Vec<Var<'t>> = proxies.iter().map(|p| dot(x, p)).collect();
    if sims.len() == 1 {
        return sims[0];
    }
    let logits: Vec<Var<'t>> = sims.iter().map(|&s| s / gamma).collect();
    let lse = log_sum_exp(tape, &logits);
    autodiff::sum(tape, logits.iter().zip(&sims).map(|(&l, &s)| (l - lse).exp() * s))
}

/// SoftTriple loss with the proxy-spread regularizer. Proxies must arrive
/// unit-normalized.
pub fn softtriple_loss(
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    bank: &ProxyBank,
    spec: &ObjectiveSpec,
) -> Result<LossOutput> {
    check_bank(batch, labels, bank, None)?;
    for (i, p) in bank.as_slice().chunks_exact(bank.dim()).enumerate() {
        let norm = l2_norm(p);
        if (norm - 1.0).abs() > PROXY_NORM_TOLERANCE {
            return Err(Error::NotNormalized { row: i, norm });
        }
    }
    let y = labels.as_slice();
    let classes = present_classes(labels);
    let k = bank.per_class();
    let c_all = bank.classes();
    differentiate(batch, Some(bank), None, |g| {
        let u = g.unit_rows()?;
        let p = g.unit_proxies()?;
        let group = |c: usize| &p[c * k..(c + 1) * k];
        let terms = (0..u.len())
            .map(|i| {
                let yi = y[i] as usize;
                let pos = (soft_similarity(&u[i], group(yi), spec.st_gamma) - spec.st_delta) * spec.st_lambda;
                let neg = classes
                    .iter()
                    .filter(|&&c| c != yi)
                    .map(|&c| soft_similarity(&u[i], group(c), spec.st_gamma) * spec.st_lambda)
                    .collect();
                softmax_nll(pos, neg)
            })
            .collect();
        let base = mean_of(g.tape, terms);
        if k < 2 || spec.st_tau == 0.0 {
            return Ok(base);
        }
        let mut spread = Vec::new();
        for c in 0..c_all {
            let ps = group(c);
            for a in 0..k {
                for b in 0..k {
                    if a != b {
                        spread.push((-dot(&ps[a], &ps[b]) * 2.0 + 2.0).sqrt());
                    }
                }
            }
        }
        let reg = autodiff::sum(g.tape, spread) / (c_all * k * (k - 1)) as f64;
        Ok(base + reg * spec.st_tau)
    })
}
