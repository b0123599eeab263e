//! Losses that aggregate over the whole mini-batch without explicit tuples.

use super::{check_labels, differentiate, mean_of, LossOutput, ObjectiveSpec};
use crate::autodiff::{self, distance, dot, log1p_sum_exp, log_sum_exp, sq_norm, Tape, Var};
use crate::embedding::{EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};

/// `nu / b * sum_i ||x_i||^2`.
fn norm_penalty<'t>(tape: &'t Tape, rows: &[Vec<Var<'t>>], nu: f64) -> Var<'t> {
    if nu == 0.0 {
        return tape.constant(0.0);
    }
    mean_of(tape, rows.iter().map(|r| sq_norm(r)).collect()) * nu
}

fn ordered_positive_pairs(labels: &LabelVector) -> Vec<(usize, usize)> {
    let y = labels.as_slice();
    let mut out = Vec::new();
    for a in 0..y.len() {
        for p in 0..y.len() {
            if a != p && y[a] == y[p] {
                out.push((a, p));
            }
        }
    }
    out
}

fn negatives_of(labels: &LabelVector, a: usize) -> Vec<usize> {
    let y = labels.as_slice();
    (0..y.len()).filter(|&n| y[n] != y[a]).collect()
}

/// Generalized lifted structure loss on raw embeddings.
///
/// Per anchor with at least one positive and one negative:
/// `[log sum_p exp(d(a,p)) + log sum_n exp(gamma - d(a,n))]_+`, averaged,
/// plus the squared-norm penalty.
pub fn generalized_lifted_loss(
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    spec: &ObjectiveSpec,
) -> Result<LossOutput> {
    check_labels(batch, labels)?;
    labels.require_classes(2)?;
    let y = labels.as_slice();
    let gamma = spec.gamma;
    differentiate(batch, None, None, |g| {
        let x = &g.rows;
        let mut terms = Vec::new();
        for a in 0..x.len() {
            let pos: Vec<Var<'_>> = (0..x.len())
                .filter(|&p| p != a && y[p] == y[a])
                .map(|p| distance(&x[a], &x[p]))
                .collect();
            let neg: Vec<Var<'_>> = (0..x.len())
                .filter(|&n| y[n] != y[a])
                .map(|n| -distance(&x[a], &x[n]) + gamma)
                .collect();
            if pos.is_empty() || neg.is_empty() {
                continue;
            }
            terms.push((log_sum_exp(g.tape, &pos) + log_sum_exp(g.tape, &neg)).relu());
        }
        Ok(mean_of(g.tape, terms) + norm_penalty(g.tape, x, spec.nu))
    })
}

fn npair_term<'t>(tape: &'t Tape, x: &[Vec<Var<'t>>], a: usize, p: usize, negs: &[usize]) -> Var<'t> {
    let ap = dot(&x[a], &x[p]);
    let logits: Vec<Var<'t>> = negs.iter().map(|&n| dot(&x[a], &x[n]) - ap).collect();
    log1p_sum_exp(tape, &logits)
}

/// N-pair loss on raw embeddings over all ordered same-class pairs, every
/// other-class sample serving as a negative, plus the squared-norm penalty.
pub fn npair_loss(batch: &EmbeddingMatrix, labels: &LabelVector, spec: &ObjectiveSpec) -> Result<LossOutput> {
    angular_or_npair(batch, labels, spec, 0.0)
}

/// N-pair loss plus `lambda` times the angular term
/// `log(1 + sum_n exp(4 tan^2(alpha) (x_a + x_p)^T x_n - 2 (1 + tan^2(alpha)) x_a^T x_p))`,
/// the angular term computed on unit-normalized rows.
pub fn angular_loss(batch: &EmbeddingMatrix, labels: &LabelVector, spec: &ObjectiveSpec) -> Result<LossOutput> {
    angular_or_npair(batch, labels, spec, spec.angular_lambda)
}

fn angular_or_npair(
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    spec: &ObjectiveSpec,
    lambda: f64,
) -> Result<LossOutput> {
    check_labels(batch, labels)?;
    let pairs = ordered_positive_pairs(labels);
    let negs: Vec<Vec<usize>> = (0..labels.len()).map(|a| negatives_of(labels, a)).collect();
    let tan2 = spec.angular_alpha.tan().powi(2);
    differentiate(batch, None, None, |g| {
        let x = &g.rows;
        let npair = mean_of(
            g.tape,
            pairs.iter().map(|&(a, p)| npair_term(g.tape, x, a, p, &negs[a])).collect(),
        );
        let mut total = npair + norm_penalty(g.tape, x, spec.nu);
        if lambda != 0.0 && !pairs.is_empty() {
            let u = g.unit_rows()?;
            let terms = pairs
                .iter()
                .map(|&(a, p)| {
                    let ap = dot(&u[a], &u[p]) * (2.0 * (1.0 + tan2));
                    let logits: Vec<Var<'_>> = negs[a]
                        .iter()
                        .map(|&n| {
                            let s = dot(&u[a], &u[n]) + dot(&u[p], &u[n]);
                            s * (4.0 * tan2) - ap
                        })
                        .collect();
                    log1p_sum_exp(g.tape, &logits)
                })
                .collect();
            total = total + mean_of(g.tape, terms) * lambda;
        }
        Ok(total)
    })
}

/// Histogram node positions `t_r = -1 + 2r/(R-1)` and step.
fn histogram_nodes(bins: usize) -> Result<(Vec<f64>, f64)> {
    if bins < 2 {
        return Err(Error::invalid(format!("histogram needs at least 2 bins, got {bins}")));
    }
    let step = 2.0 / (bins - 1) as f64;
    Ok(((0..bins).map(|r| -1.0 + step * r as f64).collect(), step))
}

fn soft_histogram<'t>(tape: &'t Tape, sims: &[Var<'t>], nodes: &[f64], step: f64) -> Vec<Var<'t>> {
    let n = sims.len() as f64;
    nodes
        .iter()
        .map(|&t| {
            let w = sims
                .iter()
                .map(|&s| (-(s - t).abs() / step + 1.0).relu());
            autodiff::sum(tape, w) / n
        })
        .collect()
}

fn overlap<'t>(tape: &'t Tape, pos: &[Var<'t>], neg: &[Var<'t>], bins: usize) -> Result<Var<'t>> {
    let (nodes, step) = histogram_nodes(bins)?;
    let hp = soft_histogram(tape, pos, &nodes, step);
    let hn = soft_histogram(tape, neg, &nodes, step);
    let mut cdf = tape.constant(0.0);
    let mut terms = Vec::with_capacity(bins);
    for r in 0..bins {
        cdf = cdf + hp[r];
        terms.push(hn[r] * cdf);
    }
    Ok(autodiff::sum(tape, terms))
}

/// Histogram overlap `sum_r h-(r) * CDF+(r)` for plain similarity lists.
pub fn histogram_overlap(positive: &[f64], negative: &[f64], bins: usize) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::invalid("histogram needs positive and negative similarities"));
    }
    let tape = Tape::new();
    let p = tape.vars(positive);
    let n = tape.vars(negative);
    Ok(overlap(&tape, &p, &n, bins)?.value())
}

/// Histogram loss over all unordered pairs of the batch, cosine similarity
/// on unit-normalized rows, triangular kernel on `spec.bins` nodes.
pub fn histogram_loss(batch: &EmbeddingMatrix, labels: &LabelVector, spec: &ObjectiveSpec) -> Result<LossOutput> {
    check_labels(batch, labels)?;
    histogram_nodes(spec.bins)?;
    let y = labels.as_slice();
    let mut pos_pairs = Vec::new();
    let mut neg_pairs = Vec::new();
    for i in 0..y.len() {
        for j in i + 1..y.len() {
            if y[i] == y[j] {
                pos_pairs.push((i, j));
            } else {
                neg_pairs.push((i, j));
            }
        }
    }
    if pos_pairs.is_empty() || neg_pairs.is_empty() {
        return Err(Error::invalid("histogram loss needs positive and negative pairs in the batch"));
    }
    differentiate(batch, None, None, |g| {
        let u = g.unit_rows()?;
        let sims = |pairs: &[(usize, usize)]| -> Vec<Var<'_>> { pairs.iter().map(|&(i, j)| dot(&u[i], &u[j])).collect() };
        overlap(g.tape, &sims(&pos_pairs), &sims(&neg_pairs), spec.bins)
    })
}

/// Pairs surviving the multisimilarity filter for anchor `i`: negatives
/// with `s > min_pos - eps`, positives with `s < max_neg + eps`.
fn msim_selection(sims: &[f64], y: &[u32], i: usize, eps: f64) -> (Vec<usize>, Vec<usize>) {
    let pos: Vec<usize> = (0..y.len()).filter(|&j| j != i && y[j] == y[i]).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&k| y[k] != y[i]).collect();
    let min_pos = pos.iter().map(|&j| sims[j]).fold(f64::INFINITY, f64::min);
    let max_neg = neg.iter().map(|&k| sims[k]).fold(f64::NEG_INFINITY, f64::max);
    (
        pos.into_iter().filter(|&j| sims[j] < max_neg + eps).collect(),
        neg.into_iter().filter(|&k| sims[k] > min_pos - eps).collect(),
    )
}

fn msim_anchor<'t>(
    tape: &'t Tape,
    u: &[Vec<Var<'t>>],
    y: &[u32],
    i: usize,
    spec: &ObjectiveSpec,
) -> (Var<'t>, Var<'t>) {
    let sims: Vec<Var<'t>> = (0..u.len()).map(|j| dot(&u[i], &u[j])).collect();
    let vals: Vec<f64> = sims.iter().map(|s| s.value()).collect();
    let (pos, neg) = msim_selection(&vals, y, i, spec.msim_epsilon);
    let (a, b, l) = (spec.msim_alpha, spec.msim_beta, spec.msim_lambda);
    let pl: Vec<Var<'t>> = pos.iter().map(|&j| (sims[j] - l) * -a).collect();
    let nl: Vec<Var<'t>> = neg.iter().map(|&k| (sims[k] - l) * b).collect();
    (log1p_sum_exp(tape, &pl) / a, log1p_sum_exp(tape, &nl) / b)
}

/// Per-anchor `(positive, negative)` multisimilarity terms.
pub fn multisimilarity_terms(
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    spec: &ObjectiveSpec,
) -> Result<Vec<(f64, f64)>> {
    check_labels(batch, labels)?;
    let tape = Tape::new();
    let rows: Vec<Vec<Var<'_>>> = batch.iter_rows().map(|r| tape.vars(r)).collect();
    let u: Vec<Vec<Var<'_>>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.iter().all(|v| v.value() == 0.0) {
                Err(Error::ZeroNorm { row: i })
            } else {
                Ok(autodiff::normalize(r))
            }
        })
        .collect::<Result<_>>()?;
    Ok((0..u.len())
        .map(|i| {
            let (p, n) = msim_anchor(&tape, &u, labels.as_slice(), i, spec);
            (p.value(), n.value())
        })
        .collect())
}

/// Multisimilarity loss, averaged over every batch row as anchor.
pub fn multisimilarity_loss(
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    spec: &ObjectiveSpec,
) -> Result<LossOutput> {
    check_labels(batch, labels)?;
    let y = labels.as_slice();
    differentiate(batch, None, None, |g| {
        let u = g.unit_rows()?;
        let terms = (0..u.len())
            .map(|i| {
                let (p, n) = msim_anchor(g.tape, &u, y, i, spec);
                p + n
            })
            .collect();
        Ok(mean_of(g.tape, terms))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::ObjectiveKind;

    fn fixture() -> (EmbeddingMatrix, LabelVector) {
        let b = EmbeddingMatrix::from_rows(&[
            [0.9, 0.2, -0.1],
            [0.7, 0.4, 0.2],
            [-0.3, 0.8, 0.5],
            [-0.1, 0.9, 0.1],
            [0.2, -0.6, 0.7],
        ])
        .unwrap();
        (b, LabelVector::new(vec![0, 0, 1, 1, 2]))
    }

    #[test]
    fn genlifted_at_origin() {
        let b = EmbeddingMatrix::new(vec![0.0; 8], 4, 2).unwrap();
        let l = LabelVector::new(vec![0, 0, 1, 1]);
        let s = ObjectiveSpec::new(ObjectiveKind::GeneralizedLifted);
        let out = generalized_lifted_loss(&b, &l, &s).unwrap();
        // one positive at distance 0, two negatives at distance 0
        let expected = (1f64.ln() + (2.0 * s.gamma.exp()).ln()).max(0.0);
        assert!((out.value - expected).abs() < 1e-12);
    }

    #[test]
    fn genlifted_nu_zero_removes_penalty() {
        let (b, l) = fixture();
        let mut s = ObjectiveSpec::new(ObjectiveKind::GeneralizedLifted);
        let with = generalized_lifted_loss(&b, &l, &s).unwrap().value;
        s.nu = 0.0;
        let without = generalized_lifted_loss(&b, &l, &s).unwrap().value;
        let pen: f64 = b.iter_rows().map(|r| r.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / 5.0;
        assert!((with - without - 0.005 * pen).abs() < 1e-12);
    }

    #[test]
    fn npair_examples() {
        let mut s = ObjectiveSpec::new(ObjectiveKind::NPair);
        s.nu = 0.0;
        let b = EmbeddingMatrix::from_rows(&[[1.0, 0.0], [0.5, 0.5]]).unwrap();
        let out = npair_loss(&b, &LabelVector::new(vec![0, 0]), &s).unwrap();
        assert_eq!(out.value, 0.0);
        // all rows identical: every logit is zero
        let b = EmbeddingMatrix::from_rows(&[[0.3, 0.4]; 5]).unwrap();
        let l = LabelVector::new(vec![0, 0, 1, 2, 2]);
        let out = npair_loss(&b, &l, &s).unwrap();
        // pairs (0,1),(1,0) with 3 negatives; (3,4),(4,3) with 3 negatives
        assert!((out.value - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn angular_lambda_zero_is_npair() {
        let (b, l) = fixture();
        let mut s = ObjectiveSpec::new(ObjectiveKind::Angular);
        s.angular_lambda = 0.0;
        let a = angular_loss(&b, &l, &s).unwrap();
        let n = npair_loss(&b, &l, &s).unwrap();
        assert_eq!(a.value, n.value);
        assert_eq!(a.grad_embeddings, n.grad_embeddings);
        let t = ObjectiveSpec::new(ObjectiveKind::Angular).angular_alpha.tan().powi(2);
        assert!((t - 1.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_disjoint_and_identical() {
        assert_eq!(histogram_overlap(&[1.0, 1.0], &[-1.0, -1.0], 65).unwrap(), 0.0);
        let sims: Vec<f64> = (0..200).map(|i| -0.9 + 1.8 * i as f64 / 199.0).collect();
        let v = histogram_overlap(&sims, &sims, 65).unwrap();
        assert!((v - 0.5).abs() < 1.0 / 65.0, "{v}");
        assert!(histogram_overlap(&[0.0], &[0.0], 1).is_err());
    }

    #[test]
    fn histogram_loss_needs_both_pair_types() {
        let (b, _) = fixture();
        let s = ObjectiveSpec::new(ObjectiveKind::Histogram);
        assert!(histogram_loss(&b, &LabelVector::new(vec![0, 1, 2, 3, 4]), &s).is_err());
        let v = histogram_loss(&b, &LabelVector::new(vec![0, 0, 1, 1, 2]), &s).unwrap();
        assert!(v.value >= 0.0 && v.value <= 1.0);
    }

    #[test]
    fn multisimilarity_examples() {
        let s = ObjectiveSpec::new(ObjectiveKind::MultiSimilarity);
        // anchor with a single positive at similarity lambda and no negatives
        let theta = s.msim_lambda.acos();
        let b = EmbeddingMatrix::from_rows(&[[1.0, 0.0], [theta.cos(), theta.sin()]]).unwrap();
        let terms = multisimilarity_terms(&b, &LabelVector::new(vec![0, 0]), &s).unwrap();
        // no negatives: max_neg = -inf filters every positive
        assert_eq!(terms[0], (0.0, 0.0));
        // one far negative keeps the positive: max_neg + eps > lambda
        let b = EmbeddingMatrix::from_rows(&[[1.0, 0.0, 0.0], [theta.cos(), theta.sin(), 0.0], [0.5, 0.0, 0.866]]).unwrap();
        let terms = multisimilarity_terms(&b, &LabelVector::new(vec![0, 0, 1]), &s).unwrap();
        assert!((terms[0].0 - 2f64.ln() / s.msim_alpha).abs() < 1e-9, "{:?}", terms[0]);
    }

    #[test]
    fn multisimilarity_filtered_anchor_contributes_zero() {
        let s = ObjectiveSpec::new(ObjectiveKind::MultiSimilarity);
        // positive much closer than every negative: nothing survives
        let b = EmbeddingMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.01], [-1.0, 0.0]]).unwrap();
        let terms = multisimilarity_terms(&b, &LabelVector::new(vec![0, 0, 1]), &s).unwrap();
        assert_eq!(terms[0], (0.0, 0.0));
    }
}
