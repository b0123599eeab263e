//! Tuple-based ranking losses on the unit hypersphere.

use rand::seq::IndexedRandom;

use super::{check_labels, differentiate, mean_of, LossOutput, ObjectiveSpec};
use crate::autodiff::{self, distance, Var};
use crate::embedding::{EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::mining::{self, Tuple, TupleKind, TupleSet};
use crate::rng;

fn expect_kind(tuples: &TupleSet, kind: TupleKind, loss: &str) -> Result<()> {
    if tuples.kind != kind {
        return Err(Error::invalid(format!(
            "{loss} loss expects {kind:?}, got {:?}",
            tuples.kind
        )));
    }
    Ok(())
}

/// Contrastive loss: mean over pairs of `d` for positive pairs and
/// `[gamma - d]_+` for negative pairs.
pub fn contrastive_loss(
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    pairs: &TupleSet,
    spec: &ObjectiveSpec,
) -> Result<LossOutput> {
    check_labels(batch, labels)?;
    expect_kind(pairs, TupleKind::Pairs, "contrastive")?;
    pairs.validate(labels)?;
    let gamma = spec.gamma;
    differentiate(batch, None, None, |g| {
        let x = g.unit_rows()?;
        let terms = pairs
            .tuples
            .iter()
            .map(|t| match *t {
                Tuple::Pair { a, b, positive } => {
                    let d = distance(&x[a], &x[b]);
                    if positive {
                        d
                    } else {
                        (-d + gamma).relu()
                    }
                }
                _ => unreachable!("kind checked"),
            })
            .collect();
        Ok(mean_of(g.tape, terms))
    })
}

fn triplet_term<'t>(x: &[Vec<Var<'t>>], a: usize, p: usize, n: usize, gamma: f64) -> Var<'t> {
    (distance(&x[a], &x[p]) - distance(&x[a], &x[n]) + gamma).relu()
}

/// Triplet loss: mean over triplets of `[d(a,p) - d(a,n) + gamma]_+`.
pub fn triplet_loss(
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    triplets: &TupleSet,
    spec: &ObjectiveSpec,
) -> Result<LossOutput> {
    check_labels(batch, labels)?;
    expect_kind(triplets, TupleKind::Triplets, "triplet")?;
    triplets.validate(labels)?;
    let gamma = spec.gamma;
    differentiate(batch, None, None, |g| {
        let x = g.unit_rows()?;
        let terms = triplets
            .tuples
            .iter()
            .map(|t| match *t {
                Tuple::Triplet {
                    anchor,
                    positive,
                    negative,
                } => triplet_term(&x, anchor, positive, negative, gamma),
                _ => unreachable!("kind checked"),
            })
            .collect();
        Ok(mean_of(g.tape, terms))
    })
}

/// Margin loss with learnable boundary `beta`: positive pairs contribute
/// `[gamma + d - beta]_+`, negative pairs `[gamma - (d - beta)]_+`.
///
/// Accepts pairs or triplets (split into their two pairs). The returned
/// output carries the gradient with respect to `beta`.
pub fn margin_loss(
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    tuples: &TupleSet,
    spec: &ObjectiveSpec,
    beta: f64,
) -> Result<LossOutput> {
    check_labels(batch, labels)?;
    let pairs = match tuples.kind {
        TupleKind::Pairs => tuples.clone(),
        TupleKind::Triplets => mining::triplets_to_pairs(tuples)?,
        TupleKind::Quadruplets => return Err(Error::invalid("margin loss takes pairs or triplets")),
    };
    pairs.validate(labels)?;
    let gamma = spec.gamma;
    differentiate(batch, None, Some(beta), |g| {
        let x = g.unit_rows()?;
        let beta = g.beta.expect("beta input");
        let terms = pairs
            .tuples
            .iter()
            .map(|t| match *t {
                Tuple::Pair { a, b, positive } => {
                    let d = distance(&x[a], &x[b]);
                    if positive {
                        (d - beta + gamma).relu()
                    } else {
                        (beta - d + gamma).relu()
                    }
                }
                _ => unreachable!("pairs"),
            })
            .collect();
        Ok(mean_of(g.tape, terms))
    })
}

/// Quadruplet loss: `[d(a,p) - d(a,n1) + gamma]_+ + [d(a,n1) - d(n2,n1) + gamma2]_+`
/// averaged over quadruplets.
pub fn quadruplet_loss(
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    quads: &TupleSet,
    spec: &ObjectiveSpec,
) -> Result<LossOutput> {
    check_labels(batch, labels)?;
    expect_kind(quads, TupleKind::Quadruplets, "quadruplet")?;
    quads.validate(labels)?;
    let (g1, g2) = (spec.gamma, spec.gamma2);
    differentiate(batch, None, None, |g| {
        let x = g.unit_rows()?;
        let terms = quads
            .tuples
            .iter()
            .map(|t| match *t {
                Tuple::Quadruplet {
                    anchor,
                    positive,
                    negative,
                    negative2,
                } => {
                    let dan = distance(&x[anchor], &x[negative]);
                    let first = (distance(&x[anchor], &x[positive]) - dan + g1).relu();
                    let second = (dan - distance(&x[negative2], &x[negative]) + g2).relu();
                    first + second
                }
                _ => unreachable!("kind checked"),
            })
            .collect();
        Ok(mean_of(g.tape, terms))
    })
}

fn variance<'t>(v: &[Var<'t>]) -> Var<'t> {
    let tape = v[0].tape();
    let n = v.len() as f64;
    let mean = autodiff::sum(tape, v.iter().copied()) / n;
    autodiff::sum(tape, v.iter().map(|&x| (x - mean).square())) / n
}

fn snr_distance<'t>(a: &[Var<'t>], b: &[Var<'t>], anchor_var: Var<'t>) -> Var<'t> {
    let diff: Vec<Var<'t>> = a.iter().zip(b).map(|(&u, &v)| u - v).collect();
    variance(&diff) / anchor_var
}

const MIN_ANCHOR_VARIANCE: f64 = 1e-12;

/// Signal-to-noise ratio loss. The SNR distance from anchor `a` to `j` is
/// `Var(x_a - x_j) / Var(x_a)`; triplets are hinged with margin `gamma` and
/// every batch row pays `snr_lambda * |sum_m x_m| / b`.
pub fn snr_loss(
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    triplets: &TupleSet,
    spec: &ObjectiveSpec,
) -> Result<LossOutput> {
    check_labels(batch, labels)?;
    expect_kind(triplets, TupleKind::Triplets, "snr")?;
    triplets.validate(labels)?;
    let (gamma, lambda) = (spec.gamma, spec.snr_lambda);
    differentiate(batch, None, None, |g| {
        let x = g.unit_rows()?;
        let snr = |a: usize, j: usize, anchor_var| snr_distance(&x[a], &x[j], anchor_var);
        let mut terms = Vec::with_capacity(triplets.len());
        for t in &triplets.tuples {
            if let Tuple::Triplet {
                anchor,
                positive,
                negative,
            } = *t
            {
                let va = variance(&x[anchor]);
                if va.value() <= MIN_ANCHOR_VARIANCE {
                    return Err(Error::invalid(format!(
                        "anchor {anchor} has zero variance across coordinates"
                    )));
                }
                terms.push((snr(anchor, positive, va) - snr(anchor, negative, va) + gamma).relu());
            }
        }
        let hinge = mean_of(g.tape, terms);
        if lambda == 0.0 {
            return Ok(hinge);
        }
        let penalty = x
            .iter()
            .map(|r| autodiff::sum(g.tape, r.iter().copied()).abs())
            .collect();
        Ok(hinge + mean_of(g.tape, penalty) * lambda)
    })
}

/// Label of a mixed sample: one `(class, weight)` entry for same-class
/// mixes, two for cross-class mixes. Weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedLabel {
    pub entries: Vec<(u32, f64)>,
}

impl MixedLabel {
    pub fn single(class: u32) -> Self {
        Self {
            entries: vec![(class, 1.0)],
        }
    }

    pub fn has_class(&self, c: u32) -> bool {
        self.entries.iter().any(|&(y, _)| y == c)
    }

    fn validate(&self, row: usize) -> Result<()> {
        if self.entries.is_empty() || self.entries.len() > 2 {
            return Err(Error::invalid(format!(
                "mixed label of row {row} must have one or two entries"
            )));
        }
        let mut total = 0.0;
        for &(_, w) in &self.entries {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid(format!(
                    "mixup weight {w} of row {row} outside [0, 1]"
                )));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "mixup weights of row {row} sum to {total}, not 1"
            )));
        }
        Ok(())
    }
}

/// Interpolates `weight * x_i + (1 - weight) * x_j` for every `(i, j, weight)`
/// and builds the matching mixed labels (entries merge for same-class mixes).
pub fn mix_embeddings(
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    mixes: &[(usize, usize, f64)],
) -> Result<(EmbeddingMatrix, Vec<MixedLabel>)> {
    check_labels(batch, labels)?;
    let n = batch.rows();
    let mut data = Vec::with_capacity(mixes.len() * batch.dim());
    let mut mixed = Vec::with_capacity(mixes.len());
    for &(i, j, w) in mixes {
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::invalid(format!("mixup weight {w} outside [0, 1]")));
        }
        data.extend(
            batch
                .row(i)
                .iter()
                .zip(batch.row(j))
                .map(|(a, b)| w * a + (1.0 - w) * b),
        );
        let (yi, yj) = (labels.get(i), labels.get(j));
        mixed.push(if yi == yj {
            MixedLabel::single(yi)
        } else {
            MixedLabel {
                entries: vec![(yi, w), (yj, 1.0 - w)],
            }
        });
    }
    Ok((EmbeddingMatrix::new(data, mixes.len(), batch.dim())?, mixed))
}

/// Random triplets for each label entry `k`: anchors carrying a `k`-th entry
/// of class `c`, positives carrying `c`, negatives not carrying `c`.
pub fn mine_mixup_triplets(mixed: &[MixedLabel], seed: u64) -> Result<Vec<TupleSet>> {
    let mut sets = Vec::with_capacity(2);
    for k in 0..2 {
        let mut tuples = Vec::new();
        for (a, m) in mixed.iter().enumerate() {
            let Some(&(c, _)) = m.entries.get(k) else {
                continue;
            };
            let pos: Vec<usize> = (0..mixed.len()).filter(|&j| j != a && mixed[j].has_class(c)).collect();
            let neg: Vec<usize> = (0..mixed.len()).filter(|&j| !mixed[j].has_class(c)).collect();
            if pos.is_empty() || neg.is_empty() {
                continue;
            }
            let mut r = rng::stream(seed, (k * mixed.len() + a) as u64);
            tuples.push(Tuple::Triplet {
                anchor: a,
                positive: *pos.choose(&mut r).expect("non-empty"),
                negative: *neg.choose(&mut r).expect("non-empty"),
            });
        }
        sets.push(TupleSet::manual(TupleKind::Triplets, tuples)?);
    }
    Ok(sets)
}

/// Mixup triplet loss: triplet set `k` is formed w.r.t. the `k`-th label
/// entry of each anchor and every term is weighted by that entry's
/// interpolation weight. The weighted sum is divided by the total weight.
pub fn mixup_triplet_loss(
    batch: &EmbeddingMatrix,
    mixed: &[MixedLabel],
    triplet_sets: &[TupleSet],
    spec: &ObjectiveSpec,
) -> Result<LossOutput> {
    if mixed.len() != batch.rows() {
        return Err(Error::DimensionMismatch {
            expected: batch.rows(),
            found: mixed.len(),
        });
    }
    for (i, m) in mixed.iter().enumerate() {
        m.validate(i)?;
    }
    if triplet_sets.len() > 2 {
        return Err(Error::invalid("mixup labels have at most two entries"));
    }
    let n = batch.rows();
    let mut weighted = Vec::new();
    for (k, set) in triplet_sets.iter().enumerate() {
        expect_kind(set, TupleKind::Triplets, "mixup triplet")?;
        for (ti, t) in set.tuples.iter().enumerate() {
            let Tuple::Triplet {
                anchor,
                positive,
                negative,
            } = *t
            else {
                unreachable!("kind checked")
            };
            for idx in [anchor, positive, negative] {
                if idx >= n {
                    return Err(Error::IndexOutOfRange { index: idx, len: n });
                }
            }
            let &(c, w) = mixed[anchor].entries.get(k).ok_or_else(|| Error::ClassConstraint {
                tuple: ti,
                reason: format!("anchor {anchor} has no label entry {k}"),
            })?;
            if !set.is_switched(ti) && (!mixed[positive].has_class(c) || mixed[negative].has_class(c)) {
                return Err(Error::ClassConstraint {
                    tuple: ti,
                    reason: format!("set {k}: positive must carry class {c} and negative must not"),
                });
            }
            weighted.push((anchor, positive, negative, w));
        }
    }
    let gamma = spec.gamma;
    let total_weight: f64 = weighted.iter().map(|t| t.3).sum();
    differentiate(batch, None, None, |g| {
        if weighted.is_empty() || total_weight == 0.0 {
            return Ok(g.zero());
        }
        let x = g.unit_rows()?;
        let terms = weighted
            .iter()
            .map(|&(a, p, n, w)| triplet_term(&x, a, p, n, gamma) * w);
        Ok(autodiff::sum(g.tape, terms) / total_weight)
    })
}
