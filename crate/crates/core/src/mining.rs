//! Tuple construction from a mini-batch.
//!
//! Every miner enumerates anchors in ascending index order. An element is an
//! anchor when it has at least one same-class partner and the batch holds at
//! least one other class. Each anchor gets its own random stream derived from
//! `(seed, anchor)`, so results do not depend on evaluation order.

use rand::seq::IndexedRandom;
use rand::Rng as _;

use crate::embedding::{pairwise_distances, DistanceMatrix, EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TupleKind {
    Pairs,
    Triplets,
    Quadruplets,
}

/// One index tuple into a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tuple {
    /// `positive` marks whether the pair is treated as same-class.
    Pair { a: usize, b: usize, positive: bool },
    Triplet {
        anchor: usize,
        positive: usize,
        negative: usize,
    },
    Quadruplet {
        anchor: usize,
        positive: usize,
        negative: usize,
        negative2: usize,
    },
}

impl Tuple {
    pub fn kind(&self) -> TupleKind {
        match self {
            Tuple::Pair { .. } => TupleKind::Pairs,
            Tuple::Triplet { .. } => TupleKind::Triplets,
            Tuple::Quadruplet { .. } => TupleKind::Quadruplets,
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        match *self {
            Tuple::Pair { a, b, .. } => vec![a, b],
            Tuple::Triplet {
                anchor,
                positive,
                negative,
            } => vec![anchor, positive, negative],
            Tuple::Quadruplet {
                anchor,
                positive,
                negative,
                negative2,
            } => vec![anchor, positive, negative, negative2],
        }
    }

    /// The tuple with positive and negative roles exchanged.
    pub fn switched(self) -> Self {
        match self {
            Tuple::Pair { a, b, positive } => Tuple::Pair {
                a,
                b,
                positive: !positive,
            },
            Tuple::Triplet {
                anchor,
                positive,
                negative,
            } => Tuple::Triplet {
                anchor,
                positive: negative,
                negative: positive,
            },
            Tuple::Quadruplet {
                anchor,
                positive,
                negative,
                negative2,
            } => Tuple::Quadruplet {
                anchor,
                positive: negative,
                negative: positive,
                negative2,
            },
        }
    }

    fn check_classes(&self, y: &[u32]) -> std::result::Result<(), String> {
        match *self {
            Tuple::Pair { a, b, positive } => {
                if (y[a] == y[b]) != positive {
                    return Err(format!(
                        "pair ({a},{b}) marked positive={positive} but labels are {} and {}",
                        y[a], y[b]
                    ));
                }
            }
            Tuple::Triplet {
                anchor,
                positive,
                negative,
            } => {
                if y[anchor] != y[positive] || y[anchor] == y[negative] {
                    return Err(format!(
                        "triplet needs y_a = y_p != y_n, got ({}, {}, {})",
                        y[anchor], y[positive], y[negative]
                    ));
                }
            }
            Tuple::Quadruplet {
                anchor,
                positive,
                negative,
                negative2,
            } => {
                let (ya, yp, yn, yl) = (y[anchor], y[positive], y[negative], y[negative2]);
                if ya != yp || yp == yn || yl == yn || yl == yp {
                    return Err(format!(
                        "quadruplet needs y_a = y_p, y_p != y_n, y_l != y_n, y_l != y_p, got ({ya}, {yp}, {yn}, {yl})"
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinerKind {
    Random,
    Semihard,
    Softhard,
    DistanceWeighted,
    Exhaustive,
    Manual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub miner: MinerKind,
    pub seed: u64,
    /// Per-tuple flag set by [`rho_regularize_tuples`].
    pub switched: Vec<bool>,
    pub switch_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TupleSet {
    pub kind: TupleKind,
    pub tuples: Vec<Tuple>,
    pub provenance: Provenance,
}

impl TupleSet {
    /// Wraps hand-built tuples. All tuples must be of `kind`.
    pub fn manual(kind: TupleKind, tuples: Vec<Tuple>) -> Result<Self> {
        Self::from_miner(kind, tuples, MinerKind::Manual, 0)
    }

    fn from_miner(kind: TupleKind, tuples: Vec<Tuple>, miner: MinerKind, seed: u64) -> Result<Self> {
        if let Some(t) = tuples.iter().find(|t| t.kind() != kind) {
            return Err(Error::invalid(format!("tuple {t:?} is not of kind {kind:?}")));
        }
        let n = tuples.len();
        Ok(Self {
            kind,
            tuples,
            provenance: Provenance {
                miner,
                seed,
                switched: vec![false; n],
                switch_seed: None,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn is_switched(&self, i: usize) -> bool {
        self.provenance.switched.get(i).copied().unwrap_or(false)
    }

    /// Checks index ranges and, for tuples that were not switched, the class
    /// constraints of the tuple kind.
    pub fn validate(&self, labels: &LabelVector) -> Result<()> {
        let n = labels.len();
        let y = labels.as_slice();
        for (i, t) in self.tuples.iter().enumerate() {
            if t.kind() != self.kind {
                return Err(Error::invalid(format!("tuple {i} is not of kind {:?}", self.kind)));
            }
            for idx in t.indices() {
                if idx >= n {
                    return Err(Error::IndexOutOfRange { index: idx, len: n });
                }
            }
            if !self.is_switched(i) {
                t.check_classes(y)
                    .map_err(|reason| Error::ClassConstraint { tuple: i, reason })?;
            }
        }
        Ok(())
    }
}

/// Positive and negative candidates of every anchor.
struct AnchorSets {
    anchors: Vec<(usize, Vec<usize>, Vec<usize>)>,
}

fn anchor_sets(labels: &LabelVector) -> AnchorSets {
    let y = labels.as_slice();
    let mut anchors = Vec::new();
    for a in 0..y.len() {
        let pos: Vec<usize> = (0..y.len()).filter(|&j| j != a && y[j] == y[a]).collect();
        let neg: Vec<usize> = (0..y.len()).filter(|&j| y[j] != y[a]).collect();
        if !pos.is_empty() && !neg.is_empty() {
            anchors.push((a, pos, neg));
        }
    }
    AnchorSets { anchors }
}

fn triplets(
    labels: &LabelVector,
    seed: u64,
    miner: MinerKind,
    mut choose: impl FnMut(usize, &[usize], &[usize], &mut rng::Rng) -> (usize, usize),
) -> Result<TupleSet> {
    let sets = anchor_sets(labels);
    let tuples = sets
        .anchors
        .iter()
        .map(|(a, pos, neg)| {
            let mut r = rng::stream(seed, *a as u64);
            let (p, n) = choose(*a, pos, neg, &mut r);
            Tuple::Triplet {
                anchor: *a,
                positive: p,
                negative: n,
            }
        })
        .collect();
    TupleSet::from_miner(TupleKind::Triplets, tuples, miner, seed)
}

fn pick(set: &[usize], r: &mut rng::Rng) -> usize {
    *set.choose(r).expect("candidate set is non-empty")
}

/// One triplet per anchor with positive and negative drawn uniformly.
pub fn random_miner(labels: &LabelVector, seed: u64) -> Result<TupleSet> {
    triplets(labels, seed, MinerKind::Random, |_, pos, neg, r| {
        (pick(pos, r), pick(neg, r))
    })
}

fn check_batch(batch: &EmbeddingMatrix, labels: &LabelVector) -> Result<DistanceMatrix> {
    labels.check_len(batch.rows())?;
    Ok(pairwise_distances(batch))
}

/// Negatives farther from the anchor than the sampled positive.
pub fn semihard_candidates(dist: &DistanceMatrix, a: usize, p: usize, neg: &[usize]) -> Vec<usize> {
    let dap = dist.get(a, p);
    neg.iter().copied().filter(|&n| dap < dist.get(a, n)).collect()
}

/// Semihard mining: negative uniform among those with `d(a,p) < d(a,n)`,
/// falling back to any negative when that set is empty.
pub fn semihard_miner(batch: &EmbeddingMatrix, labels: &LabelVector, seed: u64) -> Result<TupleSet> {
    let dist = check_batch(batch, labels)?;
    triplets(labels, seed, MinerKind::Semihard, |a, pos, neg, r| {
        let p = pick(pos, r);
        let cands = semihard_candidates(&dist, a, p, neg);
        let n = if cands.is_empty() { pick(neg, r) } else { pick(&cands, r) };
        (p, n)
    })
}

/// Softhard candidate sets for an anchor: negatives closer than the
/// farthest positive, positives farther than the closest negative.
pub fn softhard_candidates(
    dist: &DistanceMatrix,
    a: usize,
    pos: &[usize],
    neg: &[usize],
) -> (Vec<usize>, Vec<usize>) {
    let max_pos = pos.iter().map(|&p| dist.get(a, p)).fold(f64::NEG_INFINITY, f64::max);
    let min_neg = neg.iter().map(|&n| dist.get(a, n)).fold(f64::INFINITY, f64::min);
    let hard_pos = pos.iter().copied().filter(|&p| dist.get(a, p) > min_neg).collect();
    let hard_neg = neg.iter().copied().filter(|&n| dist.get(a, n) < max_pos).collect();
    (hard_pos, hard_neg)
}

pub fn softhard_miner(batch: &EmbeddingMatrix, labels: &LabelVector, seed: u64) -> Result<TupleSet> {
    let dist = check_batch(batch, labels)?;
    triplets(labels, seed, MinerKind::Softhard, |a, pos, neg, r| {
        let (hp, hn) = softhard_candidates(&dist, a, pos, neg);
        let p = if hp.is_empty() { pick(pos, r) } else { pick(&hp, r) };
        let n = if hn.is_empty() { pick(neg, r) } else { pick(&hn, r) };
        (p, n)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceWeighting {
    /// Upper bound on the sampling weight.
    pub lambda: f64,
    /// Distances above this value are treated as equal to it.
    pub cutoff: f64,
}

impl Default for DistanceWeighting {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            cutoff: 1.4,
        }
    }
}

/// `ln q(d)` for the density of pairwise distances between uniform points
/// on the unit sphere in `dim` dimensions:
/// `q(d) = d^(D-2) (1 - d^2/4)^((D-3)/2) / (2^(D-2) B((D-1)/2, (D-1)/2))`.
pub fn log_sphere_distance_density(d: f64, dim: usize) -> f64 {
    let dd = dim as f64;
    let a = (dd - 1.0) / 2.0;
    let ln_beta = 2.0 * libm::lgamma(a) - libm::lgamma(2.0 * a);
    let ln_z = (dd - 2.0) * std::f64::consts::LN_2 + ln_beta;
    let tail = if dim == 3 {
        0.0
    } else {
        (dd - 3.0) / 2.0 * (1.0 - d * d / 4.0).ln()
    };
    (dd - 2.0) * d.ln() + tail - ln_z
}

/// Unnormalized sampling weight `min(lambda, 1/q(min(d, cutoff)))`.
pub fn distance_weight(d: f64, dim: usize, w: DistanceWeighting) -> f64 {
    let d = d.min(w.cutoff);
    let log_inv = -log_sphere_distance_density(d, dim);
    if log_inv >= w.lambda.ln() {
        w.lambda
    } else {
        log_inv.exp()
    }
}

/// Selection probabilities over `distances` (normalized weights).
pub fn distance_weighted_probabilities(distances: &[f64], dim: usize, w: DistanceWeighting) -> Vec<f64> {
    let ws: Vec<f64> = distances.iter().map(|&d| distance_weight(d, dim, w)).collect();
    let total: f64 = ws.iter().sum();
    ws.iter().map(|x| x / total).collect()
}

/// Distance-weighted mining on the unit sphere. Positives are uniform;
/// negatives are drawn with probability proportional to [`distance_weight`].
pub fn distance_weighted_miner(
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    seed: u64,
    weighting: DistanceWeighting,
) -> Result<TupleSet> {
    if batch.dim() < 3 {
        return Err(Error::invalid(format!(
            "distance-weighted mining needs D >= 3, got {}",
            batch.dim()
        )));
    }
    batch.check_unit_rows()?;
    let dist = check_batch(batch, labels)?;
    let dim = batch.dim();
    triplets(labels, seed, MinerKind::DistanceWeighted, |a, pos, neg, r| {
        let p = pick(pos, r);
        let ds: Vec<f64> = neg.iter().map(|&n| dist.get(a, n)).collect();
        let probs = distance_weighted_probabilities(&ds, dim, weighting);
        (p, neg[sample_index(&probs, r)])
    })
}

/// Inverse-CDF draw from a discrete distribution.
pub(crate) fn sample_index(probs: &[f64], r: &mut rng::Rng) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Every unordered pair `(i, j)`, `i < j`, with its role set by the labels.
pub fn all_pairs(labels: &LabelVector) -> TupleSet {
    let y = labels.as_slice();
    let mut tuples = Vec::new();
    for i in 0..y.len() {
        for j in (i + 1)..y.len() {
            tuples.push(Tuple::Pair {
                a: i,
                b: j,
                positive: y[i] == y[j],
            });
        }
    }
    TupleSet::from_miner(TupleKind::Pairs, tuples, MinerKind::Exhaustive, 0)
        .expect("pairs are homogeneous")
}

/// Splits each triplet into its anchor-positive and anchor-negative pair.
/// Switched triplets yield switched pairs.
pub fn triplets_to_pairs(set: &TupleSet) -> Result<TupleSet> {
    if set.kind != TupleKind::Triplets {
        return Err(Error::invalid("expected a triplet set"));
    }
    let mut tuples = Vec::with_capacity(set.len() * 2);
    let mut switched = Vec::with_capacity(set.len() * 2);
    for (i, t) in set.tuples.iter().enumerate() {
        if let Tuple::Triplet {
            anchor,
            positive,
            negative,
        } = *t
        {
            tuples.push(Tuple::Pair {
                a: anchor,
                b: positive,
                positive: true,
            });
            tuples.push(Tuple::Pair {
                a: anchor,
                b: negative,
                positive: false,
            });
            switched.extend([set.is_switched(i); 2]);
        }
    }
    Ok(TupleSet {
        kind: TupleKind::Pairs,
        tuples,
        provenance: Provenance {
            switched,
            ..set.provenance.clone()
        },
    })
}

/// Extends triplets into quadruplets by drawing a second negative whose class
/// differs from both the anchor's and the first negative's. Triplets without
/// such a candidate are dropped.
pub fn quadruplets_from_triplets(set: &TupleSet, labels: &LabelVector, seed: u64) -> Result<TupleSet> {
    if set.kind != TupleKind::Triplets {
        return Err(Error::invalid("expected a triplet set"));
    }
    set.validate(labels)?;
    let y = labels.as_slice();
    let mut tuples = Vec::new();
    for (i, t) in set.tuples.iter().enumerate() {
        if let Tuple::Triplet {
            anchor,
            positive,
            negative,
        } = *t
        {
            let cands: Vec<usize> = (0..y.len())
                .filter(|&l| y[l] != y[negative] && y[l] != y[positive])
                .collect();
            if cands.is_empty() {
                continue;
            }
            let mut r = rng::stream(seed, i as u64);
            tuples.push(Tuple::Quadruplet {
                anchor,
                positive,
                negative,
                negative2: pick(&cands, &mut r),
            });
        }
    }
    TupleSet::from_miner(TupleKind::Quadruplets, tuples, set.provenance.miner, seed)
}

const SWITCH_STREAM: u64 = 0x5157_1c4e;

/// Exchanges positive and negative roles of each tuple independently with
/// probability `p_switch`. Switched tuples are flagged in the provenance.
pub fn rho_regularize_tuples(
    tuples: &TupleSet,
    labels: &LabelVector,
    p_switch: f64,
    seed: u64,
) -> Result<TupleSet> {
    if !(0.0..=1.0).contains(&p_switch) {
        return Err(Error::invalid(format!("p_switch must lie in [0, 1], got {p_switch}")));
    }
    let n = labels.len();
    for t in &tuples.tuples {
        if let Some(&idx) = t.indices().iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: idx, len: n });
        }
    }
    let mut r = rng::stream(seed, SWITCH_STREAM);
    let mut out = tuples.clone();
    out.provenance.switched.resize(out.tuples.len(), false);
    for (t, flag) in out.tuples.iter_mut().zip(out.provenance.switched.iter_mut()) {
        let u: f64 = r.random();
        if u < p_switch {
            *t = t.switched();
            *flag = !*flag;
        }
    }
    out.provenance.switch_seed = Some(seed);
    Ok(out)
}
