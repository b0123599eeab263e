//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::HashMap;

use dmlkit::{EmbeddingMatrix, LabelVector};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_0a11)
}

/// `classes` labels with at least two members each, shuffled.
pub fn random_labels(r: &mut ChaCha8Rng, n: usize, classes: usize) -> LabelVector {
    assert!(n >= 2 * classes);
    let mut y: Vec<u32> = (0..n).map(|i| (i % classes) as u32).collect();
    y.shuffle(r);
    LabelVector::new(y)
}

pub fn gaussian(r: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddingMatrix {
    let data: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(r)).collect();
    EmbeddingMatrix::new(data, n, d).unwrap()
}

pub fn unit_gaussian(r: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddingMatrix {
    let g = gaussian(r, n, d);
    let mut data = Vec::with_capacity(n * d);
    for row in g.iter_rows() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(row.iter().map(|v| v / norm));
    }
    EmbeddingMatrix::new(data, n, d).unwrap()
}

/// Random labeled batch with `n` in `[lo_n, hi_n]` and `d` in `[lo_d, hi_d]`.
pub fn random_batch(r: &mut ChaCha8Rng, n: (usize, usize), d: (usize, usize), classes: usize) -> (EmbeddingMatrix, LabelVector) {
    let n = r.random_range(n.0..=n.1);
    let d = r.random_range(d.0..=d.1);
    let labels = random_labels(r, n, classes);
    (gaussian(r, n, d), labels)
}

/// Central differences of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// All other rows of `q`, nearest first, ties by index.
pub fn full_ranking(e: &EmbeddingMatrix, q: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..e.rows()).filter(|&j| j != q).collect();
    others.sort_by(|&a, &b| {
        dist(e.row(q), e.row(a))
            .partial_cmp(&dist(e.row(q), e.row(b)))
            .unwrap()
            .then(a.cmp(&b))
    });
    others
}

pub fn recall_bf(e: &EmbeddingMatrix, y: &[u32], k: usize) -> f64 {
    let hits = (0..y.len())
        .filter(|&q| full_ranking(e, q).iter().take(k).any(|&j| y[j] == y[q]))
        .count();
    hits as f64 / y.len() as f64
}

fn mates(y: &[u32], q: usize) -> usize {
    y.iter().enumerate().filter(|&(j, &c)| j != q && c == y[q]).count()
}

fn precision_at(e: &EmbeddingMatrix, y: &[u32], q: usize, k: usize) -> f64 {
    full_ranking(e, q).iter().take(k).filter(|&&j| y[j] == y[q]).count() as f64 / k as f64
}

/// Mean per-query F1 with retrieval depth equal to the number of class
/// mates; precision and recall are counted separately.
pub fn f1_bf(e: &EmbeddingMatrix, y: &[u32]) -> f64 {
    let mut total = 0.0;
    for q in 0..y.len() {
        let m = mates(y, q);
        if m == 0 {
            continue;
        }
        let tp = full_ranking(e, q).iter().take(m).filter(|&&j| y[j] == y[q]).count() as f64;
        let precision = tp / m as f64;
        let recall = tp / m as f64;
        if tp > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    total / y.len() as f64
}

pub fn map_c_bf(e: &EmbeddingMatrix, y: &[u32]) -> f64 {
    (0..y.len())
        .map(|q| match mates(y, q) {
            0 => 0.0,
            m => precision_at(e, y, q, m),
        })
        .sum::<f64>()
        / y.len() as f64
}

pub fn map_1000_bf(e: &EmbeddingMatrix, y: &[u32]) -> f64 {
    let k = 1000.min(y.len() - 1);
    (0..y.len()).map(|q| precision_at(e, y, q, k)).sum::<f64>() / y.len() as f64
}

/// NMI with arithmetic-mean normalization, from the contingency table.
pub fn nmi_bf(a: &[usize], y: &[u32]) -> f64 {
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, u32), f64> = HashMap::new();
    let mut pa: HashMap<usize, f64> = HashMap::new();
    let mut py: HashMap<u32, f64> = HashMap::new();
    for (&c, &l) in a.iter().zip(y) {
        *joint.entry((c, l)).or_default() += 1.0 / n;
        *pa.entry(c).or_default() += 1.0 / n;
        *py.entry(l).or_default() += 1.0 / n;
    }
    let entropy = |m: &dyn Fn() -> Vec<f64>| -m().iter().map(|p| p * p.log2()).sum::<f64>();
    let ha = entropy(&|| pa.values().copied().collect());
    let hy = entropy(&|| py.values().copied().collect());
    let mi: f64 = joint.iter().map(|(&(c, l), &p)| p * (p / (pa[&c] * py[&l])).log2()).sum();
    if ha + hy == 0.0 {
        1.0
    } else {
        2.0 * mi / (ha + hy)
    }
}

/// Minimizes `c.x` subject to `A x = b`, `x >= 0` (with `b >= 0`) by the
/// two-phase tableau simplex with Bland's rule.
pub fn simplex_min(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
    let (m, n) = (a.len(), c.len());
    let width = n + m + 1;
    let mut t: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = vec![0.0; width];
            row[..n].copy_from_slice(&a[i]);
            row[n + i] = 1.0;
            row[width - 1] = b[i];
            row
        })
        .collect();
    let mut basis: Vec<usize> = (n..n + m).collect();
    let eps = 1e-12;

    let run = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, cost: &[f64], allowed: usize| {
        loop {
            let reduced = |j: usize, t: &Vec<Vec<f64>>| -> f64 {
                cost[j] - (0..m).map(|i| cost[basis[i]] * t[i][j]).sum::<f64>()
            };
            let Some(enter) = (0..allowed).find(|&j| !basis.contains(&j) && reduced(j, t) < -eps) else {
                return;
            };
            let mut leave: Option<usize> = None;
            for i in 0..m {
                if t[i][enter] > eps {
                    let ratio = t[i][width - 1] / t[i][enter];
                    leave = match leave {
                        None => Some(i),
                        Some(l) => {
                            let best = t[l][width - 1] / t[l][enter];
                            if ratio < best - eps || (ratio <= best + eps && basis[i] < basis[l]) {
                                Some(i)
                            } else {
                                Some(l)
                            }
                        }
                    };
                }
            }
            let r = leave.expect("bounded problem");
            let p = t[r][enter];
            t[r].iter_mut().for_each(|v| *v /= p);
            for i in 0..m {
                if i != r && t[i][enter].abs() > 0.0 {
                    let f = t[i][enter];
                    let pivot = t[r].clone();
                    t[i].iter_mut().zip(&pivot).for_each(|(v, pv)| *v -= f * pv);
                }
            }
            basis[r] = enter;
        }
    };

    let mut phase1 = vec![0.0; n + m];
    phase1[n..].iter_mut().for_each(|v| *v = 1.0);
    run(&mut t, &mut basis, &phase1, n + m);
    // Drive artificials out of the basis where possible.
    for r in 0..m {
        if basis[r] >= n {
            if let Some(j) = (0..n).find(|&j| !basis.contains(&j) && t[r][j].abs() > 1e-9) {
                let p = t[r][j];
                t[r].iter_mut().for_each(|v| *v /= p);
                for i in 0..m {
                    if i != r {
                        let f = t[i][j];
                        let pivot = t[r].clone();
                        t[i].iter_mut().zip(&pivot).for_each(|(v, pv)| *v -= f * pv);
                    }
                }
                basis[r] = j;
            }
        }
    }
    let mut cost = c.to_vec();
    cost.extend(std::iter::repeat_n(0.0, m));
    run(&mut t, &mut basis, &cost, n);
    (0..m).map(|i| cost[basis[i]] * t[i][width - 1]).sum()
}

/// Earth mover's distance between histograms on bins `k * width`, solved
/// as a transportation LP.
pub fn transport_lp(h1: &[f64], h2: &[f64], width: f64) -> f64 {
    let k = h1.len();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..k {
        let mut row = vec![0.0; k * k];
        (0..k).for_each(|j| row[i * k + j] = 1.0);
        a.push(row);
        b.push(h1[i]);
    }
    for j in 0..k {
        let mut row = vec![0.0; k * k];
        (0..k).for_each(|i| row[i * k + j] = 1.0);
        a.push(row);
        b.push(h2[j]);
    }
    let c: Vec<f64> = (0..k * k)
        .map(|v| (v / k).abs_diff(v % k) as f64 * width)
        .collect();
    simplex_min(&a, &b, &c)
}

/// Greedy k-center recomputed from scratch at every step.
pub fn coreset_bf(e: &EmbeddingMatrix, b: usize, start: usize) -> Vec<usize> {
    let mut chosen = vec![start];
    while chosen.len() < b {
        let score = |i: usize| {
            chosen
                .iter()
                .map(|&s| dist(e.row(i), e.row(s)))
                .fold(f64::INFINITY, f64::min)
        };
        let mut best: Option<(usize, f64)> = None;
        for i in (0..e.rows()).filter(|i| !chosen.contains(i)) {
            let s = score(i);
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((i, s));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

/// Distance histogram over `[0, 2]` from explicit pair enumeration.
pub fn histogram_bf(points: &[&[f64]], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let mut count = 0.0;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            let bin = ((dist(p, q) / 2.0 * bins as f64).floor() as usize).min(bins - 1);
            h[bin] += 1.0;
            count += 1.0;
        }
    }
    h.iter().map(|v| v / count).collect()
}

/// Mean and unbiased covariance, ridged when there are fewer points than
/// dimensions.
pub fn gaussian_bf(points: &[&[f64]]) -> (Vec<f64>, DMatrix<f64>) {
    let (n, d) = (points.len(), points[0].len());
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (p[i] - mean[i]) * (p[j] - mean[j]) / (n - 1) as f64;
            }
        }
    }
    if n < d {
        cov += DMatrix::identity(d, d) * 1e-6;
    }
    (mean, cov)
}

fn sqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let r = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&r) * e.eigenvectors.transpose()
}

/// Fréchet distance with the cross term from `S2^(1/2) S1 S2^(1/2)`.
pub fn frechet_bf(m1: &[f64], s1: &DMatrix<f64>, m2: &[f64], s2: &DMatrix<f64>) -> f64 {
    let root2 = sqrtm(s2);
    let inner = &root2 * s1 * &root2;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = sqrtm(&inner).trace();
    let mean: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b).powi(2)).sum();
    mean + s1.trace() + s2.trace() - 2.0 * cross
}

/// Density of the distance between two uniform points on the unit sphere in
/// `dim` dimensions, normalized by Simpson quadrature over `[0, 2]`.
pub struct SphereDensity {
    dim: usize,
    z: f64,
}

impl SphereDensity {
    pub fn new(dim: usize) -> Self {
        let raw = |d: f64| raw_density(d, dim);
        let steps = 200_000;
        let h = 2.0 / steps as f64;
        let mut z = raw(0.0) + raw(2.0);
        for i in 1..steps {
            z += raw(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        Self { dim, z: z * h / 3.0 }
    }

    pub fn q(&self, d: f64) -> f64 {
        raw_density(d, self.dim) / self.z
    }
}

fn raw_density(d: f64, dim: usize) -> f64 {
    let base = (1.0 - d * d / 4.0).max(0.0);
    d.powi(dim as i32 - 2) * base.powf((dim as f64 - 3.0) / 2.0)
}

/// A loss evaluated at a flat parameter vector: batch rows, then proxies,
/// then the margin boundary where the loss has them.
pub struct GradCase {
    pub kind: dmlkit::objectives::ObjectiveKind,
    pub params: Vec<f64>,
    pub eval: Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)>,
}

/// Random inputs for `kind` with fixed tuples mined at the base point.
pub fn gradient_case(kind: dmlkit::objectives::ObjectiveKind, seed: u64) -> GradCase {
    use dmlkit::mining::{all_pairs, quadruplets_from_triplets, random_miner};
    use dmlkit::objectives::{
        evaluate, mine_mixup_triplets, mix_embeddings, LossInputs, ObjectiveKind as K, ObjectiveSpec, ProxyBank,
    };

    let mut r = rng(seed.wrapping_mul(31).wrapping_add(kind as u64));
    let classes = if kind == K::Quadruplet { 3 } else { r.random_range(2..=3) };
    let spec = ObjectiveSpec::new(kind);
    let (batch, labels) = loop {
        let (batch, labels) = random_batch(&mut r, (2 * classes.max(3), 16), (2, 8), classes);
        // Central differences are meaningless across a kink of the
        // histogram kernel, so batches with a similarity near a node are
        // redrawn.
        if kind != K::Histogram || !near_histogram_node(&batch, spec.bins, 1e-4) {
            break (batch, labels);
        }
    };
    let (n, d) = (batch.rows(), batch.dim());

    let tuples = match kind {
        K::Contrastive => Some(all_pairs(&labels)),
        K::Triplet | K::Margin | K::Snr => Some(random_miner(&labels, seed).unwrap()),
        K::Quadruplet => Some(quadruplets_from_triplets(&random_miner(&labels, seed).unwrap(), &labels, seed).unwrap()),
        _ => None,
    };
    let proxies = kind
        .uses_proxies()
        .then(|| ProxyBank::random(classes, spec.proxies_per_class, d, spec.proxy_lr, seed).unwrap());
    let (batch, mixed) = if kind == K::MixupTriplet {
        let mixes: Vec<(usize, usize, f64)> = (0..n)
            .map(|_| (r.random_range(0..n), r.random_range(0..n), r.random_range(0.05..0.95)))
            .collect();
        let (m, labels) = mix_embeddings(&batch, &labels, &mixes).unwrap();
        (m, Some(labels))
    } else {
        (batch, None)
    };
    let sets = mixed.as_ref().map(|m| mine_mixup_triplets(m, seed).unwrap());

    let mut params = batch.as_slice().to_vec();
    let proxy_len = proxies.as_ref().map_or(0, |p| p.as_slice().len());
    if let Some(p) = &proxies {
        params.extend_from_slice(p.as_slice());
    }
    let has_beta = kind == K::Margin;
    if has_beta {
        params.push(spec.beta);
    }
    let per_class = spec.proxies_per_class;
    let eval = move |x: &[f64]| -> (f64, Vec<f64>) {
        let b = EmbeddingMatrix::new(x[..n * d].to_vec(), n, d).unwrap();
        let bank = proxies
            .as_ref()
            .map(|p| ProxyBank::new(x[n * d..n * d + proxy_len].to_vec(), classes, per_class, d, p.learn_rate).unwrap());
        let inputs = LossInputs {
            tuples: tuples.as_ref(),
            proxies: bank.as_ref(),
            beta: has_beta.then(|| x[x.len() - 1]),
            mixed_labels: mixed.as_deref(),
            mixup_triplets: sets.as_deref(),
        };
        let out = evaluate(&spec, &b, &labels, inputs).unwrap();
        let mut g = out.grad_embeddings.clone();
        if let Some(gp) = &out.grad_proxies {
            g.extend_from_slice(gp);
        }
        if has_beta {
            g.push(out.grad_beta.expect("margin loss reports the boundary gradient"));
        }
        (out.value, g)
    };
    GradCase {
        kind,
        params,
        eval: Box::new(eval),
    }
}

impl GradCase {
    /// Relative error between the analytic gradient and central
    /// differences with step `h`.
    pub fn check(&self, h: f64) -> f64 {
        let (_, analytic) = (self.eval)(&self.params);
        let numeric = fd_gradient(|x| (self.eval)(x).0, &self.params, h);
        rel_error(&analytic, &numeric)
    }
}

fn near_histogram_node(batch: &EmbeddingMatrix, bins: usize, guard: f64) -> bool {
    let step = 2.0 / (bins - 1) as f64;
    let unit: Vec<Vec<f64>> = batch
        .iter_rows()
        .map(|r| {
            let n = norm(r);
            r.iter().map(|v| v / n).collect()
        })
        .collect();
    (0..unit.len()).any(|i| {
        (i + 1..unit.len()).any(|j| {
            let s: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            let offset = (s + 1.0) / step;
            (offset - offset.round()).abs() * step < guard
        })
    })
}
