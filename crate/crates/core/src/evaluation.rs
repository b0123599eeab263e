//! Retrieval and clustering metrics.
//!
//! Queries never retrieve themselves and neighbor ties go to the lower
//! index.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::embedding::{sq_dist, EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::mining::sample_index;
use crate::rng;
use crate::spectral::{DensityReport, SpectralReport};

/// The `depth` nearest neighbors of every row, self excluded.
pub fn ranked_neighbors(embeddings: &EmbeddingMatrix, depth: usize) -> Vec<Vec<usize>> {
    let n = embeddings.rows();
    let depth = depth.min(n.saturating_sub(1));
    (0..n)
        .into_par_iter()
        .map(|q| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != q)
                .map(|j| (sq_dist(embeddings.row(q), embeddings.row(j)).sqrt(), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.truncate(depth);
            others.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

fn check(embeddings: &EmbeddingMatrix, labels: &LabelVector) -> Result<()> {
    labels.check_len(embeddings.rows())?;
    if embeddings.rows() < 2 {
        return Err(Error::invalid("retrieval needs at least 2 samples"));
    }
    Ok(())
}

fn recall_from(neighbors: &[Vec<usize>], y: &[u32], k: usize) -> f64 {
    let hits = neighbors
        .iter()
        .enumerate()
        .filter(|(q, nn)| nn[..k].iter().any(|&j| y[j] == y[*q]))
        .count();
    hits as f64 / y.len() as f64
}

/// Fraction of queries with at least one same-class sample among their `k`
/// nearest neighbors.
pub fn recall_at_k(embeddings: &EmbeddingMatrix, labels: &LabelVector, k: usize) -> Result<f64> {
    check(embeddings, labels)?;
    if k == 0 || k >= embeddings.rows() {
        return Err(Error::invalid(format!(
            "k must lie in [1, {}), got {k}",
            embeddings.rows()
        )));
    }
    Ok(recall_from(&ranked_neighbors(embeddings, k), labels.as_slice(), k))
}

fn class_sizes(y: &[u32]) -> HashMap<u32, usize> {
    let mut sizes = HashMap::new();
    for &c in y {
        *sizes.entry(c).or_insert(0) += 1;
    }
    sizes
}

fn same_class_hits(nn: &[usize], y: &[u32], q: usize, k: usize) -> usize {
    nn[..k].iter().filter(|&&j| y[j] == y[q]).count()
}

/// Nearest-neighbor F1: each query retrieves as many neighbors as it has
/// class mates. Queries without class mates contribute 0.
pub fn f1_score(embeddings: &EmbeddingMatrix, labels: &LabelVector) -> Result<f64> {
    check(embeddings, labels)?;
    let y = labels.as_slice();
    let sizes = class_sizes(y);
    let depth = sizes.values().max().copied().unwrap_or(1) - 1;
    let neighbors = ranked_neighbors(embeddings, depth);
    let total: f64 = (0..y.len())
        .map(|q| {
            let k = sizes[&y[q]] - 1;
            if k == 0 {
                return 0.0;
            }
            let hits = same_class_hits(&neighbors[q], y, q, k) as f64;
            let (p, r) = (hits / k as f64, hits / k as f64);
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        })
        .sum();
    Ok(total / y.len() as f64)
}

/// Mean precision at a per-query depth, plus the number of queries whose
/// depth was zero (scored 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapScore {
    pub value: f64,
    pub undefined_queries: usize,
}

/// mAP@C: precision among the `k_c` nearest neighbors, `k_c` being the number
/// of remaining members of the query's class.
pub fn map_at_c(embeddings: &EmbeddingMatrix, labels: &LabelVector) -> Result<MapScore> {
    check(embeddings, labels)?;
    let y = labels.as_slice();
    let sizes = class_sizes(y);
    let depth = sizes.values().max().copied().unwrap_or(1) - 1;
    let neighbors = ranked_neighbors(embeddings, depth);
    let mut undefined = 0;
    let mut total = 0.0;
    for q in 0..y.len() {
        let k = sizes[&y[q]] - 1;
        if k == 0 {
            undefined += 1;
            continue;
        }
        total += same_class_hits(&neighbors[q], y, q, k) as f64 / k as f64;
    }
    Ok(MapScore {
        value: total / y.len() as f64,
        undefined_queries: undefined,
    })
}

/// Retrieval depth of mAP@1000.
pub const MAP_DEPTH: usize = 1000;

/// mAP@1000: precision among the `min(1000, n - 1)` nearest neighbors.
pub fn map_at_1000(embeddings: &EmbeddingMatrix, labels: &LabelVector) -> Result<f64> {
    check(embeddings, labels)?;
    let y = labels.as_slice();
    let k = MAP_DEPTH.min(y.len() - 1);
    let neighbors = ranked_neighbors(embeddings, k);
    let total: f64 = (0..y.len())
        .map(|q| same_class_hits(&neighbors[q], y, q, k) as f64 / k as f64)
        .sum();
    Ok(total / y.len() as f64)
}

pub const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().expect("at least one assignment step")
    }
}

fn nearest_centroid(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(x, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding. Stops at an assignment fixpoint
/// or after [`KMEANS_MAX_ITER`] iterations. Empty clusters keep their
/// previous centroid.
pub fn kmeans_cluster(embeddings: &EmbeddingMatrix, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = embeddings.rows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot form {k} clusters from {n} points")));
    }
    let mut r = rng::seeded(seed);
    let first = sample_index(&vec![1.0 / n as f64; n], &mut r);
    let mut chosen = vec![first];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(embeddings.row(i), embeddings.row(first))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            sample_index(&d2.iter().map(|v| v / total).collect::<Vec<_>>(), &mut r)
        } else {
            // every point coincides with a centroid: take the first unused one
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(embeddings.row(i), embeddings.row(next)));
        }
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| embeddings.row(i).to_vec()).collect();
    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for i in 0..n {
            let (c, d) = nearest_centroid(embeddings.row(i), &centroids);
            inertia += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        trace.push(inertia);
        if !changed {
            break;
        }
        let dim = embeddings.dim();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assignments[i]] += 1;
            for (s, v) in sums[assignments[i]].iter_mut().zip(embeddings.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia_trace: trace,
        iterations,
    })
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `2 I / (H(a) + H(b))`; two constant
/// partitions score 1.
pub fn nmi(assignments: &[usize], labels: &[u32]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: assignments.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::invalid("nmi of empty partitions"));
    }
    let n = labels.len() as f64;
    let mut joint: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cb: BTreeMap<u32, usize> = BTreeMap::new();
    for (&a, &b) in assignments.iter().zip(labels) {
        *joint.entry((a, b)).or_insert(0) += 1;
        *ca.entry(a).or_insert(0) += 1;
        *cb.entry(b).or_insert(0) += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    if ha + hb == 0.0 {
        return Ok(1.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(a, b), &c)| {
            let pab = c as f64 / n;
            pab * (pab * n * n / (ca[&a] as f64 * cb[&b] as f64)).ln()
        })
        .sum();
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub nmi: f64,
    pub f1: f64,
    pub map_at_c: f64,
    pub map_at_1000: f64,
    /// Queries without class mates, scored 0 by mAP@C.
    pub map_at_c_undefined: usize,
}

impl MetricReport {
    /// Every metric on one embedding set; NMI clusters with K = number of
    /// classes. `ks` at or beyond `n` are skipped.
    pub fn compute(embeddings: &EmbeddingMatrix, labels: &LabelVector, ks: &[usize], seed: u64) -> Result<Self> {
        check(embeddings, labels)?;
        let n = embeddings.rows();
        let ks: Vec<usize> = ks.iter().copied().filter(|&k| k >= 1 && k < n).collect();
        let depth = ks.iter().copied().max().unwrap_or(1);
        let neighbors = ranked_neighbors(embeddings, depth);
        let recall_at = ks
            .iter()
            .map(|&k| (k, recall_from(&neighbors, labels.as_slice(), k)))
            .collect();
        let clusters = kmeans_cluster(embeddings, labels.num_classes(), seed)?;
        let map_c = map_at_c(embeddings, labels)?;
        Ok(Self {
            recall_at,
            nmi: nmi(&clusters.assignments, labels.as_slice())?,
            f1: f1_score(embeddings, labels)?,
            map_at_c: map_c.value,
            map_at_1000: map_at_1000(embeddings, labels)?,
            map_at_c_undefined: map_c.undefined_queries,
        })
    }

    /// Flat `(name, value)` list in a fixed order.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self.recall_at.iter().map(|(k, v)| (format!("recall@{k}"), *v)).collect();
        out.push(("nmi".into(), self.nmi));
        out.push(("f1".into(), self.f1));
        out.push(("map@c".into(), self.map_at_c));
        out.push(("map@1000".into(), self.map_at_1000));
        out
    }

    /// One `metric=value` line per metric.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            writeln!(s, "{k}={v}").unwrap();
        }
        writeln!(s, "map@c_undefined={}", self.map_at_c_undefined).unwrap();
        s
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut r = MetricReport {
            recall_at: BTreeMap::new(),
            nmi: f64::NAN,
            f1: f64::NAN,
            map_at_c: f64::NAN,
            map_at_1000: f64::NAN,
            map_at_c_undefined: 0,
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| Error::Config {
                line: i + 1,
                message: m.to_string(),
            };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key=value"))?;
            if key == "map@c_undefined" {
                r.map_at_c_undefined = value.parse().map_err(|_| err("bad count"))?;
                continue;
            }
            let v: f64 = value.parse().map_err(|_| err("bad number"))?;
            match key {
                "nmi" => r.nmi = v,
                "f1" => r.f1 = v,
                "map@c" => r.map_at_c = v,
                "map@1000" => r.map_at_1000 = v,
                _ => {
                    let k = key
                        .strip_prefix("recall@")
                        .and_then(|k| k.parse().ok())
                        .ok_or_else(|| err(&format!("unknown metric {key}")))?;
                    r.recall_at.insert(k, v);
                }
            }
        }
        if [r.nmi, r.f1, r.map_at_c, r.map_at_1000].iter().any(|v| v.is_nan()) {
            return Err(Error::Format("metric report is missing entries".into()));
        }
        Ok(r)
    }
}

/// Pearson correlation; `None` when either column is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    /// Row-major `names.len()` squared.
    pub values: Vec<f64>,
    /// Columns that were constant across runs; their correlations read 0.
    pub constant: Vec<bool>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.names.len() + j]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("metric,{}\n", self.names.join(","));
        for (i, name) in self.names.iter().enumerate() {
            let row: Vec<String> = (0..self.names.len()).map(|j| format!("{}", self.get(i, j))).collect();
            writeln!(s, "{name},{}", row.join(",")).unwrap();
        }
        s
    }
}

/// Pairwise Pearson correlations between named columns observed across runs.
pub fn correlation_matrix(names: Vec<String>, columns: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    if names.len() != columns.len() {
        return Err(Error::DimensionMismatch {
            expected: names.len(),
            found: columns.len(),
        });
    }
    let runs = columns.first().map_or(0, Vec::len);
    if runs < 3 {
        return Err(Error::invalid(format!("correlations need at least 3 runs, got {runs}")));
    }
    if columns.iter().any(|c| c.len() != runs) {
        return Err(Error::invalid("every column needs one value per run"));
    }
    let m = names.len();
    let constant: Vec<bool> = columns.iter().map(|c| c.iter().all(|&v| v == c[0])).collect();
    let mut values = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            values[i * m + j] = if i == j {
                1.0
            } else {
                pearson(&columns[i], &columns[j]).unwrap_or(0.0)
            };
        }
    }
    Ok(CorrelationMatrix {
        names,
        values,
        constant,
    })
}

/// Correlations between every retrieval metric and, where given, the
/// spectral decay and density measures of the same runs.
pub fn metric_correlation_matrix(
    metrics: &[MetricReport],
    spectral: &[SpectralReport],
    density: &[DensityReport],
) -> Result<CorrelationMatrix> {
    for (what, len) in [("spectral", spectral.len()), ("density", density.len())] {
        if len != 0 && len != metrics.len() {
            return Err(Error::invalid(format!(
                "{what} reports must match the {} metric reports",
                metrics.len()
            )));
        }
    }
    let first = metrics.first().ok_or_else(|| Error::invalid("no runs"))?;
    let mut names: Vec<String> = first.entries().into_iter().map(|(k, _)| k).collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for m in metrics {
        let e = m.entries();
        if e.len() != names.len() || e.iter().zip(&names).any(|((k, _), n)| k != n) {
            return Err(Error::invalid("metric reports disagree on recall depths"));
        }
        for (c, (_, v)) in columns.iter_mut().zip(e) {
            c.push(v);
        }
    }
    if !spectral.is_empty() {
        names.push("rho".into());
        columns.push(spectral.iter().map(|s| s.rho).collect());
    }
    if !density.is_empty() {
        for (name, f) in [
            ("pi_intra", (|d: &DensityReport| d.pi_intra) as fn(&DensityReport) -> f64),
            ("pi_inter", |d| d.pi_inter),
            ("pi_ratio", |d| d.pi_ratio),
        ] {
            names.push(name.into());
            columns.push(density.iter().map(f).collect());
        }
    }
    correlation_matrix(names, &columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clustered() -> (EmbeddingMatrix, LabelVector) {
        let e = EmbeddingMatrix::from_rows(&[
            [1.0, 0.0],
            [0.99, 0.01],
            [0.98, 0.02],
            [-1.0, 0.0],
            [-0.99, 0.01],
            [-0.98, -0.02],
        ])
        .unwrap();
        (e, LabelVector::new(vec![0, 0, 0, 1, 1, 1]))
    }

    #[test]
    fn recall_examples() {
        let e = EmbeddingMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]).unwrap();
        let l = LabelVector::new(vec![0, 0, 1, 1]);
        assert_eq!(recall_at_k(&e, &l, 1).unwrap(), 1.0);
        let (e, l) = clustered();
        assert_eq!(recall_at_k(&e, &l, 1).unwrap(), 1.0);
        assert!(recall_at_k(&e, &l, 6).is_err());
        assert_eq!(recall_at_k(&e, &l, 5).unwrap(), 1.0);
    }

    #[test]
    fn perfect_clusters_score_one() {
        let (e, l) = clustered();
        assert_eq!(f1_score(&e, &l).unwrap(), 1.0);
        assert_eq!(map_at_c(&e, &l).unwrap().value, 1.0);
        let r = MetricReport::compute(&e, &l, &[1, 2, 4], 0).unwrap();
        assert_eq!(r.nmi, 1.0);
        // depth n - 1 = 5 reaches both other classes' members
        assert!((r.map_at_1000 - 2.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn f1_query_without_hits_scores_zero() {
        let e = EmbeddingMatrix::from_rows(&[[0.0], [1.0], [10.0], [11.0]]).unwrap();
        // classes interleaved so nobody retrieves its mate first
        let l = LabelVector::new(vec![0, 1, 0, 1]);
        assert_eq!(f1_score(&e, &l).unwrap(), 0.0);
    }

    #[test]
    fn map_singletons_flagged() {
        let e = EmbeddingMatrix::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
        let s = map_at_c(&e, &LabelVector::new(vec![0, 1, 2])).unwrap();
        assert_eq!((s.value, s.undefined_queries), (0.0, 3));
    }

    #[test]
    fn kmeans_examples() {
        let (e, l) = clustered();
        let km = kmeans_cluster(&e, 2, 3).unwrap();
        assert_eq!(nmi(&km.assignments, l.as_slice()).unwrap(), 1.0);
        let all = kmeans_cluster(&e, 6, 3).unwrap();
        assert_eq!(all.inertia(), 0.0);
        let mut a = all.assignments.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3, 4, 5]);
        assert!(kmeans_cluster(&e, 7, 0).is_err());
    }

    #[test]
    fn nmi_examples() {
        assert_eq!(nmi(&[0, 0, 1, 1], &[5, 5, 7, 7]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert!(nmi(&[0, 1], &[0]).is_err());
        let v = nmi(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn report_round_trip() {
        let (e, l) = clustered();
        let r = MetricReport::compute(&e, &l, &[1, 2], 1).unwrap();
        let back = MetricReport::from_key_values(&r.to_key_values()).unwrap();
        assert_eq!(r, back);
        assert!(MetricReport::from_key_values("nmi=0.5\n").is_err());
    }

    #[test]
    fn correlation_examples() {
        let x = vec![1.0, 2.0, 4.0, 3.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let c = correlation_matrix(vec!["x".into(), "nx".into(), "c".into()], &[x, neg, vec![1.0; 4]]).unwrap();
        assert_eq!(c.get(0, 0), 1.0);
        assert!((c.get(0, 1) + 1.0).abs() < 1e-15);
        assert_eq!(c.get(0, 2), 0.0);
        assert_eq!(c.constant, vec![false, false, true]);
        assert!(correlation_matrix(vec!["a".into()], &[vec![1.0, 2.0]]).is_err());
    }
}
