//! Embedding containers, label vectors and the Euclidean/cosine geometry
//! shared by every other module.
//!
//! Storage is row-major with one sample per row. All scalars are `f64`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Tolerance used when validating a `normalized` flag supplied by the caller.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// An `n x d` matrix of embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major data. Entries must be finite.
    pub fn new(data: Vec<f64>, rows: usize, dim: usize) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::invalid("embedding matrix needs n >= 1 and d >= 1"));
        }
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                expected: rows * dim,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self {
            data,
            rows,
            dim,
            normalized: false,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::invalid("embedding matrix needs at least one row"))?;
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(data, rows.len(), dim)
    }

    /// Builds a matrix and asserts that its rows are unit-normalized
    /// (within [`NORM_TOLERANCE`]).
    pub fn new_normalized(data: Vec<f64>, rows: usize, dim: usize) -> Result<Self> {
        let mut m = Self::new(data, rows, dim)?;
        m.check_unit_rows()?;
        m.normalized = true;
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Returns a new matrix holding the given rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.rows,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        let mut m = Self::new(data, indices.len(), self.dim)?;
        m.normalized = self.normalized;
        Ok(m)
    }

    /// Verifies every row has unit norm within [`NORM_TOLERANCE`].
    pub fn check_unit_rows(&self) -> Result<()> {
        for (i, r) in self.iter_rows().enumerate() {
            let norm = l2_norm(r);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::NotNormalized { row: i, norm });
            }
        }
        Ok(())
    }

    /// Applies `f` to every entry, dropping the normalized flag.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.data.iter().map(|&v| f(v)).collect(), self.rows, self.dim)
    }
}

/// Class ids aligned with the rows of an [`EmbeddingMatrix`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelVector(Vec<u32>);

impl LabelVector {
    pub fn new(labels: Vec<u32>) -> Self {
        Self(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, i: usize) -> u32 {
        self.0[i]
    }

    /// Distinct class ids in ascending order.
    pub fn classes(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.0.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn num_classes(&self) -> usize {
        self.classes().len()
    }

    /// Map from class id to the row indices carrying it (ascending).
    pub fn class_members(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &y) in self.0.iter().enumerate() {
            map.entry(y).or_default().push(i);
        }
        map
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self(indices.iter().map(|&i| self.0[i]).collect())
    }

    pub(crate) fn check_len(&self, rows: usize) -> Result<()> {
        if self.0.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                found: self.0.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn require_classes(&self, needed: usize) -> Result<()> {
        let found = self.num_classes();
        if found < needed {
            return Err(Error::TooFewClasses { needed, found });
        }
        Ok(())
    }
}

impl From<Vec<u32>> for LabelVector {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    for (col, v) in a.iter().chain(b).enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                row: col / a.len().max(1),
                col: col % a.len().max(1),
            });
        }
    }
    Ok(())
}

/// Euclidean distance `||a - b||_2`.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(sq_dist(a, b).sqrt())
}

/// Cosine similarity of two unit vectors, i.e. their inner product.
///
/// Both inputs must have unit norm within [`NORM_TOLERANCE`].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    for (row, v) in [a, b].into_iter().enumerate() {
        let norm = l2_norm(v);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized { row, norm });
        }
    }
    Ok(dot(a, b).clamp(-1.0, 1.0))
}

/// Scales each row to unit Euclidean norm.
pub fn normalize_rows(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut data = Vec::with_capacity(m.data.len());
    for (i, r) in m.iter_rows().enumerate() {
        let norm = l2_norm(r);
        if norm == 0.0 {
            return Err(Error::ZeroNorm { row: i });
        }
        data.extend(r.iter().map(|v| v / norm));
    }
    Ok(EmbeddingMatrix {
        data,
        rows: m.rows,
        dim: m.dim,
        normalized: true,
    })
}

/// Dense symmetric `n x n` distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// All pairwise Euclidean distances between the rows of `m`.
pub fn pairwise_distances(m: &EmbeddingMatrix) -> DistanceMatrix {
    let n = m.rows();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(m.row(i), m.row(j)).sqrt();
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    DistanceMatrix { n, data }
}
