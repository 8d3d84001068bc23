//! Dense row-major embedding storage and the elementary numerics shared by
//! every stage: L2 normalization, cosine similarity and softmax.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::scalar::{dot_f64, Scalar};
use crate::{Error, Result};

/// Rows whose norm falls below this are rejected by [`l2_normalize`].
pub const ZERO_NORM: f64 = 1e-12;

/// Allowed deviation from unit norm for rows of a normalized matrix.
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// One row per image or keyword, each tagged with an opaque identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    ids: Vec<String>,
    dim: usize,
    values: Vec<T>,
    normalized: bool,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    /// Validates shape, id uniqueness and finiteness.
    pub fn new(ids: Vec<String>, dim: usize, values: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
        }
        if values.len() != ids.len() * dim {
            return Err(Error::LengthMismatch {
                what: "embedding values",
                expected: ids.len() * dim,
                found: values.len(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for (row, chunk) in values.chunks_exact(dim).enumerate() {
            if chunk.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row });
            }
        }
        Ok(Self {
            ids,
            dim,
            values,
            normalized: false,
        })
    }

    /// Builds a matrix from row vectors; every row must have the same length.
    pub fn from_rows(ids: Vec<String>, rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(ids, dim, values)
    }

    /// Rows named `row0`, `row1`, ... for tests and fixtures.
    pub fn from_rows_anonymous(rows: &[Vec<T>]) -> Result<Self> {
        let ids = (0..rows.len()).map(|i| format!("row{i}")).collect();
        Self::from_rows(ids, rows)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Copies the given rows, in the given order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut ids = Vec::with_capacity(indices.len());
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.rows() {
                return Err(Error::InvalidParameter(format!(
                    "row index {i} out of range for {} rows",
                    self.rows()
                )));
            }
            ids.push(self.ids[i].clone());
            values.extend_from_slice(self.row(i));
        }
        let mut out = Self::new(ids, self.dim, values)?;
        out.normalized = self.normalized;
        Ok(out)
    }

    /// Converts the storage type, widening or narrowing each value.
    pub fn cast<U: Scalar>(&self) -> EmbeddingMatrix<U> {
        EmbeddingMatrix {
            ids: self.ids.clone(),
            dim: self.dim,
            values: self
                .values
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossless()))
                .collect(),
            normalized: self.normalized,
        }
    }

    pub fn into_parts(self) -> (Vec<String>, usize, Vec<T>) {
        (self.ids, self.dim, self.values)
    }
}

/// Cosine scores between every image and every keyword, row-major
/// `n_images x n_keywords`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<T> {
    n_images: usize,
    n_keywords: usize,
    scores: Vec<T>,
}

impl<T: Scalar> SimilarityMatrix<T> {
    /// Entries must be finite and lie in `[-1, 1]`.
    pub fn new(n_images: usize, n_keywords: usize, scores: Vec<T>) -> Result<Self> {
        if scores.len() != n_images * n_keywords {
            return Err(Error::LengthMismatch {
                what: "similarity scores",
                expected: n_images * n_keywords,
                found: scores.len(),
            });
        }
        for (i, v) in scores.iter().enumerate() {
            let v = v.to_f64_lossless();
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "similarity entry {i} = {v} outside [-1, 1]"
                )));
            }
        }
        Ok(Self {
            n_images,
            n_keywords,
            scores,
        })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n_keywords = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n_keywords) {
            return Err(Error::InvalidParameter("ragged similarity rows".into()));
        }
        Self::new(rows.len(), n_keywords, rows.concat())
    }

    pub fn n_images(&self) -> usize {
        self.n_images
    }

    pub fn n_keywords(&self) -> usize {
        self.n_keywords
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.scores[i * self.n_keywords..(i + 1) * self.n_keywords]
    }

    pub fn get(&self, image: usize, keyword: usize) -> T {
        self.scores[image * self.n_keywords + keyword]
    }

    /// Restricts to a subset of images, keeping their order.
    pub fn select_images(&self, images: &[usize]) -> Self {
        let mut scores = Vec::with_capacity(images.len() * self.n_keywords);
        for &i in images {
            scores.extend_from_slice(self.row(i));
        }
        Self {
            n_images: images.len(),
            n_keywords: self.n_keywords,
            scores,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut scores = Vec::with_capacity(self.scores.len());
        for j in 0..self.n_keywords {
            for i in 0..self.n_images {
                scores.push(self.get(i, j));
            }
        }
        Self {
            n_images: self.n_keywords,
            n_keywords: self.n_images,
            scores,
        }
    }
}

/// Divides every row by its Euclidean norm.
pub fn l2_normalize<T: Scalar>(m: &EmbeddingMatrix<T>) -> Result<EmbeddingMatrix<T>> {
    let mut values = Vec::with_capacity(m.values.len());
    for (i, row) in m.iter_rows().enumerate() {
        let norm = dot_f64(row, row).sqrt();
        if norm < ZERO_NORM {
            return Err(Error::ZeroRow(i));
        }
        values.extend(
            row.iter()
                .map(|&v| T::from_f64_lossy(v.to_f64_lossless() / norm)),
        );
    }
    Ok(EmbeddingMatrix {
        ids: m.ids.clone(),
        dim: m.dim,
        values,
        normalized: true,
    })
}

fn ensure_normalized<T: Scalar>(m: &EmbeddingMatrix<T>) -> Result<std::borrow::Cow<'_, EmbeddingMatrix<T>>> {
    if m.normalized {
        Ok(std::borrow::Cow::Borrowed(m))
    } else {
        l2_normalize(m).map(std::borrow::Cow::Owned)
    }
}

/// Full `images x keywords` cosine matrix.
///
/// Inputs that are not flagged as normalized are normalized first. Scores
/// are clamped to `[-1, 1]` so rounding overshoot cannot perturb rank ties.
pub fn cosine_similarity<T: Scalar>(
    images: &EmbeddingMatrix<T>,
    keywords: &EmbeddingMatrix<T>,
) -> Result<SimilarityMatrix<T>> {
    if images.dim != keywords.dim {
        return Err(Error::DimensionMismatch {
            expected: images.dim,
            found: keywords.dim,
        });
    }
    let images = ensure_normalized(images)?;
    let keywords = ensure_normalized(keywords)?;
    let n_keywords = keywords.rows();
    let mut scores = vec![T::zero(); images.rows() * n_keywords];
    if n_keywords > 0 {
        scores
            .par_chunks_mut(n_keywords)
            .zip(images.values.par_chunks(images.dim))
            .for_each(|(out, img)| {
                for (o, kw) in out.iter_mut().zip(keywords.iter_rows()) {
                    *o = T::from_f64_lossy(dot_f64(img, kw).clamp(-1.0, 1.0));
                }
            });
    }
    Ok(SimilarityMatrix {
        n_images: images.rows(),
        n_keywords,
        scores,
    })
}

/// Numerically stable softmax at the given temperature, computed in `f64`.
pub fn softmax<T: Scalar>(scores: &[T], temperature: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let scaled: Vec<f64> = scores
        .iter()
        .map(|s| s.to_f64_lossless() / temperature)
        .collect();
    if scaled.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: 0 });
    }
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}
