//! Image-to-text retrieval and text-based image embeddings.
//!
//! Pipeline: cosine similarity between every image and every pool keyword,
//! per-image ranking, corpus-level mean ranks, top-M refinement, then a
//! softmax-weighted sum of the selected keyword embeddings per image.
//!
//! Ties are always broken by ascending keyword position, which is ascending
//! CUI for pools built by [`crate::woi`].

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::scalar::Scalar;
use crate::tensor::{cosine_similarity, l2_normalize, softmax, EmbeddingMatrix, SimilarityMatrix};
use crate::woi::WoiPool;
use crate::{Error, Result};

/// Refined pool size used when none is configured.
pub const DEFAULT_M: usize = 1000;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// Per-image keyword ranks, 1-based. Rank `n_keywords` is the most similar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankMatrix {
    n_images: usize,
    n_keywords: usize,
    ranks: Vec<u32>,
}

impl RankMatrix {
    pub fn n_images(&self) -> usize {
        self.n_images
    }

    pub fn n_keywords(&self) -> usize {
        self.n_keywords
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.ranks[i * self.n_keywords..(i + 1) * self.n_keywords]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.ranks
    }

    /// Keeps only the given image rows.
    pub fn select_images(&self, images: &[usize]) -> RankMatrix {
        let mut ranks = Vec::with_capacity(images.len() * self.n_keywords);
        for &i in images {
            ranks.extend_from_slice(self.row(i));
        }
        RankMatrix {
            n_images: images.len(),
            n_keywords: self.n_keywords,
            ranks,
        }
    }
}

/// The refined pool: indices into the original keyword list, ordered by
/// descending mean rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedSelection {
    pub selected: Vec<usize>,
    pub mean_ranks: Vec<f64>,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingSet<T> {
    /// One text-based embedding per image.
    pub embeddings: EmbeddingMatrix<T>,
    /// Row-major `n_images x selected.len()` softmax weights.
    pub weights: Vec<f64>,
    pub selection: RefinedSelection,
}

impl<T: Scalar> TextEmbeddingSet<T> {
    pub fn n_selected(&self) -> usize {
        self.selection.selected.len()
    }

    pub fn weight_row(&self, image: usize) -> &[f64] {
        let m = self.n_selected();
        &self.weights[image * m..(image + 1) * m]
    }

    /// Pool index of the keyword carrying the largest weight for `image`.
    pub fn top_keyword(&self, image: usize) -> usize {
        let row = self.weight_row(image);
        let best = argmax_first(row);
        self.selection.selected[best]
    }

    /// Weights as an embedding matrix (ids from the images, one column per
    /// selected keyword) for the binary companion file.
    pub fn weights_matrix(&self) -> Result<EmbeddingMatrix<T>> {
        EmbeddingMatrix::new(
            self.embeddings.ids().to_vec(),
            self.n_selected(),
            self.weights.iter().map(|&w| T::from_f64_lossy(w)).collect(),
        )
    }

    /// Rescales every embedding row to unit length.
    pub fn renormalized(&self) -> Result<Self> {
        Ok(Self {
            embeddings: l2_normalize(&self.embeddings)?,
            weights: self.weights.clone(),
            selection: self.selection.clone(),
        })
    }
}

fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &w) in row.iter().enumerate() {
        if w > row[best] {
            best = j;
        }
    }
    best
}

/// Ranks keywords per image: ascending similarity gets ascending rank, exact
/// ties go to the earlier keyword first.
pub fn rank_keywords<T: Scalar>(s: &SimilarityMatrix<T>) -> RankMatrix {
    rank_rows(s.n_keywords(), s.scores())
}

/// [`rank_keywords`] over arbitrary finite scores, row-major with
/// `n_keywords` columns. Ranks depend only on the order of the scores.
pub fn rank_scores<T: Scalar>(n_keywords: usize, scores: &[T]) -> Result<RankMatrix> {
    if n_keywords == 0 || scores.len() % n_keywords != 0 {
        return Err(Error::InvalidParameter(format!(
            "{} scores do not fill rows of {n_keywords}",
            scores.len()
        )));
    }
    if let Some(pos) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: pos / n_keywords });
    }
    Ok(rank_rows(n_keywords, scores))
}

fn rank_rows<T: Scalar>(n_keywords: usize, scores: &[T]) -> RankMatrix {
    let n_images = if n_keywords == 0 { 0 } else { scores.len() / n_keywords };
    let mut ranks = vec![0u32; n_images * n_keywords];
    if n_keywords > 0 {
        ranks
            .par_chunks_mut(n_keywords)
            .zip(scores.par_chunks(n_keywords))
            .for_each(|(out, row)| {
                let mut order: Vec<usize> = (0..n_keywords).collect();
                order.sort_by(|&a, &b| {
                    row[a]
                        .partial_cmp(&row[b])
                        .unwrap_or(Ordering::Equal)
                        .then(a.cmp(&b))
                });
                for (pos, &j) in order.iter().enumerate() {
                    out[j] = (pos + 1) as u32;
                }
            });
    }
    RankMatrix {
        n_images,
        n_keywords,
        ranks,
    }
}

/// Mean rank of every keyword over all images.
pub fn aggregate_ranks(r: &RankMatrix) -> Vec<f64> {
    let mut sums = vec![0u64; r.n_keywords];
    for i in 0..r.n_images {
        for (acc, &v) in sums.iter_mut().zip(r.row(i)) {
            *acc += v as u64;
        }
    }
    let n = r.n_images.max(1) as f64;
    sums.into_iter().map(|s| s as f64 / n).collect()
}

/// Indices ordered by descending score, ties by ascending index.
pub(crate) fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Top-`m` keywords by mean rank. `m` larger than the pool selects all.
pub fn select_top_m(mean_ranks: &[f64], m: usize) -> Result<RefinedSelection> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    let mut selected = descending_order(mean_ranks);
    selected.truncate(m.min(mean_ranks.len()));
    Ok(RefinedSelection {
        selected,
        mean_ranks: mean_ranks.to_vec(),
        m,
    })
}

/// Softmax-weighted sum of the selected keyword embeddings per image.
///
/// Weights come from the raw cosine scores restricted to the selection.
/// Keyword rows are L2-normalized first if the matrix is not flagged as
/// normalized. The result is not renormalized; see
/// [`TextEmbeddingSet::renormalized`].
pub fn text_based_embeddings<T: Scalar>(
    s: &SimilarityMatrix<T>,
    sel: &RefinedSelection,
    keywords: &EmbeddingMatrix<T>,
    image_ids: &[String],
    temperature: f64,
) -> Result<TextEmbeddingSet<T>> {
    if keywords.rows() != s.n_keywords() {
        return Err(Error::DimensionMismatch {
            expected: s.n_keywords(),
            found: keywords.rows(),
        });
    }
    if image_ids.len() != s.n_images() {
        return Err(Error::LengthMismatch {
            what: "image ids",
            expected: s.n_images(),
            found: image_ids.len(),
        });
    }
    if sel.selected.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(&bad) = sel.selected.iter().find(|&&j| j >= s.n_keywords()) {
        return Err(Error::InvalidParameter(format!(
            "selected keyword {bad} out of range for {} keywords",
            s.n_keywords()
        )));
    }
    let normalized;
    let keywords = if keywords.is_normalized() {
        keywords
    } else {
        normalized = l2_normalize(keywords)?;
        &normalized
    };
    let dim = keywords.dim();
    let m = sel.selected.len();

    let per_image: Vec<(Vec<f64>, Vec<T>)> = (0..s.n_images())
        .into_par_iter()
        .map(|i| {
            let restricted: Vec<T> = sel.selected.iter().map(|&j| s.get(i, j)).collect();
            let weights = softmax(&restricted, temperature)?;
            let mut acc = vec![0.0f64; dim];
            for (&w, &j) in weights.iter().zip(&sel.selected) {
                for (a, &v) in acc.iter_mut().zip(keywords.row(j)) {
                    *a += w * v.to_f64_lossless();
                }
            }
            Ok((weights, acc.into_iter().map(T::from_f64_lossy).collect()))
        })
        .collect::<Result<_>>()?;

    let mut weights = Vec::with_capacity(s.n_images() * m);
    let mut values = Vec::with_capacity(s.n_images() * dim);
    for (w, e) in per_image {
        weights.extend(w);
        values.extend(e);
    }
    Ok(TextEmbeddingSet {
        embeddings: EmbeddingMatrix::new(image_ids.to_vec(), dim, values)?,
        weights,
        selection: sel.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantifyConfig {
    pub m: usize,
    pub temperature: f64,
    /// Image rows whose ranks drive the refinement; `None` uses every image.
    pub selection_subset: Option<Vec<usize>>,
    pub renormalize: bool,
}

impl Default for QuantifyConfig {
    fn default() -> Self {
        Self {
            m: DEFAULT_M,
            temperature: DEFAULT_TEMPERATURE,
            selection_subset: None,
            renormalize: false,
        }
    }
}

/// Everything produced by [`quantify`].
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult<T> {
    pub similarity: SimilarityMatrix<T>,
    pub ranks: RankMatrix,
    pub text: TextEmbeddingSet<T>,
}

/// End-to-end text-based quantification of `images` against `pool`.
///
/// `keyword_embeddings` row `j` must embed `pool.get(j)`.
pub fn quantify<T: Scalar>(
    images: &EmbeddingMatrix<T>,
    pool: &WoiPool,
    keyword_embeddings: &EmbeddingMatrix<T>,
    config: &QuantifyConfig,
) -> Result<RetrievalResult<T>> {
    if pool.len() != keyword_embeddings.rows() {
        return Err(Error::PoolEmbeddingMismatch {
            pool: pool.len(),
            embeddings: keyword_embeddings.rows(),
        });
    }
    let keywords = l2_normalize(keyword_embeddings)?;
    let similarity = cosine_similarity(images, &keywords)?;
    let ranks = rank_keywords(&similarity);
    let mean_ranks = match &config.selection_subset {
        Some(subset) => {
            if subset.is_empty() || subset.iter().any(|&i| i >= images.rows()) {
                return Err(Error::InvalidParameter("selection subset is empty or out of range".into()));
            }
            aggregate_ranks(&ranks.select_images(subset))
        }
        None => aggregate_ranks(&ranks),
    };
    let selection = select_top_m(&mean_ranks, config.m)?;
    let mut text = text_based_embeddings(&similarity, &selection, &keywords, images.ids(), config.temperature)?;
    if config.renormalize {
        text = text.renormalized()?;
    }
    Ok(RetrievalResult {
        similarity,
        ranks,
        text,
    })
}

/// Reorders keyword embeddings so row `j` matches `pool.get(j)`, looking
/// rows up by CUI.
pub fn align_to_pool<T: Scalar>(pool: &WoiPool, embeddings: &EmbeddingMatrix<T>) -> Result<EmbeddingMatrix<T>> {
    let index: std::collections::HashMap<&str, usize> = embeddings
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let rows = pool
        .cuis()
        .map(|cui| {
            index
                .get(cui)
                .copied()
                .ok_or_else(|| Error::MissingKeywordEmbedding(cui.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    embeddings.select_rows(&rows)
}

/// A selected keyword with its provenance, in descending mean-rank order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectedKeyword {
    pub index: usize,
    pub cui: String,
    pub text: String,
    pub mean_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub m: usize,
    pub selected: Vec<SelectedKeyword>,
}

impl RefinedSelection {
    pub fn report(&self, pool: &WoiPool) -> SelectionReport {
        SelectionReport {
            m: self.m,
            selected: self
                .selected
                .iter()
                .map(|&index| {
                    let kw = pool.get(index);
                    SelectedKeyword {
                        index,
                        cui: kw.cui.clone(),
                        text: kw.text.clone(),
                        mean_rank: self.mean_ranks[index],
                    }
                })
                .collect(),
        }
    }
}
