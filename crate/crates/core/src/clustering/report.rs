use serde::Serialize;

use crate::retrieval::{aggregate_ranks, descending_order, RankMatrix, SelectedKeyword};
use crate::woi::WoiPool;
use crate::{Error, Result};

pub const DEFAULT_TOP_KEYWORDS: usize = 5;

/// Largest `k` accepted by [`match_clusters_to_labels`].
pub const MAX_MATCH_K: usize = 20;

/// Percentage of each class within each cluster, `k x n_classes`.
///
/// Rows of empty clusters are all zero.
pub fn cluster_composition(
    assignments: &[usize],
    labels: &[usize],
    k: usize,
    n_classes: usize,
) -> Result<Vec<Vec<f64>>> {
    if assignments.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: assignments.len(),
            found: labels.len(),
        });
    }
    let counts = contingency(assignments, labels, k, n_classes)?;
    Ok(counts
        .into_iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.into_iter()
                .map(|c| if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 })
                .collect()
        })
        .collect())
}

/// `counts[cluster][class]`.
pub fn contingency(
    assignments: &[usize],
    labels: &[usize],
    k: usize,
    n_classes: usize,
) -> Result<Vec<Vec<usize>>> {
    let mut counts = vec![vec![0usize; n_classes]; k];
    for (&a, &y) in assignments.iter().zip(labels) {
        if a >= k || y >= n_classes {
            return Err(Error::InvalidParameter(format!(
                "cluster {a} / class {y} outside {k} x {n_classes}"
            )));
        }
        counts[a][y] += 1;
    }
    Ok(counts)
}

/// For each cluster, the `top_k` keywords with the highest mean rank over
/// the cluster's members.
pub fn top_keywords_per_cluster(
    ranks: &RankMatrix,
    assignments: &[usize],
    k: usize,
    pool: &WoiPool,
    top_k: usize,
) -> Result<Vec<Vec<SelectedKeyword>>> {
    if assignments.len() != ranks.n_images() {
        return Err(Error::LengthMismatch {
            what: "assignments",
            expected: ranks.n_images(),
            found: assignments.len(),
        });
    }
    if pool.len() != ranks.n_keywords() {
        return Err(Error::PoolEmbeddingMismatch {
            pool: pool.len(),
            embeddings: ranks.n_keywords(),
        });
    }
    Ok((0..k)
        .map(|c| {
            let members: Vec<usize> = (0..assignments.len()).filter(|&i| assignments[i] == c).collect();
            if members.is_empty() {
                return Vec::new();
            }
            let mean = aggregate_ranks(&ranks.select_images(&members));
            descending_order(&mean)
                .into_iter()
                .take(top_k)
                .map(|j| {
                    let kw = pool.get(j);
                    SelectedKeyword {
                        index: j,
                        cui: kw.cui.clone(),
                        text: kw.text.clone(),
                        mean_rank: mean[j],
                    }
                })
                .collect()
        })
        .collect())
}

/// Bijection from clusters to classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterMatching {
    /// `mapping[cluster] = class`.
    pub mapping: Vec<usize>,
    pub agreement: usize,
    pub total: usize,
}

impl ClusterMatching {
    pub fn agreement_ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.agreement as f64 / self.total as f64
        }
    }

    /// Class label implied for each sample.
    pub fn relabel(&self, assignments: &[usize]) -> Vec<usize> {
        assignments.iter().map(|&a| self.mapping[a]).collect()
    }
}

/// Optimal one-to-one matching of clusters to classes, maximizing the
/// number of samples whose cluster maps to their class.
///
/// Solved exactly by dynamic programming over class subsets; among optimal
/// mappings the lexicographically smallest is returned.
pub fn match_clusters_to_labels(
    assignments: &[usize],
    labels: &[usize],
    k: usize,
    n_classes: usize,
) -> Result<ClusterMatching> {
    if k != n_classes {
        return Err(Error::KClassMismatch { k, classes: n_classes });
    }
    if k > MAX_MATCH_K {
        return Err(Error::InvalidParameter(format!(
            "cluster matching supports at most {MAX_MATCH_K} clusters"
        )));
    }
    let counts = contingency(assignments, labels, k, n_classes)?;
    let full = 1usize << k;
    // best[mask]: optimal agreement for clusters popcount(mask)..k given the
    // classes in `mask` are taken
    let mut best = vec![0usize; full];
    for mask in (0..full).rev() {
        let cluster = mask.count_ones() as usize;
        if cluster == k {
            continue;
        }
        best[mask] = (0..k)
            .filter(|&y| mask & (1 << y) == 0)
            .map(|y| counts[cluster][y] + best[mask | (1 << y)])
            .max()
            .unwrap_or(0);
    }
    let mut mapping = Vec::with_capacity(k);
    let mut mask = 0usize;
    for cluster in 0..k {
        let y = (0..k)
            .find(|&y| mask & (1 << y) == 0 && counts[cluster][y] + best[mask | (1 << y)] == best[mask])
            .expect("an optimal continuation exists");
        mapping.push(y);
        mask |= 1 << y;
    }
    Ok(ClusterMatching {
        mapping,
        agreement: best[0],
        total: assignments.len(),
    })
}
