//! K-Means clustering of embeddings and the reports built on top of it.

mod kmeans;
mod report;
mod silhouette;

pub use kmeans::{kmeanspp_init, lloyd, ClusteringResult, KMeansConfig, DEFAULT_MAX_ITER, DEFAULT_TOL};
pub use report::{
    cluster_composition, contingency, match_clusters_to_labels, top_keywords_per_cluster, ClusterMatching,
    DEFAULT_TOP_KEYWORDS, MAX_MATCH_K,
};
pub use silhouette::{silhouette, Distance, Silhouette};

use serde::Serialize;

use crate::retrieval::{RankMatrix, SelectedKeyword};
use crate::woi::WoiPool;
use crate::Result;

/// Per-cluster summary of a clustering run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterReport {
    pub k: usize,
    pub inertia: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub cluster_sizes: Vec<usize>,
    pub silhouette_mean: f64,
    pub silhouette_per_sample: Vec<f64>,
    /// Class percentages per cluster; present when labels are known.
    pub composition: Option<Vec<Vec<f64>>>,
    pub matching: Option<ClusterMatching>,
    /// Present when the clustered embeddings came from keyword retrieval.
    pub top_keywords: Option<Vec<Vec<SelectedKeyword>>>,
}

/// Labels given as class indices together with the class count.
#[derive(Debug, Clone, Copy)]
pub struct LabelView<'a> {
    pub labels: &'a [usize],
    pub n_classes: usize,
}

/// Assembles a [`ClusterReport`] from a finished clustering.
pub fn build_report<T: crate::Scalar>(
    x: &crate::EmbeddingMatrix<T>,
    result: &ClusteringResult,
    distance: Distance,
    labels: Option<LabelView<'_>>,
    keywords: Option<(&RankMatrix, &WoiPool)>,
    top_k: usize,
) -> Result<ClusterReport> {
    let sil = silhouette(x, &result.assignments, distance)?;
    let (composition, matching) = match labels {
        Some(l) => {
            let comp = cluster_composition(&result.assignments, l.labels, result.k, l.n_classes)?;
            let matching = if result.k == l.n_classes && result.k <= MAX_MATCH_K {
                Some(match_clusters_to_labels(&result.assignments, l.labels, result.k, l.n_classes)?)
            } else {
                None
            };
            (Some(comp), matching)
        }
        None => (None, None),
    };
    let top_keywords = keywords
        .map(|(ranks, pool)| top_keywords_per_cluster(ranks, &result.assignments, result.k, pool, top_k))
        .transpose()?;
    Ok(ClusterReport {
        k: result.k,
        inertia: result.inertia,
        iterations_run: result.iterations_run,
        converged: result.converged,
        cluster_sizes: result.cluster_sizes(),
        silhouette_mean: sil.mean,
        silhouette_per_sample: sil.per_sample,
        composition,
        matching,
        top_keywords,
    })
}
