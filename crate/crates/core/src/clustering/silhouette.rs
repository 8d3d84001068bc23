use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scalar::{dot_f64, sq_dist_f64, Scalar};
use crate::tensor::EmbeddingMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`.
    Cosine,
}

impl Distance {
    fn eval<T: Scalar>(self, a: &[T], b: &[T]) -> f64 {
        match self {
            Distance::Euclidean => sq_dist_f64(a, b).sqrt(),
            Distance::Cosine => {
                let denom = (dot_f64(a, a) * dot_f64(b, b)).sqrt();
                if denom == 0.0 {
                    1.0
                } else {
                    1.0 - dot_f64(a, b) / denom
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Silhouette {
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

/// Silhouette coefficient of every sample and their mean.
///
/// Members of singleton clusters score 0, as do samples whose `a` and `b`
/// are both zero. Cluster indices need not be contiguous.
pub fn silhouette<T: Scalar>(
    x: &EmbeddingMatrix<T>,
    assignments: &[usize],
    distance: Distance,
) -> Result<Silhouette> {
    if assignments.len() != x.rows() {
        return Err(Error::LengthMismatch {
            what: "assignments",
            expected: x.rows(),
            found: assignments.len(),
        });
    }
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::SingleCluster);
    }

    let per_sample: Vec<f64> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let own = assignments[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0f64; k];
            for (j, &c) in assignments.iter().enumerate() {
                if j != i {
                    sums[c] += distance.eval(x.row(i), x.row(j));
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(Silhouette { per_sample, mean })
}
