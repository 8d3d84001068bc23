use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::scalar::{sq_dist_f64, Scalar};
use crate::tensor::EmbeddingMatrix;
use crate::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
    /// Independent restarts with seeds `seed, seed + 1, ...`; the lowest
    /// inertia wins.
    pub n_restarts: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            n_restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusteringResult {
    pub k: usize,
    pub assignments: Vec<usize>,
    /// Row-major `k x dim`.
    pub centroids: Vec<f64>,
    pub dim: usize,
    pub inertia: f64,
    pub iterations_run: usize,
    pub converged: bool,
    /// Inertia after each update step.
    pub inertia_trace: Vec<f64>,
    pub seed: u64,
}

impl ClusteringResult {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn rows_f64<T: Scalar>(x: &EmbeddingMatrix<T>) -> Vec<f64> {
    x.values().iter().map(|v| v.to_f64_lossless()).collect()
}

fn check_k<T: Scalar>(x: &EmbeddingMatrix<T>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if k > x.rows() {
        return Err(Error::KTooLarge { k, n: x.rows() });
    }
    Ok(())
}

/// K-Means++ seeding: the first centroid is a uniformly drawn row, every
/// further one is drawn with probability proportional to its squared
/// distance from the nearest centroid chosen so far.
///
/// Returns `k x dim` centroids in `f64`.
pub fn kmeanspp_init<T: Scalar>(x: &EmbeddingMatrix<T>, k: usize, seed: u64) -> Result<Vec<f64>> {
    check_k(x, k)?;
    let data = rows_f64(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(kmeanspp(&data, x.dim(), k, &mut rng))
}

fn kmeanspp(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(k * dim);

    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist_f64(row(i), row(first))).collect();

    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // every remaining point coincides with a centroid
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centroids.extend_from_slice(row(next));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist_f64(row(i), row(next)));
        }
    }
    centroids
}

fn nearest_centroid(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist_f64(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn update_centroids(data: &[f64], dim: usize, assignments: &[usize], k: usize) -> Vec<f64> {
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (point, &a) in data.chunks_exact(dim).zip(assignments) {
        counts[a] += 1;
        for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(point) {
            *s += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        for s in &mut sums[c * dim..(c + 1) * dim] {
            *s /= count as f64;
        }
    }
    sums
}

/// Moves, for each empty cluster, the point farthest from its own centroid
/// into that cluster. Only points from clusters with more than one member
/// are eligible, so no new empty cluster appears.
fn repair_empty(data: &[f64], dim: usize, centroids: &[f64], assignments: &mut [usize], k: usize) {
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, point) in data.chunks_exact(dim).enumerate() {
            let a = assignments[i];
            if sizes[a] < 2 {
                continue;
            }
            let d = sq_dist_f64(point, &centroids[a * dim..(a + 1) * dim]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let i = far.expect("k <= n guarantees a cluster with at least two points");
        sizes[assignments[i]] -= 1;
        assignments[i] = c;
        sizes[c] = 1;
    }
}

pub(crate) fn inertia_of(data: &[f64], dim: usize, assignments: &[usize], centroids: &[f64]) -> f64 {
    data.chunks_exact(dim)
        .zip(assignments)
        .map(|(p, &a)| sq_dist_f64(p, &centroids[a * dim..(a + 1) * dim]))
        .sum()
}

fn lloyd_single(data: &[f64], dim: usize, config: &KMeansConfig, seed: u64) -> ClusteringResult {
    let k = config.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeanspp(data, dim, k, &mut rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations_run = 0;

    for _ in 0..config.max_iter {
        iterations_run += 1;
        let mut next: Vec<usize> = data
            .par_chunks(dim)
            .map(|p| nearest_centroid(p, &centroids, dim).0)
            .collect();
        repair_empty(data, dim, &centroids, &mut next, k);
        let updated = update_centroids(data, dim, &next, k);
        let shift = centroids
            .chunks_exact(dim)
            .zip(updated.chunks_exact(dim))
            .map(|(a, b)| sq_dist_f64(a, b).sqrt())
            .fold(0.0, f64::max);
        let unchanged = next == assignments;
        centroids = updated;
        assignments = next;
        trace.push(inertia_of(data, dim, &assignments, &centroids));
        if unchanged || shift < config.tol {
            converged = true;
            break;
        }
    }

    ClusteringResult {
        k,
        inertia: *trace.last().expect("max_iter >= 1"),
        assignments,
        centroids,
        dim,
        iterations_run,
        converged,
        inertia_trace: trace,
        seed,
    }
}

/// Lloyd's algorithm from K-Means++ seeds.
///
/// Each iteration assigns every point to its nearest centroid (ties to the
/// lower index), repairs empty clusters, and moves centroids to cluster
/// means. Iteration stops when assignments repeat, when the largest
/// centroid shift drops below `tol`, or after `max_iter` iterations.
pub fn lloyd<T: Scalar>(x: &EmbeddingMatrix<T>, config: &KMeansConfig) -> Result<ClusteringResult> {
    check_k(x, config.k)?;
    if config.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
    }
    if !(config.tol >= 0.0) {
        return Err(Error::InvalidParameter("tol must be non-negative".into()));
    }
    let data = rows_f64(x);
    let mut best: Option<ClusteringResult> = None;
    for r in 0..config.n_restarts.max(1) as u64 {
        let run = lloyd_single(&data, x.dim(), config, config.seed.wrapping_add(r));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}
