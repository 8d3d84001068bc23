//! Independent reference computations used by the integration and
//! acceptance tests. Everything here is plain `f64` loops over nested
//! vectors and shares no code with the library.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

pub fn cosine(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|x| {
            b.iter()
                .map(|y| {
                    let mut dot = 0.0;
                    for k in 0..x.len() {
                        dot += x[k] * y[k];
                    }
                    dot / (norm(x) * norm(y))
                })
                .collect()
        })
        .collect()
}

/// Rank of `j` = 1 + number of entries that sort before it under
/// (score, position) order.
pub fn ranks(row: &[f64]) -> Vec<u32> {
    (0..row.len())
        .map(|j| {
            1 + (0..row.len())
                .filter(|&k| row[k] < row[j] || (row[k] == row[j] && k < j))
                .count() as u32
        })
        .collect()
}

pub fn mean_ranks(rank_rows: &[Vec<u32>]) -> Vec<f64> {
    let n_w = rank_rows[0].len();
    (0..n_w)
        .map(|j| rank_rows.iter().map(|r| r[j] as f64).sum::<f64>() / rank_rows.len() as f64)
        .collect()
}

/// Repeated arg-max scans, ties to the lowest index.
pub fn top_m(scores: &[f64], m: usize) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    let mut out = Vec::new();
    for _ in 0..m.min(scores.len()) {
        let mut best: Option<usize> = None;
        for j in 0..scores.len() {
            if taken[j] {
                continue;
            }
            match best {
                Some(b) if scores[j] <= scores[b] => {}
                _ => best = Some(j),
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out
}

/// Softmax weights (no max shift) and the weighted keyword sum.
pub fn text_embedding(
    sims: &[f64],
    selected: &[usize],
    unit_keywords: &[Vec<f64>],
    temperature: f64,
) -> (Vec<f64>, Vec<f64>) {
    let exps: Vec<f64> = selected.iter().map(|&j| (sims[j] / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let dim = unit_keywords[0].len();
    let mut out = vec![0.0; dim];
    for (w, &j) in weights.iter().zip(selected) {
        for d in 0..dim {
            out[d] += w * unit_keywords[j][d];
        }
    }
    (weights, out)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Direct silhouette formula; singletons score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Vec<f64> {
    let n = points.len();
    let clusters: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    (0..n)
        .map(|i| {
            let own: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
            if own.is_empty() {
                return 0.0;
            }
            let a = own.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / own.len() as f64;
            let b = clusters
                .iter()
                .filter(|&&c| c != labels[i])
                .map(|&c| {
                    let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
                    members.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / members.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            if a.max(b) == 0.0 {
                0.0
            } else {
                (b - a) / a.max(b)
            }
        })
        .collect()
}

pub fn partition_inertia(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = points[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
        if members.is_empty() {
            continue;
        }
        let mean: Vec<f64> = (0..dim)
            .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64)
            .collect();
        total += members.iter().map(|p| dist(p, &mean).powi(2)).sum::<f64>();
    }
    total
}

/// Minimum inertia over every assignment of the points into `k`
/// non-empty clusters.
pub fn optimal_inertia(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut used = vec![false; k];
        labels.iter().for_each(|&l| used[l] = true);
        if used.iter().all(|&u| u) {
            best = best.min(partition_inertia(points, &labels, k));
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
    }
}

/// Plain parameter bundle for the MLP oracle; layouts match the library
/// (input-major weight matrices).
#[derive(Clone, Debug)]
pub struct Net {
    pub d: usize,
    pub h: usize,
    pub c: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl Net {
    pub fn random(rng: &mut ChaCha8Rng, d: usize, h: usize, c: usize) -> Net {
        let mut v = |n: usize, lo: f64, hi: f64| (0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>();
        Net {
            d,
            h,
            c,
            w1: v(d * h, -1.0, 1.0),
            b1: v(h, -0.5, 0.5),
            gamma: v(h, 0.5, 1.5),
            beta: v(h, -0.5, 0.5),
            w2: v(h * c, -1.0, 1.0),
            b2: v(c, -0.5, 0.5),
            running_mean: v(h, -0.5, 0.5),
            running_var: v(h, 0.5, 2.0),
        }
    }

    pub fn params_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [&mut self.w1, &mut self.b1, &mut self.gamma, &mut self.beta, &mut self.w2, &mut self.b2]
    }

    /// Linear -> BatchNorm -> ReLU -> Linear on `rows`.
    pub fn forward(&self, rows: &[Vec<f64>], train: bool) -> Vec<Vec<f64>> {
        let b = rows.len();
        let z: Vec<Vec<f64>> = rows
            .iter()
            .map(|x| {
                (0..self.h)
                    .map(|j| self.b1[j] + (0..self.d).map(|i| x[i] * self.w1[i * self.h + j]).sum::<f64>())
                    .collect()
            })
            .collect();
        let (mean, var): (Vec<f64>, Vec<f64>) = if train {
            let mean: Vec<f64> = (0..self.h).map(|j| z.iter().map(|r| r[j]).sum::<f64>() / b as f64).collect();
            let var = (0..self.h)
                .map(|j| z.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / b as f64)
                .collect();
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        z.iter()
            .map(|zr| {
                let act: Vec<f64> = (0..self.h)
                    .map(|j| {
                        let y = self.gamma[j] * (zr[j] - mean[j]) / (var[j] + 1e-5).sqrt() + self.beta[j];
                        y.max(0.0)
                    })
                    .collect();
                (0..self.c)
                    .map(|k| self.b2[k] + (0..self.h).map(|j| act[j] * self.w2[j * self.c + k]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    pub fn loss(&self, rows: &[Vec<f64>], labels: &[usize]) -> f64 {
        let logits = self.forward(rows, true);
        logits
            .iter()
            .zip(labels)
            .map(|(l, &y)| {
                let lse = l.iter().map(|v| v.exp()).sum::<f64>().ln();
                lse - l[y]
            })
            .sum::<f64>()
            / rows.len() as f64
    }

    /// Central differences for every trainable parameter, in the order
    /// w1, b1, gamma, beta, w2, b2.
    pub fn numeric_grads(&self, rows: &[Vec<f64>], labels: &[usize], h: f64) -> [Vec<f64>; 6] {
        let mut out: [Vec<f64>; 6] = Default::default();
        let mut probe = self.clone();
        for p in 0..6 {
            let len = probe.params_mut()[p].len();
            for i in 0..len {
                let orig = probe.params_mut()[p][i];
                probe.params_mut()[p][i] = orig + h;
                let up = probe.loss(rows, labels);
                probe.params_mut()[p][i] = orig - h;
                let down = probe.loss(rows, labels);
                probe.params_mut()[p][i] = orig;
                out[p].push((up - down) / (2.0 * h));
            }
        }
        out
    }
}

/// Relative closeness with an absolute floor.
pub fn grad_close(analytic: f64, numeric: f64, rel: f64, floor: f64) -> bool {
    (analytic - numeric).abs() <= (rel * analytic.abs().max(numeric.abs())).max(floor)
}
