//! Seeded synthetic corpora with a known cluster structure.
//!
//! Each cluster has an anchor keyword direction; images of that cluster are
//! the anchor plus isotropic noise, renormalized. Every generated image is
//! checked to be strictly closest to its own anchor among all keywords.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scalar::dot_f64;
use crate::tensor::EmbeddingMatrix;
use crate::woi::{build_pool, EntityRecord, WoiPool};
use crate::{Error, Result};

const MAX_ATTEMPTS: usize = 10_000;

pub const ANCHOR_TYPE: &str = "Neoplastic Process";
const DISTRACTOR_TYPES: [&str; 3] = ["Disease or Syndrome", "Pathologic Function", "Tissue"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_clusters: usize,
    pub images_per_cluster: usize,
    pub n_keywords: usize,
    pub dim: usize,
    /// Every pair of keyword directions has cosine below `1 - margin`.
    pub margin: f64,
    /// Norm of the expected noise vector added to an anchor.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_clusters: 3,
            images_per_cluster: 50,
            n_keywords: 12,
            dim: 32,
            margin: 0.5,
            noise: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFixture {
    pub images: EmbeddingMatrix<f32>,
    /// Keyword rows in pool order; ids are the keyword CUIs.
    pub keywords: EmbeddingMatrix<f32>,
    pub pool: WoiPool,
    /// Cluster index of every image.
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    /// Pool index of each cluster's anchor keyword.
    pub anchors: Vec<usize>,
}

impl SyntheticFixture {
    pub fn label_names(&self) -> Vec<&str> {
        self.labels.iter().map(|&l| self.class_names[l].as_str()).collect()
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot_f64(&v, &v).sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn far_from_all(v: &[f64], others: &[Vec<f64>], margin: f64) -> bool {
    others.iter().all(|o| dot_f64(v, o) < 1.0 - margin)
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticFixture> {
    let c = config;
    if c.n_clusters == 0 || c.images_per_cluster == 0 || c.dim == 0 {
        return Err(Error::InvalidParameter("cluster count, cluster size and dim must be positive".into()));
    }
    if c.n_keywords < c.n_clusters {
        return Err(Error::InfeasibleMargin(format!(
            "{} keywords cannot host {} anchors",
            c.n_keywords, c.n_clusters
        )));
    }
    if !(c.margin > 0.0) || !(c.noise >= 0.0) {
        return Err(Error::InvalidParameter("margin must be positive and noise non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);

    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(c.n_keywords);
    for _ in 0..c.n_keywords {
        let v = (0..MAX_ATTEMPTS)
            .map(|_| random_unit(&mut rng, c.dim))
            .find(|v| far_from_all(v, &directions, c.margin))
            .ok_or_else(|| {
                Error::InfeasibleMargin(format!(
                    "could not place keyword {} with pairwise cosine below {}",
                    directions.len(),
                    1.0 - c.margin
                ))
            })?;
        directions.push(v);
    }

    let mut image_rows: Vec<Vec<f32>> = Vec::with_capacity(c.n_clusters * c.images_per_cluster);
    let mut labels = Vec::with_capacity(image_rows.capacity());
    let mut ids = Vec::with_capacity(image_rows.capacity());
    let scale = c.noise / (c.dim as f64).sqrt();
    for cluster in 0..c.n_clusters {
        let anchor = &directions[cluster];
        for i in 0..c.images_per_cluster {
            let mut accepted = None;
            for _ in 0..MAX_ATTEMPTS {
                let raw: Vec<f64> = anchor
                    .iter()
                    .map(|&a| a + scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let norm = dot_f64(&raw, &raw).sqrt();
                if norm < 1e-9 {
                    continue;
                }
                let img: Vec<f32> = raw.iter().map(|v| (v / norm) as f32).collect();
                let own = dot_f64(&img, &to_f32(anchor));
                let closest = directions
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != cluster)
                    .all(|(_, d)| dot_f64(&img, &to_f32(d)) < own);
                if closest {
                    accepted = Some(img);
                    break;
                }
            }
            let img = accepted.ok_or_else(|| {
                Error::InfeasibleMargin(format!("noise {} swamps anchor {cluster}", c.noise))
            })?;
            image_rows.push(img);
            labels.push(cluster);
            ids.push(format!("img-{cluster}-{i:04}"));
        }
    }

    let records: Vec<EntityRecord> = (0..c.n_keywords)
        .map(|j| {
            let (text, ty) = if j < c.n_clusters {
                (format!("anchor term {j}"), ANCHOR_TYPE)
            } else {
                (format!("distractor term {j}"), DISTRACTOR_TYPES[(j - c.n_clusters) % 3])
            };
            EntityRecord {
                text,
                cui: cui(j),
                semantic_types: vec![ty.to_string()],
            }
        })
        .collect();
    let pool = build_pool(&records)?;
    let keyword_rows: Vec<Vec<f32>> = directions.iter().map(|d| to_f32(d)).collect();
    let keywords = EmbeddingMatrix::from_rows((0..c.n_keywords).map(cui).collect(), &keyword_rows)?;

    Ok(SyntheticFixture {
        images: EmbeddingMatrix::from_rows(ids, &image_rows)?,
        keywords,
        pool,
        labels,
        class_names: (0..c.n_clusters).map(|k| format!("class-{k}")).collect(),
        anchors: (0..c.n_clusters).collect(),
    })
}

/// Zero-padded so lexical and numeric CUI order agree.
fn cui(j: usize) -> String {
    format!("C{:07}", j + 1)
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}
