use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::metrics::{evaluate_metrics, MetricSet, Metrics, SeedMetrics};
use super::mlp::MlpModel;
use crate::scalar::Scalar;
use crate::tensor::EmbeddingMatrix;
use crate::{Error, Result};

pub const DEFAULT_EPOCHS: usize = 300;
pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_HIDDEN: usize = 512;
pub const DEFAULT_N_SEEDS: usize = 50;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_width: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            hidden_width: DEFAULT_HIDDEN,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.hidden_width == 0 {
            return bad("hidden_width must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("invalid Adam hyper-parameters");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Row indices of the train and test partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Stratified split: within every class, `round(test_fraction * n)`
    /// shuffled members go to the test partition. Indices are returned
    /// sorted.
    pub fn stratified(labels: &[usize], n_classes: usize, test_fraction: f64, seed: u64) -> Result<Split> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidParameter("test_fraction must lie in [0, 1)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in 0..n_classes {
            let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            members.shuffle(&mut rng);
            let n_test = (members.len() as f64 * test_fraction).round() as usize;
            test.extend_from_slice(&members[..n_test]);
            train.extend_from_slice(&members[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok(Split { train, test })
    }

    /// Split from explicit `train` / `test` partition names per row.
    pub fn from_partitions<S: AsRef<str>>(partitions: &[S]) -> Result<Split> {
        let mut split = Split {
            train: Vec::new(),
            test: Vec::new(),
        };
        for (i, p) in partitions.iter().enumerate() {
            match p.as_ref() {
                "train" => split.train.push(i),
                "test" => split.test.push(i),
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "row {i}: partition must be `train` or `test`, got `{other}`"
                    )))
                }
            }
        }
        Ok(split)
    }
}

/// Class count and the classes counted by the cancer accuracy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricSpec {
    pub n_classes: usize,
    pub cancer_classes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: MlpModel<T>,
    pub metrics: Metrics,
    pub test_predictions: Vec<usize>,
    /// Train-mode cross-entropy over the whole training partition before
    /// the first and after the last update.
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn gather<T: Scalar>(x: &EmbeddingMatrix<T>, rows: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(rows.len() * x.dim());
    for &i in rows {
        out.extend_from_slice(x.row(i));
    }
    out
}

/// Trains one model and scores it on the test partition in eval mode.
///
/// Initialization and per-epoch shuffling draw from one generator seeded
/// by `config.seed`. A trailing minibatch with fewer than two rows is
/// skipped.
pub fn train<T: Scalar>(
    features: &EmbeddingMatrix<T>,
    labels: &[usize],
    split: &Split,
    config: &TrainConfig,
    spec: &MetricSpec,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if labels.len() != features.rows() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: features.rows(),
            found: labels.len(),
        });
    }
    if split.train.len() < 2 {
        return Err(Error::BatchTooSmall(split.train.len()));
    }
    if split.test.is_empty() {
        return Err(Error::InvalidParameter("test partition is empty".into()));
    }
    let mut present = vec![false; spec.n_classes];
    for &i in &split.train {
        match present.get_mut(labels[i]) {
            Some(p) => *p = true,
            None => return Err(Error::InvalidParameter(format!("label {} outside class range", labels[i]))),
        }
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(Error::MissingClassInTrain(missing));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MlpModel::<T>::init(features.dim(), config.hidden_width, spec.n_classes, &mut rng);
    let mut adam = AdamState::new(&model);
    let adam_cfg = config.adam();

    let train_x = gather(features, &split.train);
    let train_y: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let initial_loss = model.loss(&train_x, &train_y)?.to_f64_lossless();

    let mut order = split.train.clone();
    let mut step = 0u64;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let xb = gather(features, chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (_, grads, stats) = model.loss_and_grads(&xb, &yb)?;
            model.update_running_stats(&stats);
            step += 1;
            adam.step(&mut model, &grads, step, &adam_cfg)?;
        }
    }
    let final_loss = model.loss(&train_x, &train_y)?.to_f64_lossless();

    model.eval_mode();
    let test_x = gather(features, &split.test);
    let test_y: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
    let test_predictions = model.predict(&test_x)?;
    let metrics = evaluate_metrics(&test_predictions, &test_y, spec.n_classes, &spec.cancer_classes)?;
    Ok(TrainOutcome {
        model,
        metrics,
        test_predictions,
        initial_loss,
        final_loss,
    })
}

/// Repeats [`train`] with seeds `0..n_seeds` and aggregates the metrics.
/// Seeds run in parallel; results are assembled in seed order.
pub fn multi_seed_run<T: Scalar>(
    features: &EmbeddingMatrix<T>,
    labels: &[usize],
    split: &Split,
    config: &TrainConfig,
    spec: &MetricSpec,
    n_seeds: usize,
) -> Result<MetricSet> {
    if n_seeds == 0 {
        return Err(Error::InvalidParameter("n_seeds must be at least 1".into()));
    }
    let per_seed = (0..n_seeds as u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = TrainConfig { seed, ..config.clone() };
            train(features, labels, split, &cfg, spec).map(|o| SeedMetrics {
                seed,
                metrics: o.metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricSet::aggregate(per_seed))
}
