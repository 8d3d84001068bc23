//! Two-layer batch-normalized MLP trained with Adam, the metric suite, and
//! the multi-seed harness.

mod adam;
mod metrics;
mod mlp;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use metrics::{
    confusion_matrix, evaluate_metrics, quadratic_weighted_kappa, MeanStd, MetricSet, Metrics, SeedMetrics,
};
pub use mlp::{BatchStats, MlpGrads, MlpModel, Mode, BN_EPS, BN_MOMENTUM};
pub use train::{
    multi_seed_run, train, MetricSpec, Split, TrainConfig, TrainOutcome, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS,
    DEFAULT_HIDDEN, DEFAULT_N_SEEDS, DEFAULT_TEST_FRACTION,
};
