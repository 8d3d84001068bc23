//! Run configuration: one TOML file holding every experiment constant.
//!
//! Every field has a default, so a config that only names its input files
//! and class order reproduces the reference protocol. Relative paths are
//! resolved against the directory of the config file. The resolved form is
//! written back as the run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use tqx_core::classifier::{TrainConfig, DEFAULT_N_SEEDS, DEFAULT_TEST_FRACTION};
use tqx_core::clustering::{Distance, DEFAULT_MAX_ITER, DEFAULT_TOL, DEFAULT_TOP_KEYWORDS};
use tqx_core::retrieval::{DEFAULT_M, DEFAULT_TEMPERATURE};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for K-Means initialization.
    pub seed: u64,
    /// Also evaluate the image embeddings themselves as a baseline row.
    pub include_visual: bool,
    pub data: DataConfig,
    pub dataset: DatasetConfig,
    pub retrieval: RetrievalConfig,
    pub levels: Vec<LevelSpec>,
    pub clustering: ClusteringConfig,
    pub classifier: ClassifierConfig,
    /// SHA-256 of every input file, keyed by data field name. Written into
    /// manifests; when present, inputs must still match.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub input_digests: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            include_visual: true,
            data: DataConfig::default(),
            dataset: DatasetConfig::default(),
            retrieval: RetrievalConfig::default(),
            levels: LevelSpec::standard(),
            clustering: ClusteringConfig::default(),
            classifier: ClassifierConfig::default(),
            input_digests: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Image embeddings, TQXE or CSV.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_embeddings: Option<PathBuf>,
    /// Keyword embeddings whose ids are keyword CUIs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keyword_embeddings: Option<PathBuf>,
    /// Entity records or a saved pool, JSON lines.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<PathBuf>,
    /// CSV `id,label`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// CSV `id,partition` with partitions `train` / `test`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
}

impl DataConfig {
    fn fields_mut(&mut self) -> [(&'static str, &mut Option<PathBuf>); 5] {
        [
            ("image_embeddings", &mut self.image_embeddings),
            ("keyword_embeddings", &mut self.keyword_embeddings),
            ("pool", &mut self.pool),
            ("labels", &mut self.labels),
            ("split", &mut self.split),
        ]
    }

    /// Configured paths keyed by field name.
    pub fn paths(&self) -> BTreeMap<&'static str, &Path> {
        let mut out = BTreeMap::new();
        let pairs = [
            ("image_embeddings", &self.image_embeddings),
            ("keyword_embeddings", &self.keyword_embeddings),
            ("pool", &self.pool),
            ("labels", &self.labels),
            ("split", &self.split),
        ];
        for (name, p) in pairs {
            if let Some(p) = p {
                out.insert(name, p.as_path());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    /// Ordinal class order used by the weighted kappa. Empty means the
    /// sorted distinct labels.
    pub class_order: Vec<String>,
    pub cancer_classes: Vec<String>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            name: "dataset".into(),
            class_order: Vec::new(),
            cancer_classes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionScope {
    /// Mean ranks over every image.
    #[default]
    All,
    /// Mean ranks over the training partition only.
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub m: usize,
    pub temperature: f64,
    pub renormalize: bool,
    pub selection: SelectionScope,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            m: DEFAULT_M,
            temperature: DEFAULT_TEMPERATURE,
            renormalize: false,
            selection: SelectionScope::All,
        }
    }
}

/// A keyword pool level. No semantic types means the unfiltered pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub name: String,
    #[serde(default)]
    pub semantic_types: Vec<String>,
}

impl LevelSpec {
    pub fn new(name: &str, types: &[&str]) -> Self {
        Self {
            name: name.into(),
            semantic_types: types.iter().map(|t| t.to_string()).collect(),
        }
    }

    /// Raw pool plus the three single-type levels.
    pub fn standard() -> Vec<LevelSpec> {
        vec![
            LevelSpec::new("Level-0", &[]),
            LevelSpec::new("Level-1", &["Pathologic Function"]),
            LevelSpec::new("Level-2", &["Disease or Syndrome"]),
            LevelSpec::new("Level-3", &["Neoplastic Process"]),
        ]
    }

    pub fn type_set(&self) -> BTreeSet<String> {
        self.semantic_types.iter().cloned().collect()
    }

    /// Directory name for this level's artifacts.
    pub fn slug(&self) -> String {
        slugify(&self.name)
    }
}

pub fn slugify(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    /// Defaults to the number of classes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub max_iter: usize,
    pub tol: f64,
    pub n_restarts: usize,
    pub top_keywords: usize,
    pub distance: Distance,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            k: None,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            n_restarts: 1,
            top_keywords: DEFAULT_TOP_KEYWORDS,
            distance: Distance::Euclidean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub enabled: bool,
    pub n_seeds: usize,
    /// Seed of the stratified split used when no split file is given.
    pub split_seed: u64,
    pub test_fraction: f64,
    pub train: TrainConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            n_seeds: DEFAULT_N_SEEDS,
            split_seed: 0,
            test_fraction: DEFAULT_TEST_FRACTION,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` and resolves relative data paths against its directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input(path, e.to_string()))?;
        let mut config = Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(reason) => CliError::input(path, reason),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for (_, field) in self.data.fields_mut() {
            if let Some(p) = field.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// Cluster count: configured, else the number of classes.
    pub fn resolved_k(&self) -> Option<usize> {
        self.clustering
            .k
            .or_else(|| (!self.dataset.class_order.is_empty()).then_some(self.dataset.class_order.len()))
    }

    /// Checks every constraint that does not need the input files.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        let r = &self.retrieval;
        if r.m == 0 {
            return bad("retrieval.m must be at least 1".into());
        }
        if !(r.temperature > 0.0 && r.temperature.is_finite()) {
            return bad("retrieval.temperature must be positive".into());
        }
        let c = &self.clustering;
        if c.k == Some(0) {
            return bad("clustering.k must be at least 1".into());
        }
        if c.max_iter == 0 || c.n_restarts == 0 || c.top_keywords == 0 {
            return bad("clustering.max_iter, n_restarts and top_keywords must be at least 1".into());
        }
        if !(c.tol >= 0.0) {
            return bad("clustering.tol must be non-negative".into());
        }
        let mut names = BTreeSet::new();
        let mut slugs = BTreeSet::new();
        for level in &self.levels {
            if level.slug().is_empty() || level.slug() == "visual" {
                return bad(format!("level name `{}` is not usable", level.name));
            }
            if !names.insert(level.name.clone()) || !slugs.insert(level.slug()) {
                return bad(format!("level `{}` is listed twice", level.name));
            }
        }
        let classes: BTreeSet<&String> = self.dataset.class_order.iter().collect();
        if classes.len() != self.dataset.class_order.len() {
            return bad("dataset.class_order repeats a class".into());
        }
        if !classes.is_empty() {
            if let Some(c) = self.dataset.cancer_classes.iter().find(|c| !classes.contains(c)) {
                return bad(format!("cancer class `{c}` is not in dataset.class_order"));
            }
        }
        if self.retrieval.selection == SelectionScope::Train && !self.classifier.enabled && self.data.split.is_none() {
            return bad("retrieval.selection = \"train\" needs a split".into());
        }
        let cl = &self.classifier;
        if cl.enabled {
            cl.train.validate().map_err(|e| CliError::Config(format!("classifier.train: {e}")))?;
            if cl.n_seeds == 0 {
                return bad("classifier.n_seeds must be at least 1".into());
            }
        }
        if !(cl.test_fraction > 0.0 && cl.test_fraction < 1.0) {
            return bad("classifier.test_fraction must lie in (0, 1)".into());
        }
        Ok(())
    }
}

/// Command-line overrides shared by the computing subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Refined pool size.
    #[arg(long)]
    pub m: Option<usize>,
    /// Softmax temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Cluster count.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Clustering seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_seeds: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Skip the classification stage.
    #[arg(long)]
    pub no_classifier: bool,
}

impl Overrides {
    pub fn apply(&self, c: &mut RunConfig) {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(self.m => c.retrieval.m);
        set!(self.temperature => c.retrieval.temperature);
        if self.k.is_some() {
            c.clustering.k = self.k;
        }
        set!(self.max_iter => c.clustering.max_iter);
        set!(self.seed => c.seed);
        set!(self.n_seeds => c.classifier.n_seeds);
        set!(self.epochs => c.classifier.train.epochs);
        set!(self.hidden_width => c.classifier.train.hidden_width);
        set!(self.batch_size => c.classifier.train.batch_size);
        set!(self.learning_rate => c.classifier.train.learning_rate);
        if self.no_classifier {
            c.classifier.enabled = false;
        }
    }
}
