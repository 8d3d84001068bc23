//! End-to-end orchestration: validate and load every input, run the
//! configured stages, and render all artifacts in memory before anything
//! is written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};
use tqx_core::classifier::{multi_seed_run, MeanStd, MetricSet, MetricSpec, Split, TrainConfig};
use tqx_core::clustering::{build_report, lloyd, ClusterReport, ClusteringResult, Distance, KMeansConfig, LabelView};
use tqx_core::io::{encode, load_embeddings};
use tqx_core::retrieval::{align_to_pool, quantify, QuantifyConfig, RetrievalResult};
use tqx_core::synthetic::{generate_synthetic, SyntheticConfig};
use tqx_core::woi::{filter_by_semantic_type, pool_stats, WoiPool};
use tqx_core::Embeddings;

use crate::config::{slugify, LevelSpec, RunConfig, SelectionScope};
use crate::error::{CliError, Result};
use crate::labels::{read_split, LabelTable};
use crate::report;

pub const MANIFEST: &str = "manifest.toml";

/// Which stages a command runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub retrieval: bool,
    pub clustering: bool,
    pub classification: bool,
    /// Row name for the input embeddings themselves; `None` skips them.
    pub direct: Option<String>,
}

impl Plan {
    /// Everything the config enables.
    pub fn full(config: &RunConfig) -> Plan {
        Plan {
            retrieval: !config.levels.is_empty(),
            clustering: true,
            classification: config.classifier.enabled,
            direct: config.include_visual.then(|| report::embedding_label(None)),
        }
    }
}

/// Relative file path inside a run directory mapped to its bytes.
pub type Artifacts = BTreeMap<String, Vec<u8>>;

/// A keyword pool level with its aligned keyword embeddings.
#[derive(Debug, Clone)]
pub struct PreparedLevel {
    pub spec: LevelSpec,
    pub pool: WoiPool,
    pub keywords: Embeddings,
}

/// Validated, fully loaded inputs. `config` is the resolved configuration
/// that becomes the manifest.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub plan: Plan,
    pub images: Embeddings,
    pub labels: Option<Vec<usize>>,
    pub cancer_classes: Vec<usize>,
    pub split: Option<Split>,
    pub levels: Vec<PreparedLevel>,
}

fn required<'a>(path: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("data.{field} is required")))?;
    if !p.is_file() {
        return Err(CliError::input(p, "file not found"));
    }
    Ok(p)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::input(path, e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn validation_at(path: &Path) -> impl Fn(tqx_core::Error) -> CliError + '_ {
    move |e| CliError::input(path, e.to_string())
}

/// Checks and loads everything the plan needs. No computation beyond
/// parsing, filtering and alignment happens here.
pub fn prepare(mut config: RunConfig, plan: Plan) -> Result<Prepared> {
    config.validate()?;
    if !plan.retrieval {
        config.levels.clear();
    }
    let data = config.data.clone();

    let images_path = required(&data.image_embeddings, "image_embeddings")?;
    let needs_labels = plan.classification;
    let labels_path = if needs_labels {
        Some(required(&data.labels, "labels")?)
    } else {
        match &data.labels {
            Some(_) => Some(required(&data.labels, "labels")?),
            None => None,
        }
    };
    let (pool_path, keywords_path) = if plan.retrieval {
        (
            Some(required(&data.pool, "pool")?),
            Some(required(&data.keyword_embeddings, "keyword_embeddings")?),
        )
    } else {
        (None, None)
    };
    let split_path = match &data.split {
        Some(_) => Some(required(&data.split, "split")?),
        None => None,
    };

    let mut used: BTreeMap<String, &Path> = BTreeMap::new();
    used.insert("image_embeddings".into(), images_path);
    for (name, p) in [
        ("labels", labels_path),
        ("pool", pool_path),
        ("keyword_embeddings", keywords_path),
        ("split", split_path),
    ] {
        if let Some(p) = p {
            used.insert(name.into(), p);
        }
    }
    let mut digests = BTreeMap::new();
    for (name, p) in &used {
        let digest = sha256_file(p)?;
        if let Some(expected) = config.input_digests.get(name) {
            if *expected != digest {
                return Err(CliError::input(*p, "contents differ from the digest recorded in the manifest"));
            }
        }
        digests.insert(name.clone(), digest);
    }
    config.input_digests = digests;

    let images: Embeddings = load_embeddings(images_path).map_err(validation_at(images_path))?;
    if images.is_empty() {
        return Err(CliError::input(images_path, "no image embeddings"));
    }

    let labels = match labels_path {
        Some(path) => {
            let table = LabelTable::read(path)?;
            if config.dataset.class_order.is_empty() {
                config.dataset.class_order = table.classes();
                config.validate()?;
            }
            Some(table.indices(images.ids(), &config.dataset.class_order, path)?)
        }
        None => None,
    };
    let class_order = &config.dataset.class_order;
    let cancer_classes: Vec<usize> = config
        .dataset
        .cancer_classes
        .iter()
        .map(|c| class_order.iter().position(|o| o == c).expect("validated against class order"))
        .collect();

    if plan.clustering {
        let k = config.resolved_k().ok_or_else(|| {
            CliError::Config("clustering.k is required when no labels or class order are given".into())
        })?;
        if k < 2 {
            return Err(CliError::Config("clustering.k must be at least 2 for silhouette scoring".into()));
        }
        if k > images.rows() {
            return Err(CliError::Validation(tqx_core::Error::KTooLarge { k, n: images.rows() }));
        }
        config.clustering.k = Some(k);
    }

    let wants_split = plan.classification || (plan.retrieval && config.retrieval.selection == SelectionScope::Train);
    let split = if wants_split {
        let split = match split_path {
            Some(path) => {
                let parts = read_split(path, images.ids())?;
                Split::from_partitions(&parts).map_err(validation_at(path))?
            }
            None => {
                let labels = labels.as_ref().ok_or_else(|| {
                    CliError::Config("a stratified split needs data.labels; or provide data.split".into())
                })?;
                let c = &config.classifier;
                Split::stratified(labels, class_order.len(), c.test_fraction, c.split_seed)
                    .map_err(CliError::Validation)?
            }
        };
        if split.train.len() < 2 || split.test.is_empty() {
            return Err(CliError::Config(format!(
                "split has {} training and {} test images; need at least 2 and 1",
                split.train.len(),
                split.test.len()
            )));
        }
        if let (true, Some(labels)) = (plan.classification, &labels) {
            for (class, name) in class_order.iter().enumerate() {
                if !split.train.iter().any(|&i| labels[i] == class) {
                    return Err(CliError::Config(format!("class `{name}` has no training images")));
                }
            }
        }
        Some(split)
    } else {
        None
    };

    let mut levels = Vec::new();
    if let (Some(pool_path), Some(keywords_path)) = (pool_path, keywords_path) {
        let pool = WoiPool::read_jsonl(pool_path).map_err(validation_at(pool_path))?;
        let keywords: Embeddings = load_embeddings(keywords_path).map_err(validation_at(keywords_path))?;
        if keywords.dim() != images.dim() {
            return Err(CliError::input(
                keywords_path,
                format!("keyword dimension {} differs from image dimension {}", keywords.dim(), images.dim()),
            ));
        }
        for spec in &config.levels {
            let level_pool = if spec.semantic_types.is_empty() {
                pool.clone().with_level_name(&spec.name)
            } else {
                filter_by_semantic_type(&pool, &spec.type_set(), &spec.name)
                    .map_err(|e| CliError::Config(format!("level `{}`: {e}", spec.name)))?
            };
            let aligned = align_to_pool(&level_pool, &keywords).map_err(validation_at(keywords_path))?;
            levels.push(PreparedLevel {
                spec: spec.clone(),
                pool: level_pool,
                keywords: aligned,
            });
        }
    }

    Ok(Prepared {
        config,
        plan,
        images,
        labels,
        cancer_classes,
        split,
        levels,
    })
}

#[derive(Serialize)]
struct ClusterArtifact<'a> {
    embedding: &'a str,
    distance: Distance,
    seed: u64,
    max_iter: usize,
    tol: f64,
    n_restarts: usize,
    class_order: &'a [String],
    ids: &'a [String],
    assignments: &'a [usize],
    centroids: Vec<&'a [f64]>,
    inertia_trace: &'a [f64],
    #[serde(flatten)]
    report: &'a ClusterReport,
}

#[derive(Serialize)]
struct ClassificationArtifact<'a> {
    embedding: &'a str,
    class_order: &'a [String],
    cancer_classes: &'a [String],
    n_train: usize,
    n_test: usize,
    train_config: &'a TrainConfig,
    #[serde(flatten)]
    metrics: &'a MetricSet,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    embedding: &'a str,
    directory: &'a str,
    dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_selected: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    silhouette_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    matched_agreement: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acc: Option<MeanStd>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acc_c: Option<MeanStd>,
    #[serde(skip_serializing_if = "Option::is_none")]
    macro_f1: Option<MeanStd>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa_quadratic: Option<MeanStd>,
}

#[derive(Serialize)]
struct Summary<'a> {
    dataset: &'a str,
    n_images: usize,
    embeddings: Vec<SummaryRow<'a>>,
}

/// Results for one embedding set.
#[derive(Debug, Clone)]
pub struct EmbeddingOutcome {
    pub name: String,
    pub slug: String,
    /// Index into [`Prepared::levels`] for text-based rows.
    pub level: Option<usize>,
    pub features: Embeddings,
    pub retrieval: Option<RetrievalResult<f32>>,
    pub clustering: Option<(ClusteringResult, ClusterReport)>,
    pub classification: Option<MetricSet>,
}

/// Everything a run produced, before rendering.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub prepared: Prepared,
    pub embeddings: Vec<EmbeddingOutcome>,
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifacts always serialize");
    bytes.push(b'\n');
    bytes
}

fn evaluate(
    prepared: &Prepared,
    name: String,
    slug: String,
    features: Embeddings,
    level: Option<usize>,
    retrieval: Option<RetrievalResult<f32>>,
) -> Result<EmbeddingOutcome> {
    let config = &prepared.config;
    let plan = &prepared.plan;
    let clustering = if plan.clustering {
        let stage = format!("clustering [{name}]");
        info!("{stage}");
        let c = &config.clustering;
        let kcfg = KMeansConfig {
            k: c.k.expect("resolved during preparation"),
            seed: config.seed,
            max_iter: c.max_iter,
            tol: c.tol,
            n_restarts: c.n_restarts,
        };
        let result = lloyd(&features, &kcfg).map_err(CliError::stage(&stage))?;
        let labels = prepared.labels.as_ref().map(|l| LabelView {
            labels: l,
            n_classes: config.dataset.class_order.len(),
        });
        let keywords = retrieval
            .as_ref()
            .zip(level)
            .map(|(r, l)| (&r.ranks, &prepared.levels[l].pool));
        let report = build_report(&features, &result, c.distance, labels, keywords, c.top_keywords)
            .map_err(CliError::stage(&stage))?;
        Some((result, report))
    } else {
        None
    };
    let classification = if plan.classification {
        let stage = format!("classification [{name}]");
        info!("{stage}");
        let spec = MetricSpec {
            n_classes: config.dataset.class_order.len(),
            cancer_classes: prepared.cancer_classes.clone(),
        };
        let set = multi_seed_run(
            &features,
            prepared.labels.as_ref().expect("labels are required for classification"),
            prepared.split.as_ref().expect("split is prepared for classification"),
            &config.classifier.train,
            &spec,
            config.classifier.n_seeds,
        )
        .map_err(CliError::stage(&stage))?;
        Some(set)
    } else {
        None
    };
    Ok(EmbeddingOutcome {
        name,
        slug,
        level,
        features,
        retrieval,
        clustering,
        classification,
    })
}

/// Runs every planned stage.
pub fn execute(prepared: Prepared) -> Result<RunOutcome> {
    let mut embeddings = Vec::new();
    if let Some(name) = &prepared.plan.direct {
        embeddings.push(evaluate(
            &prepared,
            name.clone(),
            slugify(name),
            prepared.images.clone(),
            None,
            None,
        )?);
    }
    let r = &prepared.config.retrieval;
    for (index, level) in prepared.levels.iter().enumerate() {
        let name = report::embedding_label(Some(&level.spec.name));
        let stage = format!("retrieval [{}]", level.spec.name);
        info!("{stage}");
        let qcfg = QuantifyConfig {
            m: r.m,
            temperature: r.temperature,
            selection_subset: match r.selection {
                SelectionScope::All => None,
                SelectionScope::Train => Some(prepared.split.as_ref().expect("prepared").train.clone()),
            },
            renormalize: r.renormalize,
        };
        let result = quantify(&prepared.images, &level.pool, &level.keywords, &qcfg).map_err(CliError::stage(&stage))?;
        let features = result.text.embeddings.clone();
        embeddings.push(evaluate(
            &prepared,
            name,
            level.spec.slug(),
            features,
            Some(index),
            Some(result),
        )?);
    }
    Ok(RunOutcome { prepared, embeddings })
}

fn clusters_csv(ids: &[String], result: &ClusteringResult, report: &ClusterReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "assignment", "silhouette"]).expect("in-memory write");
    for (i, id) in ids.iter().enumerate() {
        w.write_record([
            id.clone(),
            result.assignments[i].to_string(),
            report.silhouette_per_sample[i].to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Renders every output file of a run.
pub fn render(outcome: &RunOutcome) -> Result<Artifacts> {
    let prepared = &outcome.prepared;
    let config = &prepared.config;
    let class_order = &config.dataset.class_order;
    let mut files = Artifacts::new();
    files.insert(MANIFEST.into(), config.to_toml().into_bytes());

    for e in &outcome.embeddings {
        let dir = &e.slug;
        if let (Some(r), Some(level)) = (&e.retrieval, e.level.map(|l| &prepared.levels[l])) {
            files.insert(format!("{dir}/selection.json"), json(&r.text.selection.report(&level.pool)));
            files.insert(format!("{dir}/text_embeddings.tqxe"), encode(&r.text.embeddings));
            let weights = r.text.weights_matrix().map_err(CliError::stage("render"))?;
            files.insert(format!("{dir}/weights.tqxe"), encode(&weights));
        }
        if let Some((result, report)) = &e.clustering {
            let artifact = ClusterArtifact {
                embedding: &e.name,
                distance: config.clustering.distance,
                seed: result.seed,
                max_iter: config.clustering.max_iter,
                tol: config.clustering.tol,
                n_restarts: config.clustering.n_restarts,
                class_order,
                ids: e.features.ids(),
                assignments: &result.assignments,
                centroids: (0..result.k).map(|c| result.centroid(c)).collect(),
                inertia_trace: &result.inertia_trace,
                report,
            };
            files.insert(format!("{dir}/clusters.json"), json(&artifact));
            files.insert(format!("{dir}/clusters.csv"), clusters_csv(e.features.ids(), result, report));
        }
        if let Some(set) = &e.classification {
            let split = prepared.split.as_ref().expect("prepared");
            let artifact = ClassificationArtifact {
                embedding: &e.name,
                class_order,
                cancer_classes: &config.dataset.cancer_classes,
                n_train: split.train.len(),
                n_test: split.test.len(),
                train_config: &config.classifier.train,
                metrics: set,
            };
            files.insert(format!("{dir}/classification.json"), json(&artifact));
        }
    }

    let dataset = &config.dataset.name;
    let clustered: Vec<(String, &ClusterReport)> = outcome
        .embeddings
        .iter()
        .filter_map(|e| e.clustering.as_ref().map(|(_, r)| (e.name.clone(), r)))
        .collect();
    if !clustered.is_empty() {
        let rows: Vec<(String, f64)> = clustered.iter().map(|(n, r)| (n.clone(), r.silhouette_mean)).collect();
        files.insert("silhouette.md".into(), report::silhouette_table(dataset, &rows).into_bytes());
        files.insert("clusters.md".into(), report::cluster_summary(class_order, &clustered).into_bytes());
    }
    let classified: Vec<(String, &MetricSet)> = outcome
        .embeddings
        .iter()
        .filter_map(|e| e.classification.as_ref().map(|m| (e.name.clone(), m)))
        .collect();
    if !classified.is_empty() {
        files.insert(
            "classification.md".into(),
            report::classification_table(dataset, &classified).into_bytes(),
        );
    }

    let summary = Summary {
        dataset,
        n_images: prepared.images.rows(),
        embeddings: outcome
            .embeddings
            .iter()
            .map(|e| {
                let m = e.classification.as_ref();
                SummaryRow {
                    embedding: &e.name,
                    directory: &e.slug,
                    dim: e.features.dim(),
                    n_selected: e.retrieval.as_ref().map(|r| r.text.n_selected()),
                    silhouette_mean: e.clustering.as_ref().map(|(_, r)| r.silhouette_mean),
                    matched_agreement: e
                        .clustering
                        .as_ref()
                        .and_then(|(_, r)| r.matching.as_ref())
                        .map(|m| m.agreement_ratio()),
                    acc: m.map(|m| m.acc),
                    acc_c: m.and_then(|m| m.acc_c),
                    macro_f1: m.map(|m| m.macro_f1),
                    kappa_quadratic: m.map(|m| m.kappa_quadratic),
                }
            })
            .collect(),
    };
    files.insert("summary.json".into(), json(&summary));
    Ok(files)
}

/// Fails if `out` exists and may not be replaced.
pub fn check_output(out: &Path, overwrite: bool) -> Result<()> {
    if out.exists() && !overwrite {
        return Err(CliError::input(out, "output directory already exists (pass --overwrite to replace it)"));
    }
    Ok(())
}

/// Writes `files` into a sibling staging directory and renames it to
/// `out`, so a failed write never leaves a partial run directory behind.
pub fn write_run_dir(out: &Path, files: &Artifacts, overwrite: bool) -> Result<()> {
    check_output(out, overwrite)?;
    let name = out
        .file_name()
        .ok_or_else(|| CliError::input(out, "output path has no final component"))?;
    let staging = out.with_file_name(format!(".{}.partial", name.to_string_lossy()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
    }
    let result = (|| {
        for (rel, bytes) in files {
            let path = staging.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
            }
            fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        }
        if out.exists() {
            fs::remove_dir_all(out).map_err(|e| CliError::io(out, e))?;
        }
        fs::rename(&staging, out).map_err(|e| CliError::io(out, e))
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

/// Validates, runs and renders a full pipeline.
pub fn run_pipeline(config: RunConfig) -> Result<Artifacts> {
    let plan = Plan::full(&config);
    let prepared = prepare(config, plan)?;
    render(&execute(prepared)?)
}

/// Pool files for every configured level plus their statistics.
pub fn pool_artifacts(records_path: &Path, levels: &[LevelSpec]) -> Result<Artifacts> {
    let pool = WoiPool::read_jsonl(records_path).map_err(validation_at(records_path))?;
    let mut files = Artifacts::new();
    let mut stats = BTreeMap::new();
    for spec in levels {
        let level = if spec.semantic_types.is_empty() {
            pool.clone().with_level_name(&spec.name)
        } else {
            filter_by_semantic_type(&pool, &spec.type_set(), &spec.name)
                .map_err(|e| CliError::Config(format!("level `{}`: {e}", spec.name)))?
        };
        stats.insert(spec.name.clone(), pool_stats(&level));
        files.insert(format!("{}.jsonl", spec.slug()), level.to_jsonl().into_bytes());
    }
    files.insert("pool_stats.json".into(), json(&stats));
    Ok(files)
}

/// A self-contained synthetic dataset together with a config that runs it.
pub fn synthetic_artifacts(cfg: &SyntheticConfig) -> Result<Artifacts> {
    let fx = generate_synthetic(cfg).map_err(CliError::Validation)?;
    let mut files = Artifacts::new();
    files.insert("images.tqxe".into(), encode(&fx.images));
    files.insert("keywords.tqxe".into(), encode(&fx.keywords));
    files.insert("pool.jsonl".into(), fx.pool.to_jsonl().into_bytes());
    let table = LabelTable::from_pairs(fx.images.ids().iter().map(String::as_str).zip(fx.label_names()));
    files.insert("labels.csv".into(), table.to_csv().into_bytes());

    let mut config = RunConfig::default();
    config.data.image_embeddings = Some("images.tqxe".into());
    config.data.keyword_embeddings = Some("keywords.tqxe".into());
    config.data.pool = Some("pool.jsonl".into());
    config.data.labels = Some("labels.csv".into());
    config.dataset.name = "synthetic".into();
    config.dataset.class_order = fx.class_names.clone();
    config.dataset.cancer_classes = fx.class_names[1..].to_vec();
    config.seed = cfg.seed;
    files.insert("config.toml".into(), config.to_toml().into_bytes());
    files.insert("synthetic.json".into(), json(cfg));
    Ok(files)
}
