//! Subcommand definitions and dispatch.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use tqx_core::io::encode;
use tqx_core::synthetic::SyntheticConfig;

use crate::config::{LevelSpec, Overrides, RunConfig};
use crate::error::{CliError, Result};
use crate::fetch::{read_items, ProviderClient, DEFAULT_BATCH, DEFAULT_CONCURRENCY};
use crate::pipeline::{
    check_output, execute, pool_artifacts, prepare, render, synthetic_artifacts, write_run_dir, Plan,
};

#[derive(Debug, Parser)]
#[command(name = "tqx", version, about = "Text-based quantification of image embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build keyword pools for every configured level.
    Pool(PoolArgs),
    /// Compute text-based image embeddings for every level.
    Quantify(StageArgs),
    /// Cluster one embedding matrix.
    Cluster(StageArgs),
    /// Train and evaluate the classifier on one embedding matrix.
    Classify(StageArgs),
    /// Run the full pipeline.
    Run(StageArgs),
    /// Generate a synthetic dataset with a ready-to-run config.
    Synth(SynthArgs),
    /// Fetch embeddings from a remote provider.
    Fetch(FetchArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Image (or any input) embeddings, TQXE or CSV.
    #[arg(long, alias = "embeddings")]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    /// Entity records or a saved pool, JSON lines.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// CSV `id,label`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// CSV `id,partition`.
    #[arg(long)]
    pub split: Option<PathBuf>,
}

impl DataArgs {
    fn apply(&self, c: &mut RunConfig) {
        let d = &mut c.data;
        for (src, dst) in [
            (&self.images, &mut d.image_embeddings),
            (&self.keywords, &mut d.keyword_embeddings),
            (&self.pool, &mut d.pool),
            (&self.labels, &mut d.labels),
            (&self.split, &mut d.split),
        ] {
            if src.is_some() {
                *dst = src.clone();
            }
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct StageArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing run directory.
    #[arg(long)]
    pub overwrite: bool,
    /// Row name for the input embeddings in reports (cluster, classify).
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct PoolArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Entity records, JSON lines; defaults to `data.pool` of the config.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Build a single level with this name instead of the configured ones.
    #[arg(long, requires = "types")]
    pub level: Option<String>,
    /// Semantic types of `--level`.
    #[arg(long, num_args = 1..)]
    pub types: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub overwrite: bool,
    #[arg(long, default_value_t = SyntheticConfig::default().n_clusters)]
    pub clusters: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().images_per_cluster)]
    pub per_cluster: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().n_keywords)]
    pub keywords: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().dim)]
    pub dim: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().margin)]
    pub margin: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().noise)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct FetchArgs {
    /// Provider URL.
    #[arg(long)]
    pub endpoint: String,
    /// Items to embed, JSON lines with `id` and `text` or `image`.
    #[arg(long)]
    pub items: PathBuf,
    /// Output TQXE file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub overwrite: bool,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Expected embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_BATCH)]
    pub batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_CONCURRENCY)]
    pub concurrency: usize,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn stage_config(args: &StageArgs) -> Result<RunConfig> {
    let mut config = load_config(args.config.as_deref())?;
    args.data.apply(&mut config);
    args.overrides.apply(&mut config);
    Ok(config)
}

fn direct_name(args: &StageArgs, config: &RunConfig) -> String {
    args.name.clone().unwrap_or_else(|| {
        config
            .data
            .image_embeddings
            .as_deref()
            .and_then(Path::file_stem)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "embeddings".into())
    })
}

fn run_stages(args: &StageArgs, plan_for: impl FnOnce(&RunConfig) -> Plan) -> Result<()> {
    let config = stage_config(args)?;
    check_output(&args.out, args.overwrite)?;
    let plan = plan_for(&config);
    let prepared = prepare(config, plan)?;
    let files = render(&execute(prepared)?)?;
    write_run_dir(&args.out, &files, args.overwrite)?;
    info!("wrote {} files to {}", files.len(), args.out.display());
    Ok(())
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run_stages(&args, Plan::full),
        Command::Quantify(args) => run_stages(&args, |_| Plan {
            retrieval: true,
            clustering: false,
            classification: false,
            direct: None,
        }),
        Command::Cluster(ref args) => run_stages(args, |c| Plan {
            retrieval: false,
            clustering: true,
            classification: false,
            direct: Some(direct_name(args, c)),
        }),
        Command::Classify(ref args) => run_stages(args, |c| Plan {
            retrieval: false,
            clustering: false,
            classification: true,
            direct: Some(direct_name(args, c)),
        }),
        Command::Pool(args) => {
            let config = load_config(args.config.as_deref())?;
            let records = args
                .records
                .clone()
                .or(config.data.pool.clone())
                .ok_or_else(|| CliError::Config("pass --records or set data.pool".into()))?;
            let levels = match &args.level {
                Some(name) => vec![LevelSpec {
                    name: name.clone(),
                    semantic_types: args.types.clone(),
                }],
                None => config.levels.clone(),
            };
            check_output(&args.out, args.overwrite)?;
            let files = pool_artifacts(&records, &levels)?;
            write_run_dir(&args.out, &files, args.overwrite)
        }
        Command::Synth(args) => {
            let cfg = SyntheticConfig {
                n_clusters: args.clusters,
                images_per_cluster: args.per_cluster,
                n_keywords: args.keywords,
                dim: args.dim,
                margin: args.margin,
                noise: args.noise,
                seed: args.seed,
            };
            check_output(&args.out, args.overwrite)?;
            let files = synthetic_artifacts(&cfg)?;
            write_run_dir(&args.out, &files, args.overwrite)
        }
        Command::Fetch(args) => {
            if args.out.exists() && !args.overwrite {
                return Err(CliError::input(&args.out, "already exists (pass --overwrite to replace it)"));
            }
            if args.batch_size == 0 || args.concurrency == 0 {
                return Err(CliError::Config("batch size and concurrency must be positive".into()));
            }
            let items = read_items(&args.items)?;
            let mut client = ProviderClient::new(&args.endpoint);
            client.batch_size = args.batch_size;
            client.concurrency = args.concurrency;
            client.expected_dim = args.dim;
            client.cache_dir = args.cache_dir.clone();
            let matrix = client.fetch(&items)?;
            let tmp = args.out.with_extension("tqxe.partial");
            fs::write(&tmp, encode(&matrix)).map_err(|e| CliError::io(&tmp, e))?;
            fs::rename(&tmp, &args.out).map_err(|e| CliError::io(&args.out, e))
        }
    }
}
