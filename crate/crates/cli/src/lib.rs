//! The `dao-align` command line: configuration, subcommands and exit codes.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dao_align_core::policy::CutoffMode;

pub use config::RunConfig;

/// Failures with a dedicated exit status. Anything else exits with 1.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("upstream failure: {0}")]
    Upstream(String),
    #[error("incomplete coverage: {what}; missing {} proposals: {}", .missing.len(), .missing.join(", "))]
    Coverage { what: String, missing: Vec<String> },
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Upstream(_) => 3,
            Failure::Coverage { .. } => 4,
        }
    }
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Failure>())
        .map_or(1, Failure::exit_code)
}

#[derive(Debug, Parser)]
#[command(
    name = "dao-align",
    version,
    about = "Score vote-decision policies against DAO governance outcomes"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Run configuration file (TOML).
    #[arg(long, short, global = true, env = "DAO_ALIGN_CONFIG")]
    pub config: Option<PathBuf>,
    /// Dataset store directory.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Directory for features, decisions and reports.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Majority share at or below which a proposal counts as contested.
    #[arg(long, global = true)]
    pub contested_threshold: Option<f64>,
    /// Minimum proposals a voter needs to enter the human benchmark.
    #[arg(long, global = true)]
    pub min_participation: Option<usize>,
    /// Market event window in days on each side of the close.
    #[arg(long, global = true)]
    pub window_days: Option<u32>,
    #[arg(long, global = true)]
    pub exclude_ties: bool,
    #[arg(long, global = true, value_enum, default_value_t = LogFormat::Json)]
    pub log_format: LogFormat,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum LogFormat {
    #[default]
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CutoffArg {
    ExAnte,
    ExPost,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch proposals, votes and market series into the dataset store.
    Ingest {
        #[arg(long)]
        snapshot_url: Option<String>,
        #[arg(long)]
        defillama_url: Option<String>,
        #[arg(long)]
        cmc_url: Option<String>,
    },
    /// Compute voting-dynamics and market-window features.
    Features,
    /// Run policies and write their decisions.
    Simulate {
        /// Baseline name or the configured LLM id; repeatable.
        #[arg(long = "policy")]
        policies: Vec<String>,
        #[arg(long = "cutoff", value_enum)]
        cutoffs: Vec<CutoffArg>,
    },
    /// Score every decision file and write the report JSON.
    Evaluate,
    /// Render the report JSON as Markdown and CSV tables.
    Report,
    /// Write a synthetic dataset and its ground truth.
    Generate {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        /// Ground-truth output; defaults to `<out>/ground_truth.json`.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

/// Loads the configuration and applies every flag.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &g.dataset {
        cfg.dataset_root = v.clone();
    }
    if let Some(v) = &g.out {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = g.workers {
        cfg.workers = v;
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.contested_threshold {
        cfg.thresholds.contested = v;
    }
    if let Some(v) = g.min_participation {
        cfg.thresholds.min_participation = v;
    }
    if let Some(v) = g.window_days {
        cfg.thresholds.window_days = v;
    }
    if g.exclude_ties {
        cfg.thresholds.exclude_ties = true;
    }
    match &cli.command {
        Command::Ingest {
            snapshot_url,
            defillama_url,
            cmc_url,
        } => {
            if let Some(v) = snapshot_url {
                cfg.ingest.snapshot_url = v.clone();
            }
            if let Some(v) = defillama_url {
                cfg.ingest.market.defillama_url = v.clone();
            }
            if let Some(v) = cmc_url {
                cfg.ingest.market.cmc_url = v.clone();
            }
        }
        Command::Simulate { policies, cutoffs } => {
            if !policies.is_empty() {
                cfg.policy.policies = policies.clone();
            }
            if !cutoffs.is_empty() {
                let mut modes = Vec::new();
                for c in cutoffs {
                    match c {
                        CutoffArg::ExAnte => modes.push(CutoffMode::ExAnte),
                        CutoffArg::ExPost => modes.push(CutoffMode::ExPost),
                        CutoffArg::Both => modes.extend([CutoffMode::ExAnte, CutoffMode::ExPost]),
                    }
                }
                modes.sort();
                modes.dedup();
                cfg.policy.cutoffs = modes;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one subcommand inside a worker pool of the configured size.
pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = resolve_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()?;
    pool.install(|| match &cli.command {
        Command::Ingest { .. } => commands::ingest(&cfg),
        Command::Features => commands::features(&cfg),
        Command::Simulate { .. } => commands::simulate(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Report => commands::report(&cfg),
        Command::Generate { scenario, truth } => {
            commands::generate(&cfg, scenario, truth.as_deref())
        }
    })
}
