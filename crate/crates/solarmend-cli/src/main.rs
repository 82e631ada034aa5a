//! `solarmend`: impute missing PV fleet power data.
//!
//! One subcommand per pipeline stage, each writing inspectable files:
//! ingest → profile → augment → corrupt → train → impute → evaluate, plus
//! `synth` for test fleets and `experiment` for scenario grids, sparsity
//! sweeps, and ablations.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;
use pipeline::{ExperimentArgs, Method};
use solarmend::data::{CorruptionConfig, MissingType};

#[derive(Parser)]
#[command(
    name = "solarmend",
    version,
    about = "Spatiotemporal imputation for PV fleet timeseries"
)]
struct Cli {
    /// TOML configuration file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Data CSV (timestamp,inverter_id,power[,g_poa,t_module]).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Metadata CSV (inverter_id,site_id,lon,lat,p_nameplate,p_norm,gamma_t).
    #[arg(long, global = true)]
    metadata: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed; every stage seed derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Corruption type for training/evaluation scenarios.
    #[arg(long, global = true, value_parser = ["mcar", "bm"])]
    missing_type: Option<String>,
    /// MCAR rate in [0,1] or BM block length in 5-minute steps.
    #[arg(long, global = true)]
    missing_param: Option<f64>,
    /// Graph sparsity threshold in [0,1].
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Disable the physics validator (domain-knowledge ablation).
    #[arg(long, global = true)]
    no_domain_knowledge: bool,
    /// Disable the augmentation stage (imputation-library ablation).
    #[arg(long, global = true)]
    no_augmentation: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align a raw fleet CSV onto the 5-minute grid.
    Ingest,
    /// Census of missing-data patterns across attributes.
    Profile,
    /// Generate a synthetic fleet (data.csv + metadata.csv).
    Synth,
    /// Fill missing data with a library imputer under physics validation.
    Augment,
    /// Inject a corruption mask into fully observed data.
    Corrupt,
    /// Train the graph autoencoder; writes checkpoint.bin.
    Train,
    /// Impute a series using a trained checkpoint.
    Impute {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score an imputed series against ground truth and a mask.
    Evaluate {
        /// Ground-truth data CSV.
        #[arg(long)]
        truth: PathBuf,
        /// Corruption mask CSV (timestamp,inverter_id,kept).
        #[arg(long)]
        mask: PathBuf,
    },
    /// Run missing-scenario grids, sparsity sweeps, and ablations.
    Experiment {
        /// Train a fresh model rather than loading a checkpoint.
        #[arg(long)]
        train: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sweep graph sparsity over {0, 0.25, 0.5, 0.75, 1.0}
        /// (trains one model per value).
        #[arg(long)]
        epsilon_sweep: bool,
        /// Comma-separated methods: stdgae, mean, li, knn, mice, mida,
        /// lrtc_tnn, or all.
        #[arg(long)]
        method: Option<String>,
        /// Evaluate only the single scenario from the corruption config
        /// instead of the 12-scenario grid.
        #[arg(long)]
        single_scenario: bool,
    },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(data) = &cli.data {
        config.paths.data = Some(data.clone());
    }
    if let Some(metadata) = &cli.metadata {
        config.paths.metadata = Some(metadata.clone());
    }
    if let Some(out) = &cli.out {
        config.paths.out = Some(out.clone());
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(epochs) = cli.epochs {
        config.train.epochs = epochs;
    }
    if let Some(epsilon) = cli.epsilon {
        config.train.epsilon_graph = epsilon;
    }
    match (&cli.missing_type, cli.missing_param) {
        (Some(kind), param) => {
            let missing_type = match kind.as_str() {
                "mcar" => MissingType::Mcar,
                "bm" => MissingType::Bm,
                other => bail!("unknown missing type {other:?}"),
            };
            let parameter = param.unwrap_or(match missing_type {
                MissingType::Mcar => 0.3,
                MissingType::Bm => 72.0,
            });
            config.corruption = CorruptionConfig {
                missing_type,
                parameter,
                seed: config.corruption.seed,
            };
        }
        (None, Some(param)) => {
            config.corruption.parameter = param;
        }
        (None, None) => {}
    }
    if cli.no_domain_knowledge {
        config.augmentation.validator.enabled = false;
    }
    if cli.no_augmentation {
        config.augmentation.enabled = false;
    }
    // Stage seeds always derive from the root seed.
    config.derive_stage_seeds();
    config.corruption.validate().map_err(anyhow::Error::from)?;
    config.train.validate().map_err(anyhow::Error::from)?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    match &cli.command {
        Command::Ingest => pipeline::cmd_ingest(&config),
        Command::Profile => pipeline::cmd_profile(&config),
        Command::Synth => pipeline::cmd_synth(&config),
        Command::Augment => pipeline::cmd_augment(&config),
        Command::Corrupt => pipeline::cmd_corrupt(&config),
        Command::Train => pipeline::cmd_train(&config, cli.epsilon),
        Command::Impute { checkpoint } => pipeline::cmd_impute(&config, checkpoint, cli.epsilon),
        Command::Evaluate { truth, mask } => pipeline::cmd_evaluate(&config, truth, mask),
        Command::Experiment {
            train,
            checkpoint,
            epsilon_sweep,
            method,
            single_scenario,
        } => {
            let methods = match method {
                Some(names) => Method::parse_list(names)?,
                None => vec![Method::StdGae],
            };
            pipeline::cmd_experiment(
                &config,
                &ExperimentArgs {
                    train: *train,
                    checkpoint: checkpoint.clone(),
                    epsilon: cli.epsilon,
                    epsilon_sweep: *epsilon_sweep,
                    methods,
                    single_scenario: *single_scenario,
                },
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
