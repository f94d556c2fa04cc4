//! Command-line surface: `prepare`, `train`, `eval`, `sweep`, `count-params`.

pub mod commands;
pub mod config;
pub mod error;
pub mod format;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use comdense::kg_data::Split;
use comdense::model::ModelConfig;

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "comdense",
    version,
    about = "Knowledge graph link prediction experiments"
)]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a directory of train/valid/test TSV files.
    Prepare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds (overrides `seeds`).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Override a config key, e.g. `--set model.width=100`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint under the filtered protocol.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Data directory; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-query ranks as TSV.
        #[arg(long)]
        records: bool,
    },
    /// Train and compare one config per value along an axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// width, depth or variant
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the parameter count by group.
    CountParams {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, requires = "relations")]
        entities: Option<usize>,
        /// Base relation count, without inverses.
        #[arg(long, requires = "entities")]
        relations: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn load_config(
    path: &std::path::Path,
    overrides: &[String],
    out: Option<PathBuf>,
    seeds: Option<Vec<u64>>,
) -> Result<config::RunConfig, CliError> {
    let mut c = config::load(path, overrides)?;
    if let Some(out) = out {
        c.out = out;
    }
    if let Some(seeds) = seeds {
        c.seeds = seeds;
    }
    c.validate()?;
    Ok(c)
}

/// Apply `COMDENSE_THREADS` to the global worker pool.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("COMDENSE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Validation(format!(
            "COMDENSE_THREADS={raw:?} is not a positive integer"
        ))
    })?;
    // A second call (e.g. from tests) finds the pool already built; that is fine.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

pub fn run(cli: Cli, w: &mut dyn Write) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Prepare { data, out } => commands::prepare(&data, &out, w),
        Command::Train {
            config,
            out,
            seeds,
            overrides,
        } => {
            let c = load_config(&config, &overrides, out, seeds)?;
            commands::train(&c, w).map(|_| ())
        }
        Command::Eval {
            checkpoint,
            split,
            data,
            out,
            records,
        } => {
            let split: Split = split
                .parse()
                .map_err(|e: comdense::Error| CliError::Validation(e.to_string()))?;
            let args = commands::EvalArgs {
                checkpoint: &checkpoint,
                split,
                data: data.as_deref(),
                out: out.as_deref(),
                records,
            };
            commands::evaluate(&args, w).map(|_| ())
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
            overrides,
        } => {
            let axis: commands::Axis = axis.parse()?;
            let c = load_config(&config, &overrides, out, None)?;
            commands::sweep(&c, axis, &values, w).map(|_| ())
        }
        Command::CountParams {
            config,
            entities,
            relations,
            overrides,
        } => {
            let c = config
                .map(|p| load_config(&p, &overrides, None, None))
                .transpose()?;
            let model = c
                .as_ref()
                .map(|c| c.model.clone())
                .unwrap_or_else(ModelConfig::default);
            let (e, r) = match (entities, relations, &c) {
                (Some(e), Some(r), _) => (e, r),
                (_, _, Some(c)) => commands::vocab_sizes(&c.data)?,
                _ => return Err(CliError::Validation(
                    "count-params needs --config with a data path, or --entities and --relations"
                        .into(),
                )),
            };
            commands::count_params(&model, e, r, w).map(|_| ())
        }
    }
}
