use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptimpute::data::resolve_data_dir;
use adaptimpute::train::Variant;
use adaptimpute_cli::config::ExperimentConfig;
use adaptimpute_cli::experiment::{prepare_data, run_diagnose, run_export, run_refine, run_train};
use adaptimpute_cli::report::{summarize_run, write_report};
use adaptimpute_cli::sweep::{
    ablate, sweep_patch, write_ablation_csv, write_sweep_csv, ImputationLoss, ABLATION_LOSSES, LAMBDA_MSE_SWEEP,
    PATCH_FRACTIONS,
};
use adaptimpute_cli::{resolve_runs_dir, CliError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adaptimpute", version, about = "Domain adaptation with a missing target feature block")]
struct Cli {
    /// Dataset cache (falls back to $DATA_DIR, then ./data).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Where run directories are created (falls back to $RUNS_DIR, then ./runs).
    #[arg(long, global = true)]
    runs_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic tables, or check that digit/tabular data loads.
    PrepareData {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train one configuration into a fresh run directory.
    Train {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Self-train the best checkpoint of a run on confident target predictions.
    Refine {
        run_dir: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run every variant at several missing-patch sizes.
    SweepPatch {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = PATCH_FRACTIONS)]
        fractions: Vec<f64>,
        /// Defaults to all variants.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value = "sweep_patch.csv")]
        out: PathBuf,
    },
    /// Imputation-loss compositions with and without alignment.
    Ablate {
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Sweep the regression weight of ADV+MSE instead of the standard grid.
        #[arg(long)]
        mse_sweep: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
    },
    /// Bound-term diagnostics of a finished run.
    Diagnose { run_dir: PathBuf },
    /// Mean and standard deviation over seeds of finished runs.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// 2D projection of source and target latents.
    ExportEmbeddings {
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn split_pairs(set: &[String]) -> Result<Vec<(String, String)>, CliError> {
    set.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Usage(format!("`--set {s}` is not KEY=VALUE")))
        })
        .collect()
}

fn load_config(path: &Path, set: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    let pairs = split_pairs(set)?;
    cfg.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let data_dir = resolve_data_dir(cli.data_dir.as_deref());
    let runs_dir = resolve_runs_dir(cli.runs_dir.as_deref());
    match cli.command {
        Command::PrepareData { config, set } => {
            for line in prepare_data(&load_config(&config, &set)?, &data_dir)? {
                println!("{line}");
            }
        }
        Command::Train { config, set } => {
            let out = run_train(&load_config(&config, &set)?, &data_dir, &runs_dir)?;
            if let Some(acc) = out.record.last("target", "accuracy") {
                eprintln!("final target accuracy {acc:.4}");
            }
            println!("{}", out.dir.display());
        }
        Command::Refine { run_dir, set } => {
            let rec = run_refine(&run_dir, &data_dir, &split_pairs(&set)?)?;
            if let Some(acc) = rec.last("target", "accuracy") {
                eprintln!("refined target accuracy {acc:.4}");
            }
            println!("{}", run_dir.display());
        }
        Command::SweepPatch {
            config,
            fractions,
            variants,
            seeds,
            set,
            out,
        } => {
            let cfg = load_config(&config, &set)?;
            let variants: Vec<Variant> = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants.iter().map(|v| v.parse()).collect::<Result<_, _>>()?
            };
            let seeds: Vec<u64> = (0..seeds).collect();
            let rows = sweep_patch(&cfg, &fractions, &variants, &seeds, &data_dir, &runs_dir)?;
            write_sweep_csv(&rows, &out)?;
            println!("{}", out.display());
        }
        Command::Ablate {
            config,
            seeds,
            mse_sweep,
            set,
            out,
        } => {
            let cfg = load_config(&config, &set)?;
            let losses: Vec<ImputationLoss> = if mse_sweep {
                LAMBDA_MSE_SWEEP.iter().map(|&w| ImputationLoss::AdvPlusMse(w)).collect()
            } else {
                ABLATION_LOSSES.to_vec()
            };
            let seeds: Vec<u64> = (0..seeds).collect();
            let rows = ablate(&cfg, &losses, &seeds, &data_dir, &runs_dir)?;
            write_ablation_csv(&rows, &out)?;
            println!("{}", out.display());
        }
        Command::Diagnose { run_dir } => {
            let report = run_diagnose(&run_dir, &data_dir)?;
            let text = serde_json::to_string_pretty(&report).map_err(adaptimpute::Error::from)?;
            println!("{text}");
        }
        Command::Report { run_dirs, out } => {
            let runs = run_dirs.iter().map(|d| summarize_run(d)).collect::<Result<Vec<_>, _>>()?;
            for p in write_report(&runs, &out)? {
                println!("{}", p.display());
            }
        }
        Command::ExportEmbeddings { run_dir, out } => {
            let (path, n) = run_export(&run_dir, &data_dir, out.as_deref())?;
            eprintln!("{n} rows");
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
