//! Seed sweeps over patch sizes and imputation-loss ablations.

use std::path::{Path, PathBuf};

use adaptimpute::eval::mean_std;
use adaptimpute::train::{RunRecord, Variant};

use crate::config::ExperimentConfig;
use crate::experiment::run_train;
use crate::CliError;

pub const PATCH_FRACTIONS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];
pub const LAMBDA_MSE_SWEEP: [f64; 6] = [1.0, 0.1, 0.01, 0.0075, 0.005, 0.001];

/// Final-epoch and best-epoch target accuracy of one finished run.
pub fn target_accuracies(record: &RunRecord) -> Option<(f64, f64)> {
    Some((record.last("target", "accuracy")?, record.max("target", "accuracy")?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub n: usize,
    pub final_mean: f64,
    pub final_std: f64,
    pub best_mean: f64,
    pub best_std: f64,
    pub runs: Vec<PathBuf>,
}

fn run_cell(cfg: &ExperimentConfig, seeds: &[u64], data_dir: &Path, runs_dir: &Path) -> Result<CellStats, CliError> {
    let mut finals = Vec::new();
    let mut bests = Vec::new();
    let mut runs = Vec::new();
    for &seed in seeds {
        let mut c = cfg.clone();
        c.train.seed = seed;
        c.data.data_seed = seed;
        let out = run_train(&c, data_dir, runs_dir)?;
        let (f, b) = target_accuracies(&out.record)
            .ok_or_else(|| CliError::Usage(format!("run {} recorded no target accuracy", out.dir.display())))?;
        finals.push(f);
        bests.push(b);
        runs.push(out.dir);
    }
    let (final_mean, final_std) = mean_std(&finals);
    let (best_mean, best_std) = mean_std(&bests);
    Ok(CellStats {
        n: seeds.len(),
        final_mean,
        final_std,
        best_mean,
        best_std,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: Variant,
    pub fraction: f64,
    pub stats: CellStats,
}

/// Every variant at every fraction with otherwise identical settings.
/// Without a missing block imputation has nothing to do, so at fraction 0
/// it runs as the observed-only adaptation.
pub fn sweep_patch(
    base: &ExperimentConfig,
    fractions: &[f64],
    variants: &[Variant],
    seeds: &[u64],
    data_dir: &Path,
    runs_dir: &Path,
) -> Result<Vec<SweepRow>, CliError> {
    let mut rows = Vec::new();
    for &fraction in fractions {
        for &variant in variants {
            let mut cfg = base.clone();
            cfg.data.patch_fraction = fraction;
            cfg.train.variant = if fraction == 0.0 && variant.imputes() {
                Variant::AdaptIgnore
            } else {
                variant
            };
            let stats = run_cell(&cfg, seeds, data_dir, runs_dir)?;
            log::info!("fraction {fraction} {variant}: {:.4}", stats.final_mean);
            rows.push(SweepRow {
                variant,
                fraction,
                stats,
            });
        }
    }
    Ok(rows)
}

fn write_rows(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Core(e.into()))?;
    w.write_record(header).map_err(|e| CliError::Core(e.into()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::Core(e.into()))?;
    }
    w.flush().map_err(|e| CliError::Io(path.display().to_string(), e))
}

fn stat_fields(s: &CellStats) -> [String; 5] {
    [
        s.n.to_string(),
        format!("{}", s.final_mean),
        format!("{}", s.final_std),
        format!("{}", s.best_mean),
        format!("{}", s.best_std),
    ]
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), CliError> {
    let body = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.variant.as_str().to_string(), format!("{}", r.fraction)];
            v.extend(stat_fields(&r.stats));
            v
        })
        .collect();
    write_rows(
        path,
        &["variant", "fraction", "n", "final_mean", "final_std", "best_mean", "best_std"],
        body,
    )
}

/// Composition of the imputation loss in one ablation cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImputationLoss {
    MseOnly,
    AdvOnly,
    /// Adversarial plus regression weighted by the given factor.
    AdvPlusMse(f64),
}

impl ImputationLoss {
    pub fn label(&self) -> String {
        match self {
            ImputationLoss::MseOnly => "MSE".into(),
            ImputationLoss::AdvOnly => "ADV".into(),
            ImputationLoss::AdvPlusMse(w) if *w == 1.0 => "ADV+MSE".into(),
            ImputationLoss::AdvPlusMse(w) => format!("ADV+{w}MSE"),
        }
    }

    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        let t = &mut cfg.train;
        match *self {
            ImputationLoss::MseOnly => {
                t.adversarial_imputation = false;
                t.weights.lambda_mse = 1.0;
            }
            ImputationLoss::AdvOnly => {
                t.adversarial_imputation = true;
                t.weights.lambda_mse = 0.0;
            }
            ImputationLoss::AdvPlusMse(w) => {
                t.adversarial_imputation = true;
                t.weights.lambda_mse = w;
            }
        }
    }
}

pub const ABLATION_LOSSES: [ImputationLoss; 4] = [
    ImputationLoss::MseOnly,
    ImputationLoss::AdvOnly,
    ImputationLoss::AdvPlusMse(0.005),
    ImputationLoss::AdvPlusMse(1.0),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub loss: ImputationLoss,
    pub with_alignment: bool,
    pub stats: CellStats,
}

/// Imputation-loss compositions crossed with and without domain alignment.
/// Without alignment `lambda1` is zero. `losses` defaults to the four
/// standard compositions.
pub fn ablate(
    base: &ExperimentConfig,
    losses: &[ImputationLoss],
    seeds: &[u64],
    data_dir: &Path,
    runs_dir: &Path,
) -> Result<Vec<AblationRow>, CliError> {
    if !base.train.variant.imputes() {
        return Err(CliError::Usage("ablation needs train.variant = adapt_impute".into()));
    }
    let mut rows = Vec::new();
    for &with_alignment in &[true, false] {
        for &loss in losses {
            let mut cfg = base.clone();
            loss.apply(&mut cfg);
            if !with_alignment {
                cfg.train.weights.lambda1 = 0.0;
            }
            let stats = run_cell(&cfg, seeds, data_dir, runs_dir)?;
            rows.push(AblationRow {
                loss,
                with_alignment,
                stats,
            });
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<(), CliError> {
    let body = rows
        .iter()
        .map(|r| {
            let mut v = vec![
                r.loss.label(),
                if r.with_alignment { "with_l1" } else { "without_l1" }.to_string(),
            ];
            v.extend(stat_fields(&r.stats));
            v
        })
        .collect();
    write_rows(
        path,
        &["imputation_loss", "alignment", "n", "final_mean", "final_std", "best_mean", "best_std"],
        body,
    )
}
