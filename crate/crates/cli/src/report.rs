//! Aggregation of finished runs into tables and plot data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use adaptimpute::eval::mean_std;
use adaptimpute::train::{read_metrics_csv, MetricRow};

use crate::config::ExperimentConfig;
use crate::experiment::{load_run_config, METRICS_FILE, REFINE_METRICS_FILE};
use crate::CliError;

/// Splits whose last value is reported per run.
const REPORTED_SPLITS: [&str; 3] = ["source", "source_val", "target"];

/// `(dataset, variant, backend)`.
pub type GroupKey = (String, String, String);

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub group: GroupKey,
    pub seed: u64,
    /// Last-epoch values plus `target_accuracy_best`; refinement metrics carry a `refined_` prefix.
    pub metrics: BTreeMap<String, f64>,
    pub rows: Vec<MetricRow>,
}

fn last_values(rows: &[MetricRow], prefix: &str, out: &mut BTreeMap<String, f64>) {
    for r in rows {
        if REPORTED_SPLITS.contains(&r.split.as_str()) {
            out.insert(format!("{prefix}{}_{}", r.split, r.metric), r.value);
        }
    }
}

pub fn group_of(cfg: &ExperimentConfig) -> GroupKey {
    (
        cfg.dataset_label(),
        cfg.train.variant.as_str().to_string(),
        cfg.train.backend.as_str().to_string(),
    )
}

pub fn summarize_run(dir: &Path) -> Result<RunSummary, CliError> {
    let cfg = load_run_config(dir)?;
    let rows: Vec<MetricRow> = read_metrics_csv(&dir.join(METRICS_FILE))?.into_iter().map(|r| r.2).collect();
    let mut metrics = BTreeMap::new();
    last_values(&rows, "", &mut metrics);
    if let Some(best) = rows
        .iter()
        .filter(|r| r.split == "target" && r.metric == "accuracy")
        .map(|r| r.value)
        .reduce(f64::max)
    {
        metrics.insert("target_accuracy_best".into(), best);
    }
    let refine_path = dir.join(REFINE_METRICS_FILE);
    if refine_path.is_file() {
        let refined: Vec<MetricRow> = read_metrics_csv(&refine_path)?.into_iter().map(|r| r.2).collect();
        last_values(&refined, "refined_", &mut metrics);
    }
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        group: group_of(&cfg),
        seed: cfg.train.seed,
        metrics,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub group: GroupKey,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// Best mean among the variants sharing dataset, backend and metric.
    pub best: bool,
}

fn lower_is_better(metric: &str) -> bool {
    metric.contains("cross_entropy") || metric.contains("loss")
}

/// Mean and standard deviation over seeds for every `(group, metric)`.
pub fn aggregate(runs: &[RunSummary]) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<(GroupKey, String), Vec<f64>> = BTreeMap::new();
    for r in runs {
        for (m, v) in &r.metrics {
            cells.entry((r.group.clone(), m.clone())).or_default().push(*v);
        }
    }
    let mut rows: Vec<AggregateRow> = cells
        .into_iter()
        .map(|((group, metric), values)| {
            let (mean, std) = mean_std(&values);
            AggregateRow {
                group,
                metric,
                n: values.len(),
                mean,
                std,
                best: false,
            }
        })
        .collect();
    let mut winners: BTreeMap<(String, String, String), f64> = BTreeMap::new();
    for r in &rows {
        let key = (r.group.0.clone(), r.group.2.clone(), r.metric.clone());
        let better = |a: f64, b: f64| if lower_is_better(&r.metric) { a < b } else { a > b };
        match winners.get(&key) {
            Some(&w) if !better(r.mean, w) => {}
            _ => {
                winners.insert(key, r.mean);
            }
        }
    }
    for r in &mut rows {
        r.best = winners.get(&(r.group.0.clone(), r.group.2.clone(), r.metric.clone())) == Some(&r.mean);
    }
    rows
}

/// Per-epoch mean and standard deviation of every target metric, for learning curves.
pub fn curves(runs: &[RunSummary]) -> Vec<(GroupKey, String, usize, usize, f64, f64)> {
    let mut cells: BTreeMap<(GroupKey, String, usize), Vec<f64>> = BTreeMap::new();
    for r in runs {
        for row in r.rows.iter().filter(|row| row.split == "target") {
            cells
                .entry((r.group.clone(), row.metric.clone(), row.epoch))
                .or_default()
                .push(row.value);
        }
    }
    cells
        .into_iter()
        .map(|((g, m, e), v)| {
            let (mean, std) = mean_std(&v);
            (g, m, e, v.len(), mean, std)
        })
        .collect()
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.display().to_string(), e)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Core(adaptimpute::Error::from(e))
}

/// Writes `report.csv`, `report.md` and `curves.csv` into `out_dir`.
pub fn write_report(runs: &[RunSummary], out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let rows = aggregate(runs);

    let table = out_dir.join("report.csv");
    let mut w = csv::Writer::from_path(&table).map_err(csv_err)?;
    w.write_record(["dataset", "variant", "backend", "metric", "n", "mean", "std", "best"])
        .map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            r.group.0.as_str(),
            &r.group.1,
            &r.group.2,
            &r.metric,
            &r.n.to_string(),
            &format!("{}", r.mean),
            &format!("{}", r.std),
            if r.best { "1" } else { "0" },
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io(&table))?;

    let mut md = String::new();
    let mut metrics: Vec<&str> = rows.iter().map(|r| r.metric.as_str()).collect();
    metrics.dedup();
    metrics.sort_unstable();
    metrics.dedup();
    for m in metrics {
        md.push_str(&format!("### {m}\n\n| dataset | backend | variant | mean ± std | n |\n|---|---|---|---|---|\n"));
        for r in rows.iter().filter(|r| r.metric == m) {
            let cell = format!("{:.4} ± {:.4}", r.mean, r.std);
            let cell = if r.best { format!("**{cell}**") } else { cell };
            md.push_str(&format!("| {} | {} | {} | {} | {} |\n", r.group.0, r.group.2, r.group.1, cell, r.n));
        }
        md.push('\n');
    }
    let md_path = out_dir.join("report.md");
    std::fs::write(&md_path, md).map_err(io(&md_path))?;

    let curve_path = out_dir.join("curves.csv");
    let mut w = csv::Writer::from_path(&curve_path).map_err(csv_err)?;
    w.write_record(["dataset", "variant", "backend", "metric", "epoch", "n", "mean", "std"])
        .map_err(csv_err)?;
    for (g, m, e, n, mean, std) in curves(runs) {
        w.write_record([
            g.0.as_str(),
            &g.1,
            &g.2,
            &m,
            &e.to_string(),
            &n.to_string(),
            &format!("{mean}"),
            &format!("{std}"),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io(&curve_path))?;
    Ok(vec![table, md_path, curve_path])
}
