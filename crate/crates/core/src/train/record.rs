use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const METRICS_HEADER: [&str; 6] = ["run_id", "seed", "epoch", "split", "metric_name", "value"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

/// The epoch whose weights were kept as "best", and by which criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestEpoch {
    pub epoch: usize,
    pub criterion: String,
    pub value: f64,
}

/// Everything a run produced apart from weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub rows: Vec<MetricRow>,
    pub best: Option<BestEpoch>,
    pub warnings: Vec<String>,
    pub notes: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn new(run_id: impl Into<String>, seed: u64, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            run_id: run_id.into(),
            seed,
            config: serde_json::to_value(config)?,
            rows: Vec::new(),
            best: None,
            warnings: Vec::new(),
            notes: BTreeMap::new(),
        })
    }

    pub fn push(&mut self, epoch: usize, split: &str, metric: &str, value: f64) {
        self.rows.push(MetricRow {
            epoch,
            split: split.to_string(),
            metric: metric.to_string(),
            value,
        });
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{}: {message}", self.run_id);
        self.warnings.push(message);
    }

    /// `(epoch, value)` pairs of one metric in recording order.
    pub fn series(&self, split: &str, metric: &str) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.metric == metric)
            .map(|r| (r.epoch, r.value))
            .collect()
    }

    pub fn last(&self, split: &str, metric: &str) -> Option<f64> {
        self.series(split, metric).last().map(|&(_, v)| v)
    }

    pub fn max(&self, split: &str, metric: &str) -> Option<f64> {
        self.series(split, metric).into_iter().map(|(_, v)| v).reduce(f64::max)
    }

    /// Writes the metrics stream; floats use the shortest round-trip form.
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(METRICS_HEADER)?;
        let seed = self.seed.to_string();
        for r in &self.rows {
            w.write_record([
                self.run_id.as_str(),
                seed.as_str(),
                &r.epoch.to_string(),
                &r.split,
                &r.metric,
                &format!("{}", r.value),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Config snapshot, best epoch, warnings and notes as one JSON document.
    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            run_id: &'a str,
            seed: u64,
            config: &'a serde_json::Value,
            best: &'a Option<BestEpoch>,
            warnings: &'a [String],
            notes: &'a BTreeMap<String, String>,
        }
        let s = Summary {
            run_id: &self.run_id,
            seed: self.seed,
            config: &self.config,
            best: &self.best,
            warnings: &self.warnings,
            notes: &self.notes,
        };
        std::fs::write(path, serde_json::to_string_pretty(&s)?)?;
        Ok(())
    }
}

/// Reads a metrics CSV back into `(run_id, seed, rows)`.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<(String, u64, MetricRow)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default().to_string();
        let parse_err = |what: &str| crate::Error::Config(format!("bad {what} in {}", path.display()));
        out.push((
            field(0),
            field(1).parse().map_err(|_| parse_err("seed"))?,
            MetricRow {
                epoch: field(2).parse().map_err(|_| parse_err("epoch"))?,
                split: field(3),
                metric: field(4),
                value: field(5).parse().map_err(|_| parse_err("value"))?,
            },
        ));
    }
    Ok(out)
}
