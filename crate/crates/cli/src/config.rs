//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unset keys keep
//! their defaults; optional values accept `none`.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adaptimpute::data::DatasetName;
use adaptimpute::losses::ScheduleMode;
use adaptimpute::selftrain::EntropyMode;
use adaptimpute::train::{Backend, TrainConfig, Variant};
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataConfig {
    pub source: DatasetName,
    pub target: DatasetName,
    pub source_subsample: Option<usize>,
    pub target_subsample: Option<usize>,
    pub patch_fraction: f64,
    /// Share of the source set held out for model selection.
    pub val_fraction: f64,
    pub source_table: Option<PathBuf>,
    pub target_table: Option<PathBuf>,
    pub num_classes: usize,
    /// Tabular only: the target table holds real values in its missing block.
    pub target_full: bool,
    pub data_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticSettings {
    pub n_per_domain: usize,
    pub num_classes: usize,
    pub class_noise: f64,
    pub mode_offset: f64,
    pub mode_noise: f64,
    /// No domain shift between source and target.
    pub no_shift: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub strong_discriminator: bool,
    pub deep_generator: bool,
    pub f64: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineSettings {
    pub enabled: bool,
    pub epochs: usize,
    /// Defaults to a tenth of the training rate.
    pub lr: Option<f64>,
    pub lambda: f64,
    pub threshold: f64,
    pub entropy: EntropyMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub synthetic: SyntheticSettings,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub refine: RefineSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig {
                source: DatasetName::Synthetic,
                target: DatasetName::Synthetic,
                source_subsample: None,
                target_subsample: None,
                patch_fraction: 0.5,
                val_fraction: 0.1,
                source_table: None,
                target_table: None,
                num_classes: 2,
                target_full: false,
                data_seed: 0,
            },
            synthetic: SyntheticSettings {
                n_per_domain: 2000,
                num_classes: 4,
                class_noise: 1.2,
                mode_offset: 1.0,
                mode_noise: 0.3,
                no_shift: false,
            },
            train: TrainConfig {
                epochs: 10,
                lr: 1e-3,
                ..TrainConfig::default()
            },
            model: ModelConfig {
                strong_discriminator: false,
                deep_generator: false,
                f64: false,
            },
            refine: RefineSettings {
                enabled: false,
                epochs: 10,
                lr: None,
                lambda: 0.1,
                threshold: 0.95,
                entropy: EntropyMode::Minimize,
            },
        }
    }
}

fn parse<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn parse_opt<T: FromStr>(v: &str) -> Result<Option<T>, String> {
    if v == "none" {
        Ok(None)
    } else {
        parse(v).map(Some)
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn show_opt<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), |x| x.to_string())
}

fn schedule_str(s: ScheduleMode) -> &'static str {
    match s {
        ScheduleMode::Constant => "constant",
        ScheduleMode::Ramp => "ramp",
    }
}

fn entropy_str(e: EntropyMode) -> &'static str {
    match e {
        EntropyMode::Minimize => "minimize",
        EntropyMode::Literal => "literal",
    }
}

impl ExperimentConfig {
    /// Every key in serialization order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.data;
        let s = &self.synthetic;
        let t = &self.train;
        let w = &t.weights;
        let m = &self.model;
        let r = &self.refine;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string());
        vec![
            ("data.source", d.source.as_str().into()),
            ("data.target", d.target.as_str().into()),
            ("data.source_subsample", show_opt(&d.source_subsample)),
            ("data.target_subsample", show_opt(&d.target_subsample)),
            ("data.patch_fraction", d.patch_fraction.to_string()),
            ("data.val_fraction", d.val_fraction.to_string()),
            ("data.source_table", path(&d.source_table)),
            ("data.target_table", path(&d.target_table)),
            ("data.num_classes", d.num_classes.to_string()),
            ("data.target_full", d.target_full.to_string()),
            ("data.seed", d.data_seed.to_string()),
            ("synthetic.n_per_domain", s.n_per_domain.to_string()),
            ("synthetic.num_classes", s.num_classes.to_string()),
            ("synthetic.class_noise", s.class_noise.to_string()),
            ("synthetic.mode_offset", s.mode_offset.to_string()),
            ("synthetic.mode_noise", s.mode_noise.to_string()),
            ("synthetic.no_shift", s.no_shift.to_string()),
            ("train.backend", t.backend.as_str().into()),
            ("train.variant", t.variant.as_str().into()),
            ("train.seed", t.seed.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.decay", t.decay.to_string()),
            ("train.fast_decay", show_opt(&t.fast_decay)),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.init_epochs", t.init_epochs.to_string()),
            ("train.ot_warmup_epochs", t.ot_warmup_epochs.to_string()),
            ("train.balanced_source", t.balanced_source.to_string()),
            ("train.adversarial_imputation", t.adversarial_imputation.to_string()),
            ("train.eval_batch_size", t.eval_batch_size.to_string()),
            ("loss.lambda1", w.lambda1.to_string()),
            ("loss.lambda2", w.lambda2.to_string()),
            ("loss.lambda3", w.lambda3.to_string()),
            ("loss.lambda_mse", w.lambda_mse.to_string()),
            ("loss.lambda_ot", w.lambda_ot.to_string()),
            ("loss.schedule", schedule_str(w.schedule).into()),
            ("model.strong_discriminator", m.strong_discriminator.to_string()),
            ("model.deep_generator", m.deep_generator.to_string()),
            ("model.f64", m.f64.to_string()),
            ("refine.enabled", r.enabled.to_string()),
            ("refine.epochs", r.epochs.to_string()),
            ("refine.lr", show_opt(&r.lr)),
            ("refine.lambda", r.lambda.to_string()),
            ("refine.threshold", r.threshold.to_string()),
            ("refine.entropy", entropy_str(r.entropy).into()),
        ]
    }

    /// Sets one key. `Ok(false)` means the key is unknown.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool, String> {
        let d = &mut self.data;
        let s = &mut self.synthetic;
        let t = &mut self.train;
        let m = &mut self.model;
        let r = &mut self.refine;
        match key {
            "data.source" => d.source = v.parse().map_err(|e: adaptimpute::Error| e.to_string())?,
            "data.target" => d.target = v.parse().map_err(|e: adaptimpute::Error| e.to_string())?,
            "data.source_subsample" => d.source_subsample = parse_opt(v)?,
            "data.target_subsample" => d.target_subsample = parse_opt(v)?,
            "data.patch_fraction" => d.patch_fraction = parse(v)?,
            "data.val_fraction" => d.val_fraction = parse(v)?,
            "data.source_table" => d.source_table = parse_opt(v)?,
            "data.target_table" => d.target_table = parse_opt(v)?,
            "data.num_classes" => d.num_classes = parse(v)?,
            "data.target_full" => d.target_full = parse_bool(v)?,
            "data.seed" => d.data_seed = parse(v)?,
            "synthetic.n_per_domain" => s.n_per_domain = parse(v)?,
            "synthetic.num_classes" => s.num_classes = parse(v)?,
            "synthetic.class_noise" => s.class_noise = parse(v)?,
            "synthetic.mode_offset" => s.mode_offset = parse(v)?,
            "synthetic.mode_noise" => s.mode_noise = parse(v)?,
            "synthetic.no_shift" => s.no_shift = parse_bool(v)?,
            "train.backend" => t.backend = v.parse::<Backend>().map_err(|e| e.to_string())?,
            "train.variant" => t.variant = v.parse::<Variant>().map_err(|e| e.to_string())?,
            "train.seed" => t.seed = parse(v)?,
            "train.epochs" => t.epochs = parse(v)?,
            "train.batch_size" => t.batch_size = parse(v)?,
            "train.lr" => t.lr = parse(v)?,
            "train.decay" => t.decay = parse(v)?,
            "train.fast_decay" => t.fast_decay = parse_opt(v)?,
            "train.beta1" => t.beta1 = parse(v)?,
            "train.beta2" => t.beta2 = parse(v)?,
            "train.init_epochs" => t.init_epochs = parse(v)?,
            "train.ot_warmup_epochs" => t.ot_warmup_epochs = parse(v)?,
            "train.balanced_source" => t.balanced_source = parse_bool(v)?,
            "train.adversarial_imputation" => t.adversarial_imputation = parse_bool(v)?,
            "train.eval_batch_size" => t.eval_batch_size = parse(v)?,
            "loss.lambda1" => t.weights.lambda1 = parse(v)?,
            "loss.lambda2" => t.weights.lambda2 = parse(v)?,
            "loss.lambda3" => t.weights.lambda3 = parse(v)?,
            "loss.lambda_mse" => t.weights.lambda_mse = parse(v)?,
            "loss.lambda_ot" => t.weights.lambda_ot = parse(v)?,
            "loss.schedule" => {
                t.weights.schedule = match v {
                    "constant" => ScheduleMode::Constant,
                    "ramp" => ScheduleMode::Ramp,
                    _ => return Err(format!("unknown schedule `{v}`")),
                }
            }
            "model.strong_discriminator" => m.strong_discriminator = parse_bool(v)?,
            "model.deep_generator" => m.deep_generator = parse_bool(v)?,
            "model.f64" => m.f64 = parse_bool(v)?,
            "refine.enabled" => r.enabled = parse_bool(v)?,
            "refine.epochs" => r.epochs = parse(v)?,
            "refine.lr" => r.lr = parse_opt(v)?,
            "refine.lambda" => r.lambda = parse(v)?,
            "refine.threshold" => r.threshold = parse(v)?,
            "refine.entropy" => {
                r.entropy = match v {
                    "minimize" => EntropyMode::Minimize,
                    "literal" => EntropyMode::Literal,
                    _ => return Err(format!("unknown entropy mode `{v}`")),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Applies `key = value` pairs on top of `self`, collecting every problem.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<(), CliError> {
        let mut unknown = Vec::new();
        let mut invalid = Vec::new();
        for (k, v) in pairs {
            match self.set(k, v) {
                Ok(true) => {}
                Ok(false) => unknown.push(k.to_string()),
                Err(e) => invalid.push(format!("{k}: {e}")),
            }
        }
        if unknown.is_empty() && invalid.is_empty() {
            Ok(())
        } else {
            Err(CliError::Schema { unknown, invalid })
        }
    }

    pub fn parse_str(text: &str) -> Result<Self, CliError> {
        let mut pairs = Vec::new();
        let mut malformed = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    let k = k.trim();
                    if !seen.insert(k) {
                        malformed.push(format!("line {}: duplicate key `{k}`", n + 1));
                    }
                    pairs.push((k, v.trim()));
                }
                None => malformed.push(format!("line {}: expected `key = value`", n + 1)),
            }
        }
        let mut cfg = Self::default();
        let applied = cfg.apply(pairs);
        match (applied, malformed.is_empty()) {
            (Ok(()), true) => Ok(cfg),
            (Ok(()), false) => Err(CliError::Schema {
                unknown: Vec::new(),
                invalid: malformed,
            }),
            (Err(CliError::Schema { unknown, mut invalid }), _) => {
                invalid.extend(malformed);
                Err(CliError::Schema { unknown, invalid })
            }
            (Err(e), _) => Err(e),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
        Self::parse_str(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// `usps-mnist`, `synthetic`, ...
    pub fn dataset_label(&self) -> String {
        if self.data.source == self.data.target {
            self.data.source.as_str().to_string()
        } else {
            format!("{}-{}", self.data.source.as_str(), self.data.target.as_str())
        }
    }

    /// Seed-stable identifier written into every metrics row.
    pub fn run_id(&self) -> String {
        format!(
            "{}_{}_{}_{}",
            self.dataset_label(),
            self.train.variant.as_str(),
            self.train.backend.as_str(),
            self.train.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse_str(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_and_invalid_keys_are_all_listed() {
        let err = ExperimentConfig::parse_str("train.epochz = 3\nfoo = 1\ntrain.lr = fast\n").unwrap_err();
        match err {
            CliError::Schema { unknown, invalid } => {
                assert_eq!(unknown, vec!["train.epochz", "foo"]);
                assert_eq!(invalid.len(), 1);
                assert!(invalid[0].starts_with("train.lr"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = ExperimentConfig::parse_str("# base\ntrain.variant = adapt_zero\n\nrefine.lr = 0.0005\n").unwrap();
        assert_eq!(cfg.train.variant, Variant::AdaptZero);
        assert_eq!(cfg.refine.lr, Some(0.0005));
        assert_eq!(cfg.run_id(), "synthetic_adapt_zero_adv_0");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        assert!(ExperimentConfig::parse_str("train.seed = 1\ntrain.seed = 2\n").is_err());
    }
}
