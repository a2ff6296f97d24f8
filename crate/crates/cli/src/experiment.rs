//! Dataset assembly and the single-run commands.

use std::path::{Path, PathBuf};

use adaptimpute::data::{
    apply_mask, load_digits, load_tabular, make_horizontal_patch_mask, make_synthetic_multimodal, write_tabular,
    Dataset, DatasetName, DatasetSpec, Domain, ImageShape, InputLayout, ShiftParams, Split, SyntheticConfig,
    SyntheticOracle, TabularFiles,
};
use adaptimpute::eval::{diagnose, export_embeddings, DiagnosticsReport, ProbeConfig};
use adaptimpute::nets::{load_checkpoint, save_checkpoint, ArchitectureSpec, ComponentBundle, EncodingPath};
use adaptimpute::selftrain::{refine, RefineConfig};
use adaptimpute::train::{build_bundle, train, RunRecord, TrainData, Variant};
use candle_core::{DType, Device};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REFINE_METRICS_FILE: &str = "refine_metrics.csv";
pub const REFINE_SUMMARY_FILE: &str = "refine_summary.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Source, validation and target sets ready for one variant.
pub struct Prepared {
    pub source: Dataset,
    pub source_val: Option<Dataset>,
    pub target: Dataset,
    pub base: ArchitectureSpec,
    pub oracle: Option<SyntheticOracle>,
}

impl Prepared {
    /// The variant actually trained once the mask is known.
    pub fn effective_variant(&self, v: Variant) -> Variant {
        v.effective(self.base.has_missing_block())
    }

    pub fn path(&self, v: Variant) -> EncodingPath {
        self.effective_variant(v).path()
    }
}

pub fn synthetic_config(cfg: &ExperimentConfig) -> SyntheticConfig {
    let s = &cfg.synthetic;
    SyntheticConfig {
        n_per_domain: s.n_per_domain,
        num_classes: s.num_classes,
        class_noise: s.class_noise,
        mode_offset: s.mode_offset,
        mode_noise: s.mode_noise,
        shift: if s.no_shift { ShiftParams::identity() } else { ShiftParams::default() },
        seed: cfg.data.data_seed,
        ..SyntheticConfig::default()
    }
}

fn table_path(p: &Option<PathBuf>, which: &str, data_dir: &Path) -> Result<PathBuf, CliError> {
    let p = p
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("tabular data needs data.{which}_table")))?;
    Ok(if p.is_absolute() { p.clone() } else { data_dir.join(p) })
}

/// Loads both domains, applies the mask and carves out source validation data.
pub fn prepare(cfg: &ExperimentConfig, data_dir: &Path) -> Result<Prepared, CliError> {
    let d = &cfg.data;
    let variant = cfg.train.variant;
    let (source, target, mask, base, oracle, target_has_block) = match (d.source, d.target) {
        (DatasetName::Synthetic, DatasetName::Synthetic) => {
            let sc = synthetic_config(cfg);
            let pair = make_synthetic_multimodal(&sc)?;
            let mask = make_horizontal_patch_mask(sc.shape(), d.patch_fraction)?;
            let base = ArchitectureSpec::mlp_tabular(InputLayout::Image(sc.shape()), mask.clone(), sc.num_classes);
            (pair.source, pair.target, mask, base, Some(pair.oracle), true)
        }
        (DatasetName::Tabular, DatasetName::Tabular) => {
            let sf = TabularFiles::new(table_path(&d.source_table, "source", data_dir)?);
            let tf = TabularFiles::new(table_path(&d.target_table, "target", data_dir)?);
            let (source, cols_s, mask) = load_tabular(&sf, d.num_classes, Domain::Source)?;
            let (target, cols_t, _) = load_tabular(&tf, d.num_classes, Domain::Target)?;
            if cols_s != cols_t {
                return Err(CliError::Usage("source and target tables have different columns".into()));
            }
            let base = ArchitectureSpec::mlp_tabular(source.layout, mask.clone(), d.num_classes);
            (source, target, mask, base, None, d.target_full)
        }
        (s, t) if s.is_digits() && t.is_digits() => {
            let channels = s.native_channels().max(t.native_channels());
            let spec = |name: DatasetName, subsample: Option<usize>| DatasetSpec {
                subsample,
                patch_fraction: d.patch_fraction,
                seed: d.data_seed,
                channels: Some(channels),
                ..DatasetSpec::new(name, Split::Train)
            };
            let source = load_digits(&spec(s, d.source_subsample), data_dir, Domain::Source)?;
            let target = load_digits(&spec(t, d.target_subsample), data_dir, Domain::Target)?;
            let shape = ImageShape::new(channels, 32, 32);
            let mask = make_horizontal_patch_mask(shape, d.patch_fraction)?;
            let base = ArchitectureSpec::conv_digits(InputLayout::Image(shape), mask.clone(), 10);
            (source, target, mask, base, None, true)
        }
        (s, t) => {
            return Err(CliError::Usage(format!(
                "cannot pair source `{}` with target `{}`",
                s.as_str(),
                t.as_str()
            )))
        }
    };
    let mut base = base;
    if cfg.model.strong_discriminator {
        base = base.with_strong_discriminator();
    }
    if cfg.model.deep_generator {
        base = base.with_deep_generator();
    }
    let keep_target_block = target_has_block && variant.needs_full_target();
    let source = apply_mask(&source, &mask, &[])?;
    let target = apply_mask(&target, &mask, if keep_target_block { &[] } else { &[Domain::Target] })?;
    let (source_val, source) = if d.val_fraction > 0.0 {
        let (val, rest) = source.split_off(d.val_fraction, d.data_seed);
        (Some(val), rest)
    } else {
        (None, source)
    };
    Ok(Prepared {
        source,
        source_val,
        target,
        base,
        oracle,
    })
}

fn dtype(cfg: &ExperimentConfig) -> DType {
    if cfg.model.f64 {
        DType::F64
    } else {
        DType::F32
    }
}

fn timestamp() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%S").to_string()
}

/// `{dataset}_{variant}_{backend}_{seed}_{timestamp}`, suffixed when taken.
fn fresh_run_dir(runs_dir: &Path, cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let stem = format!("{}_{}", cfg.run_id(), timestamp());
    let mut dir = runs_dir.join(&stem);
    let mut k = 2;
    while dir.exists() {
        dir = runs_dir.join(format!("{stem}-{k}"));
        k += 1;
    }
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.display().to_string(), e))?;
    Ok(dir)
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub refined: Option<RunRecord>,
}

/// Trains one configuration into a new run directory, refining afterwards
/// when `refine.enabled` is set.
pub fn run_train(cfg: &ExperimentConfig, data_dir: &Path, runs_dir: &Path) -> Result<RunOutcome, CliError> {
    let prepared = prepare(cfg, data_dir)?;
    let dir = fresh_run_dir(runs_dir, cfg)?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_text()).map_err(|e| CliError::Io(dir.display().to_string(), e))?;
    let bundle = build_bundle(prepared.base.clone(), cfg.train.variant, cfg.train.seed, dtype(cfg), &Device::Cpu)?;
    let mut record = RunRecord::new(cfg.run_id(), cfg.train.seed, cfg)?;
    let ckpt = dir.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&ckpt).map_err(|e| CliError::Io(ckpt.display().to_string(), e))?;
    let train_cfg = adaptimpute::train::TrainConfig {
        variant: prepared.effective_variant(cfg.train.variant),
        ..cfg.train.clone()
    };
    let data = TrainData {
        source: &prepared.source,
        target: &prepared.target,
        source_val: prepared.source_val.as_ref(),
        checkpoint_dir: Some(&ckpt),
    };
    let result = train(&bundle, data, &train_cfg, &mut record);
    record.write_metrics_csv(&dir.join(METRICS_FILE))?;
    record.write_summary_json(&dir.join(SUMMARY_FILE))?;
    result?;
    let refined = if cfg.refine.enabled {
        let bundle = load_best(&dir)?;
        Some(refine_into(cfg, &prepared, &bundle, &dir)?)
    } else {
        None
    };
    Ok(RunOutcome { dir, record, refined })
}

/// `best.safetensors` when present, otherwise `final.safetensors`.
pub fn load_best(run_dir: &Path) -> Result<ComponentBundle, CliError> {
    let ckpt = run_dir.join(CHECKPOINT_DIR);
    let best = ckpt.join("best.safetensors");
    let path = if best.is_file() { best } else { ckpt.join("final.safetensors") };
    Ok(load_checkpoint(&path, &Device::Cpu)?.0)
}

pub fn refine_config(cfg: &ExperimentConfig, prepared: &Prepared) -> RefineConfig {
    let r = &cfg.refine;
    let mut rc = RefineConfig::from_base(
        prepared.effective_variant(cfg.train.variant),
        cfg.train.lr,
        r.lambda,
        cfg.train.seed,
    );
    rc.epochs = r.epochs;
    rc.threshold = r.threshold;
    rc.entropy = r.entropy;
    rc.batch_size = cfg.train.batch_size;
    rc.beta1 = cfg.train.beta1;
    rc.beta2 = cfg.train.beta2;
    rc.eval_batch_size = cfg.train.eval_batch_size;
    if let Some(lr) = r.lr {
        rc.lr = lr;
    }
    rc
}

fn refine_into(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    bundle: &ComponentBundle,
    dir: &Path,
) -> Result<RunRecord, CliError> {
    let rc = refine_config(cfg, prepared);
    let mut record = RunRecord::new(cfg.run_id(), cfg.train.seed, cfg)?;
    let pl_dir = dir.join("pseudo_labels");
    std::fs::create_dir_all(&pl_dir).map_err(|e| CliError::Io(pl_dir.display().to_string(), e))?;
    let result = refine(bundle, &prepared.source, &prepared.target, &rc, Some(&pl_dir), &mut record);
    record.write_metrics_csv(&dir.join(REFINE_METRICS_FILE))?;
    record.write_summary_json(&dir.join(REFINE_SUMMARY_FILE))?;
    result?;
    save_checkpoint(bundle, cfg.train.seed, &dir.join(CHECKPOINT_DIR).join("refined.safetensors"))?;
    Ok(record)
}

/// Configuration persisted in a run directory.
pub fn load_run_config(run_dir: &Path) -> Result<ExperimentConfig, CliError> {
    ExperimentConfig::load(&run_dir.join(CONFIG_FILE))
}

/// Refines the best checkpoint of an existing run. `overrides` may only
/// touch `refine.*` keys.
pub fn run_refine(run_dir: &Path, data_dir: &Path, overrides: &[(String, String)]) -> Result<RunRecord, CliError> {
    let mut cfg = load_run_config(run_dir)?;
    let bad: Vec<String> = overrides
        .iter()
        .filter(|(k, _)| !k.starts_with("refine."))
        .map(|(k, _)| k.clone())
        .collect();
    if !bad.is_empty() {
        return Err(CliError::Usage(format!("refine only accepts refine.* overrides, got {bad:?}")));
    }
    cfg.apply(overrides.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    let prepared = prepare(&cfg, data_dir)?;
    let bundle = load_best(run_dir)?;
    refine_into(&cfg, &prepared, &bundle, run_dir)
}

/// Diagnostics of the best checkpoint, written to `diagnostics.json`.
pub fn run_diagnose(run_dir: &Path, data_dir: &Path) -> Result<DiagnosticsReport, CliError> {
    let cfg = load_run_config(run_dir)?;
    let prepared = prepare(&cfg, data_dir)?;
    let bundle = load_best(run_dir)?;
    let source = prepared.source_val.as_ref().unwrap_or(&prepared.source);
    let report = diagnose(
        &bundle,
        prepared.path(cfg.train.variant),
        source,
        &prepared.target,
        cfg.refine.threshold,
        cfg.train.seed,
        &ProbeConfig::default(),
    )?;
    let text = serde_json::to_string_pretty(&report).map_err(adaptimpute::Error::from)?;
    let out = run_dir.join(DIAGNOSTICS_FILE);
    std::fs::write(&out, text).map_err(|e| CliError::Io(out.display().to_string(), e))?;
    Ok(report)
}

/// 2D projection of source and target latents of the best checkpoint.
pub fn run_export(run_dir: &Path, data_dir: &Path, out: Option<&Path>) -> Result<(PathBuf, usize), CliError> {
    let cfg = load_run_config(run_dir)?;
    let prepared = prepare(&cfg, data_dir)?;
    let bundle = load_best(run_dir)?;
    let path = prepared.path(cfg.train.variant);
    let out = out.map_or_else(|| run_dir.join(EMBEDDINGS_FILE), Path::to_path_buf);
    let n = export_embeddings(
        &bundle,
        &[(&prepared.source, path), (&prepared.target, path)],
        &out,
        cfg.train.eval_batch_size,
    )?;
    Ok((out, n))
}

/// Materialises the configured data under the data directory: synthetic
/// pairs are written as tables, digits and tables are checked for loading.
/// Returns one human-readable line per domain.
pub fn prepare_data(cfg: &ExperimentConfig, data_dir: &Path) -> Result<Vec<String>, CliError> {
    if cfg.data.source == DatasetName::Synthetic && cfg.data.target == DatasetName::Synthetic {
        let sc = synthetic_config(cfg);
        let pair = make_synthetic_multimodal(&sc)?;
        let mask = make_horizontal_patch_mask(sc.shape(), cfg.data.patch_fraction)?;
        let shape = sc.shape();
        let columns: Vec<String> = (0..shape.len()).map(|i| format!("r{}c{}", i / shape.width, i % shape.width)).collect();
        let missing: Vec<String> = mask.missing_indices().iter().map(|&i| columns[i].clone()).collect();
        let dir = data_dir.join("synthetic");
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.display().to_string(), e))?;
        let mut lines = Vec::new();
        for (name, ds) in [("source", &pair.source), ("target", &pair.target)] {
            let files = TabularFiles::new(dir.join(format!("{name}_seed{}.csv", sc.seed)));
            write_tabular(&files, ds, &columns, &missing)?;
            lines.push(format!("{name}: {} rows -> {}", ds.len(), files.table.display()));
        }
        return Ok(lines);
    }
    let prepared = prepare(cfg, data_dir)?;
    let describe = |name: &str, ds: &Dataset| {
        format!(
            "{name}: {} samples, {} observed / {} missing features",
            ds.len(),
            ds.dim_x1(),
            ds.dim_x2()
        )
    };
    let mut lines = vec![describe("source", &prepared.source)];
    if let Some(v) = &prepared.source_val {
        lines.push(describe("source_val", v));
    }
    lines.push(describe("target", &prepared.target));
    Ok(lines)
}
