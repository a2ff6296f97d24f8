//! Adversarial and transport training loops, pretraining and baselines.

mod optim;
mod record;
mod schedule;

pub use optim::{OptimHyper, OptimizerSet};
pub use record::{read_metrics_csv, BestEpoch, MetricRow, RunRecord, METRICS_HEADER};
pub use schedule::{annealed_lr, grad_scale, ScheduleState};

use std::path::Path;

use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{balanced_source_batches, BalancedBatches, Dataset, UniformBatches};
use crate::error::{config, contract, Error, Result};
use crate::eval::{cross_entropy, prob_accuracy};
use crate::losses::{
    adversarial_pair_loss, classification_loss, discriminator_accuracy, imputation_mse_loss, scalar, total_loss,
    LossReport, LossTerms, LossWeights,
};
use crate::nets::{
    classify, encode, encode_pair, encode_second, grl_apply, predict_dataset, save_checkpoint, ArchitectureSpec,
    Component, ComponentBundle, EncodingPath, MaskedBatch,
};
use crate::ot::alternate_step;
use crate::rng::{stream_rng, substream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Adv,
    Ot,
}

impl Backend {
    pub fn as_str(&self) -> &'static str {
        match self {
            Backend::Adv => "adv",
            Backend::Ot => "ot",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adv" => Ok(Backend::Adv),
            "ot" => Ok(Backend::Ot),
            _ => config(format!("unknown backend `{s}` (expected adv or ot)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SourceFull,
    AdaptFull,
    SourceZero,
    AdaptZero,
    SourceIgnore,
    AdaptIgnore,
    AdaptImpute,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::SourceFull,
        Variant::AdaptFull,
        Variant::SourceZero,
        Variant::AdaptZero,
        Variant::SourceIgnore,
        Variant::AdaptIgnore,
        Variant::AdaptImpute,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::SourceFull => "source_full",
            Variant::AdaptFull => "adapt_full",
            Variant::SourceZero => "source_zero",
            Variant::AdaptZero => "adapt_zero",
            Variant::SourceIgnore => "source_ignore",
            Variant::AdaptIgnore => "adapt_ignore",
            Variant::AdaptImpute => "adapt_impute",
        }
    }

    pub fn adapts(&self) -> bool {
        matches!(self, Variant::AdaptFull | Variant::AdaptZero | Variant::AdaptIgnore | Variant::AdaptImpute)
    }

    pub fn imputes(&self) -> bool {
        *self == Variant::AdaptImpute
    }

    pub fn observed_only(&self) -> bool {
        matches!(self, Variant::SourceIgnore | Variant::AdaptIgnore)
    }

    /// Needs the target's missing block to hold real data.
    pub fn needs_full_target(&self) -> bool {
        matches!(self, Variant::SourceFull | Variant::AdaptFull)
    }

    /// Encoding used for both domains during training and evaluation.
    pub fn path(&self) -> EncodingPath {
        match self {
            Variant::SourceFull | Variant::AdaptFull => EncodingPath::Full,
            Variant::SourceZero | Variant::AdaptZero => EncodingPath::ZeroFilled,
            Variant::SourceIgnore | Variant::AdaptIgnore => EncodingPath::Observed,
            Variant::AdaptImpute => EncodingPath::Imputed,
        }
    }

    /// Without a missing block the baselines reduce to their observed-only
    /// form. Imputation has nothing to impute and is left as is.
    pub fn effective(&self, mask_active: bool) -> Variant {
        match (mask_active, self) {
            (true, _) | (false, Variant::AdaptImpute) => *self,
            (false, v) if v.adapts() => Variant::AdaptIgnore,
            (false, _) => Variant::SourceIgnore,
        }
    }

    /// Components updated by the trainer.
    pub fn components(&self, backend: Backend) -> Vec<Component> {
        let mut out = vec![Component::G1];
        match self {
            Variant::SourceIgnore | Variant::AdaptIgnore => {}
            Variant::AdaptImpute => out.extend([Component::G2, Component::R]),
            _ => out.push(Component::G2),
        }
        out.push(Component::F);
        if backend == Backend::Adv && self.adapts() {
            out.push(Component::D1);
            if self.imputes() {
                out.push(Component::D2);
            }
        }
        out
    }

    /// Architecture matching this variant's classifier width.
    pub fn architecture(&self, base: ArchitectureSpec) -> ArchitectureSpec {
        ArchitectureSpec {
            observed_only: self.observed_only(),
            ..base
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .map_or_else(|| config(format!("unknown variant `{s}`")), Ok)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub backend: Backend,
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub init_epochs: usize,
    pub decay: f64,
    pub fast_decay: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub balanced_source: bool,
    /// Classification-only epochs before transport alignment starts.
    pub ot_warmup_epochs: usize,
    pub eval_batch_size: usize,
    /// Include the imputation discriminator term; off means regression only.
    pub adversarial_imputation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Adv,
            variant: Variant::AdaptImpute,
            epochs: 100,
            batch_size: 128,
            lr: 1e-2,
            weights: LossWeights::default(),
            seed: 0,
            init_epochs: 0,
            decay: 10.0,
            fast_decay: None,
            beta1: 0.8,
            beta2: 0.999,
            balanced_source: true,
            ot_warmup_epochs: 10,
            eval_batch_size: 500,
            adversarial_imputation: true,
        }
    }
}

impl TrainConfig {
    /// Transport defaults: larger batches and a lighter alignment weight.
    pub fn ot_defaults() -> Self {
        Self {
            backend: Backend::Ot,
            batch_size: 500,
            weights: LossWeights {
                lambda1: 0.1,
                ..LossWeights::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return config("batch size must be positive");
        }
        if self.eval_batch_size == 0 {
            return config("evaluation batch size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return config(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.decay >= 0.0) || self.fast_decay.is_some_and(|d| !(d >= 0.0)) {
            return config("decay factors must be nonnegative");
        }
        Ok(())
    }

    pub fn optim(&self) -> OptimHyper {
        OptimHyper {
            lr: self.lr,
            decay: self.decay,
            fast_decay: self.fast_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            ..OptimHyper::default()
        }
    }
}

/// What a single optimisation step computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepPlan {
    pub path: EncodingPath,
    /// Add the domain-alignment term.
    pub adapt: bool,
    /// Add the imputation terms.
    pub impute: bool,
    /// Include the imputation discriminator.
    pub impute_adv: bool,
}

impl StepPlan {
    pub fn for_variant(v: Variant) -> Self {
        Self {
            path: v.path(),
            adapt: v.adapts(),
            impute: v.imputes(),
            impute_adv: v.imputes(),
        }
    }
}

/// Datasets seen by a run. Target labels, when present, are never used for training.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub source: &'a Dataset,
    pub target: &'a Dataset,
    /// Held-out labelled source data for model selection.
    pub source_val: Option<&'a Dataset>,
    /// Where `best.safetensors` and `final.safetensors` are written.
    pub checkpoint_dir: Option<&'a Path>,
}

impl<'a> TrainData<'a> {
    pub fn new(source: &'a Dataset, target: &'a Dataset) -> Self {
        Self {
            source,
            target,
            source_val: None,
            checkpoint_dir: None,
        }
    }
}

/// Epoch length: one pass over the larger domain.
pub fn steps_per_epoch(source_len: usize, target_len: usize, batch_size: usize) -> usize {
    source_len.max(target_len).div_ceil(batch_size.max(1)).max(1)
}

enum SourceSampler {
    Balanced(BalancedBatches),
    Uniform(UniformBatches),
}

impl SourceSampler {
    fn next_batch(&mut self) -> Vec<usize> {
        match self {
            SourceSampler::Balanced(b) => b.next_batch(),
            SourceSampler::Uniform(u) => u.next_batch(),
        }
    }
}

fn source_sampler(ds: &Dataset, cfg: &TrainConfig, rng: ChaCha8Rng) -> Result<SourceSampler> {
    let bs = cfg.batch_size.min(ds.len());
    if ds.labels().iter().any(Option::is_none) {
        return config("source samples must be labelled");
    }
    Ok(if cfg.balanced_source {
        SourceSampler::Balanced(balanced_source_batches(&ds.labels(), ds.num_classes, bs, rng)?)
    } else {
        SourceSampler::Uniform(UniformBatches::new(ds.len(), bs, rng)?)
    })
}

fn labels_of(ds: &Dataset) -> Option<Vec<usize>> {
    ds.labels().into_iter().collect()
}

/// One combined adversarial step. Discriminators ascend their objective
/// through gradient reversal while every other component descends it.
pub fn adversarial_step(
    bundle: &ComponentBundle,
    plan: &StepPlan,
    source: &MaskedBatch,
    target: &MaskedBatch,
    base: &LossWeights,
    sched: &ScheduleState,
    opt: &mut OptimizerSet,
) -> Result<LossReport> {
    let Some(labels) = &source.labels else {
        return contract("source batch has no labels");
    };
    let w = base.at_scale(sched.s);
    let obs = bundle.spec.observed_only;
    let align = plan.adapt && base.lambda1 > 0.0;
    let (ls, lt) = if align {
        let (a, b) = encode_pair(bundle, source, target, plan.path)?;
        (a, Some(b))
    } else {
        (encode(bundle, source, plan.path)?, None)
    };
    let ns = ls.len();
    let l3 = classification_loss(&classify(bundle, &ls)?, labels)?;
    let mut objective = l3.affine(w.lambda3, 0.0)?;
    let mut terms = LossTerms { l3: scalar(&l3)?, ..Default::default() };

    if let Some(lt) = lt {
        let joint = Tensor::cat(&[ls.joint(obs)?, lt.joint(obs)?], 0)?;
        let p = bundle.d1_forward(&grl_apply(&joint, w.lambda1)?)?;
        let (ps, pt) = (p.narrow(0, 0, ns)?, p.narrow(0, ns, lt.len())?);
        let l1 = adversarial_pair_loss(&ps, &pt)?;
        terms.l1 = scalar(&l1)?;
        terms.d1_accuracy = discriminator_accuracy(&ps, &pt)?;
        objective = (objective - l1)?;
    }
    if plan.impute && base.lambda2 > 0.0 {
        let Some(generated) = &ls.z2 else {
            return contract("imputation step without generated latents");
        };
        let encoded = encode_second(bundle, source)?;
        let l_mse = imputation_mse_loss(generated, &encoded)?;
        terms.l_mse = scalar(&l_mse)?;
        objective = (objective + l_mse.affine(w.lambda2 * w.lambda_mse, 0.0)?)?;
        if plan.impute_adv {
            let (l_adv, acc) = imputation_adversary(bundle, generated, &encoded, w.lambda2)?;
            terms.l_adv = scalar(&l_adv)?;
            terms.d2_accuracy = acc;
            objective = (objective - l_adv)?;
        }
    }
    let (_, report) = total_loss(&w, &terms)?;
    if report.is_finite() {
        opt.step(&objective.backward()?, sched.p)?;
    }
    Ok(report)
}

/// Imputation adversarial loss on one concatenated forward pass, with the
/// generator side reversed and scaled by `scale`.
fn imputation_adversary(
    bundle: &ComponentBundle,
    generated: &Tensor,
    encoded: &Tensor,
    scale: f64,
) -> Result<(Tensor, f64)> {
    let n = generated.dims()[0];
    let both = Tensor::cat(&[generated, encoded], 0)?;
    let p = bundle.d2_forward(&grl_apply(&both, scale)?)?;
    let (pg, pe) = (p.narrow(0, 0, n)?, p.narrow(0, n, encoded.dims()[0])?);
    Ok((adversarial_pair_loss(&pg, &pe)?, discriminator_accuracy(&pg, &pe)?))
}

/// Trains only the generator (and, when enabled, the imputation
/// discriminator) against frozen encoders.
pub fn fit_imputer(bundle: &ComponentBundle, source: &Dataset, cfg: &TrainConfig, record: &mut RunRecord) -> Result<()> {
    cfg.validate()?;
    if bundle.r.is_none() {
        return config("fitting an imputer needs a nonempty missing block");
    }
    let mut comps = vec![Component::R];
    if cfg.adversarial_imputation {
        comps.push(Component::D2);
    }
    let mut opt = OptimizerSet::new(bundle, &comps, cfg.optim())?;
    let mut sampler = source_sampler(source, cfg, substream_rng(cfg.seed, Stream::SourceBatches, 2))?;
    let steps = steps_per_epoch(source.len(), 0, cfg.batch_size);
    let total = cfg.epochs * steps;
    for epoch in 0..cfg.epochs {
        bundle.set_train(true);
        let mut sums = [0.0; 3];
        for step in 0..steps {
            let sched = ScheduleState::for_step(cfg.lr, cfg.decay, epoch * steps + step, total);
            let w = cfg.weights.at_scale(sched.s);
            let batch = MaskedBatch::from_dataset(source, &sampler.next_batch(), bundle.dtype(), bundle.device())?;
            let z1 = bundle.g1_forward(&batch.x1)?.detach();
            let encoded = encode_second(bundle, &batch)?.detach();
            let generated = bundle.r_forward(&z1)?;
            let l_mse = imputation_mse_loss(&generated, &encoded)?;
            let mut objective = l_mse.affine(w.lambda_mse, 0.0)?;
            sums[0] += scalar(&l_mse)?;
            if cfg.adversarial_imputation {
                let (l_adv, acc) = imputation_adversary(bundle, &generated, &encoded, w.lambda2)?;
                sums[1] += scalar(&l_adv)?;
                sums[2] += acc;
                objective = (l_mse.affine(w.lambda2 * w.lambda_mse, 0.0)? - l_adv)?;
            }
            let v = scalar(&objective)?;
            if !v.is_finite() {
                bundle.set_train(false);
                return Err(Error::Diverged { epoch, step, detail: format!("imputation objective {v}") });
            }
            opt.step(&objective.backward()?, sched.p)?;
        }
        bundle.set_train(false);
        for (name, sum) in ["l_mse", "l_adv", "d2_accuracy"].iter().zip(sums) {
            record.push(epoch, "imputer", name, sum / steps as f64);
        }
    }
    Ok(())
}

/// Supervised source-only steps on fully encoded latents. Leaves the
/// generator and both discriminators untouched.
pub fn pretrain_init(bundle: &ComponentBundle, source: &Dataset, cfg: &TrainConfig, record: &mut RunRecord) -> Result<()> {
    if cfg.init_epochs == 0 {
        return Ok(());
    }
    cfg.validate()?;
    let full = bundle.g2.is_some() && !bundle.spec.observed_only && source.x2_observed;
    let path = if full { EncodingPath::Full } else { EncodingPath::Observed };
    if bundle.spec.has_missing_block() && !full && !bundle.spec.observed_only {
        return config("pretraining needs the source's missing block");
    }
    let mut comps = vec![Component::G1, Component::F];
    if full {
        comps.insert(1, Component::G2);
    }
    let mut opt = OptimizerSet::new(bundle, &comps, cfg.optim())?;
    let mut sampler = source_sampler(source, cfg, substream_rng(cfg.seed, Stream::SourceBatches, 1))?;
    let steps = steps_per_epoch(source.len(), 0, cfg.batch_size);
    let eval_labels = labels_of(source).unwrap_or_default();
    for epoch in 0..cfg.init_epochs {
        bundle.set_train(true);
        let mut loss = 0.0;
        for step in 0..steps {
            let batch = MaskedBatch::from_dataset(source, &sampler.next_batch(), bundle.dtype(), bundle.device())?;
            let labels = batch.labels.as_deref().unwrap_or_default();
            let l3 = classification_loss(&classify(bundle, &encode(bundle, &batch, path)?)?, labels)?;
            let v = scalar(&l3)?;
            if !v.is_finite() {
                return Err(Error::Diverged { epoch, step, detail: format!("pretraining loss {v}") });
            }
            loss += v;
            opt.step(&l3.backward()?, 0.0)?;
        }
        bundle.set_train(false);
        record.push(epoch, "pretrain", "l3", loss / steps as f64);
        let probs = predict_dataset(bundle, source, path, cfg.eval_batch_size)?;
        record.push(epoch, "pretrain", "accuracy", prob_accuracy(&probs, &eval_labels)?);
    }
    Ok(())
}

fn check_setup(bundle: &ComponentBundle, data: &TrainData, cfg: &TrainConfig) -> Result<Variant> {
    cfg.validate()?;
    let active = bundle.spec.has_missing_block();
    let variant = cfg.variant.effective(active);
    if variant.imputes() && !active {
        return config("adapt_impute needs a nonempty missing block");
    }
    if active && bundle.spec.observed_only != variant.observed_only() {
        return config(format!("the bundle's classifier width does not fit variant {variant}"));
    }
    if variant.needs_full_target() && !data.target.x2_observed {
        return config(format!(
            "{variant} needs the target's missing block, which is not observed in this dataset"
        ));
    }
    if variant != Variant::SourceIgnore && variant != Variant::AdaptIgnore && !data.source.x2_observed {
        return config("the source's missing block must be observed");
    }
    if data.source.num_classes != bundle.spec.num_classes {
        return config("source class count does not match the architecture");
    }
    Ok(variant)
}

/// Evaluation and model-selection bookkeeping shared by every loop.
struct EpochEval<'a> {
    data: TrainData<'a>,
    path: EncodingPath,
    batch_size: usize,
    target_labels: Option<Vec<usize>>,
    val_labels: Option<Vec<usize>>,
    source_labels: Vec<usize>,
    best: Option<f64>,
    seed: u64,
}

impl<'a> EpochEval<'a> {
    fn new(data: TrainData<'a>, path: EncodingPath, batch_size: usize, seed: u64) -> Self {
        Self {
            target_labels: labels_of(data.target),
            val_labels: data.source_val.and_then(labels_of),
            source_labels: labels_of(data.source).unwrap_or_default(),
            data,
            path,
            batch_size,
            best: None,
            seed,
        }
    }

    fn run(&mut self, bundle: &ComponentBundle, epoch: usize, record: &mut RunRecord) -> Result<()> {
        let probs = predict_dataset(bundle, self.data.source, self.path, self.batch_size)?;
        record.push(epoch, "source", "accuracy", prob_accuracy(&probs, &self.source_labels)?);
        record.push(epoch, "source", "cross_entropy", cross_entropy(&probs, &self.source_labels)?);
        let mut criterion = None;
        if let (Some(val), Some(labels)) = (self.data.source_val, &self.val_labels) {
            let probs = predict_dataset(bundle, val, self.path, self.batch_size)?;
            let ce = cross_entropy(&probs, labels)?;
            record.push(epoch, "source_val", "accuracy", prob_accuracy(&probs, labels)?);
            record.push(epoch, "source_val", "cross_entropy", ce);
            criterion = Some(("source_val_cross_entropy", -ce, ce));
        }
        if let Some(labels) = &self.target_labels {
            let probs = predict_dataset(bundle, self.data.target, self.path, self.batch_size)?;
            let acc = prob_accuracy(&probs, labels)?;
            record.push(epoch, "target", "accuracy", acc);
            record.push(epoch, "target", "cross_entropy", cross_entropy(&probs, labels)?);
            criterion = Some(("target_accuracy", acc, acc));
        }
        let (name, score, value) = criterion.unwrap_or(("last_epoch", epoch as f64, epoch as f64));
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            record.best = Some(BestEpoch {
                epoch,
                criterion: name.to_string(),
                value,
            });
            if let Some(dir) = self.data.checkpoint_dir {
                save_checkpoint(bundle, self.seed, &dir.join("best.safetensors"))?;
            }
        }
        Ok(())
    }
}

fn run_epochs(
    bundle: &ComponentBundle,
    data: TrainData,
    cfg: &TrainConfig,
    backend: Backend,
    record: &mut RunRecord,
) -> Result<()> {
    let variant = check_setup(bundle, &data, cfg)?;
    if variant != cfg.variant {
        record.notes.insert("effective_variant".into(), variant.as_str().into());
    }
    let plan = StepPlan {
        impute_adv: variant.imputes() && cfg.adversarial_imputation,
        ..StepPlan::for_variant(variant)
    };
    let mut opt = OptimizerSet::new(bundle, &variant.components(backend), cfg.optim())?;
    let mut sources = source_sampler(data.source, cfg, stream_rng(cfg.seed, Stream::SourceBatches))?;
    let mut targets = UniformBatches::new(
        data.target.len(),
        cfg.batch_size.min(data.target.len()),
        stream_rng(cfg.seed, Stream::TargetBatches),
    )?;
    let steps = steps_per_epoch(data.source.len(), data.target.len(), cfg.batch_size);
    let total = cfg.epochs * steps;
    let mut eval = EpochEval::new(data, variant.path(), cfg.eval_batch_size, cfg.seed);
    let base = if variant.adapts() {
        cfg.weights
    } else {
        LossWeights { lambda1: 0.0, lambda2: 0.0, ..cfg.weights }
    };

    for epoch in 0..cfg.epochs {
        bundle.set_train(true);
        let mut sums = [0.0; 9];
        for step in 0..steps {
            let sched = ScheduleState::for_step(cfg.lr, cfg.decay, epoch * steps + step, total);
            let sb = MaskedBatch::from_dataset(data.source, &sources.next_batch(), bundle.dtype(), bundle.device())?;
            let tb = MaskedBatch::from_dataset(data.target, &targets.next_batch(), bundle.dtype(), bundle.device())?
                .without_labels();
            let report = match backend {
                Backend::Adv => adversarial_step(bundle, &plan, &sb, &tb, &base, &sched, &mut opt)?,
                Backend::Ot => {
                    let w = if epoch < cfg.ot_warmup_epochs {
                        LossWeights { lambda1: 0.0, lambda2: 0.0, ..base }
                    } else {
                        base.at_scale(sched.s)
                    };
                    alternate_step(bundle, &plan, &sb, &tb, &w, &mut opt, sched.p)?
                }
            };
            if !report.is_finite() {
                bundle.set_train(false);
                let detail = format!("{report:?}");
                record.warn(format!("diverged at epoch {epoch}, step {step}: {detail}"));
                return Err(Error::Diverged { epoch, step, detail });
            }
            for (acc, (_, v)) in sums.iter_mut().zip(report.entries()) {
                *acc += v;
            }
        }
        bundle.set_train(false);
        let sched = ScheduleState::for_step(cfg.lr, cfg.decay, (epoch + 1) * steps, total);
        for ((name, _), sum) in LossReport::default().entries().iter().zip(sums) {
            record.push(epoch, "train", name, sum / steps as f64);
        }
        record.push(epoch, "train", "grad_scale", sched.s);
        record.push(epoch, "train", "lr", sched.lr);
        eval.run(bundle, epoch, record)?;
    }
    if let Some(dir) = data.checkpoint_dir {
        save_checkpoint(bundle, cfg.seed, &dir.join("final.safetensors"))?;
    }
    Ok(())
}

/// Adversarial training with gradient reversal.
pub fn train_adv(bundle: &ComponentBundle, data: TrainData, cfg: &TrainConfig, record: &mut RunRecord) -> Result<()> {
    run_epochs(bundle, data, cfg, Backend::Adv, record)
}

/// Transport training: classification warmup, then alternating coupling and gradient steps.
pub fn train_ot(bundle: &ComponentBundle, data: TrainData, cfg: &TrainConfig, record: &mut RunRecord) -> Result<()> {
    run_epochs(bundle, data, cfg, Backend::Ot, record)
}

/// Any variant other than imputation, with the configured backend.
pub fn train_baseline(bundle: &ComponentBundle, data: TrainData, cfg: &TrainConfig, record: &mut RunRecord) -> Result<()> {
    if cfg.variant.imputes() {
        return config("train_baseline does not run the imputation variant");
    }
    run_epochs(bundle, data, cfg, cfg.backend, record)
}

/// Pretraining followed by the configured backend.
pub fn train(bundle: &ComponentBundle, data: TrainData, cfg: &TrainConfig, record: &mut RunRecord) -> Result<()> {
    pretrain_init(bundle, data.source, cfg, record)?;
    run_epochs(bundle, data, cfg, cfg.backend, record)
}

/// Bundle sized for `variant` on the given base architecture.
pub fn build_bundle(
    base: ArchitectureSpec,
    variant: Variant,
    seed: u64,
    dtype: candle_core::DType,
    device: &candle_core::Device,
) -> Result<ComponentBundle> {
    let variant = variant.effective(base.has_missing_block());
    if variant.imputes() && !base.has_missing_block() {
        return config("adapt_impute needs a nonempty missing block");
    }
    ComponentBundle::new(variant.architecture(base), seed, dtype, device)
}
