//! Pseudo-label refinement of a trained model on the target domain.

use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, UniformBatches};
use crate::error::{config, contract, Result};
use crate::eval::{argmax, cross_entropy, prob_accuracy};
use crate::losses::{classification_loss, scalar, LOG_EPS};
use crate::nets::{classify, encode, predict_dataset, Component, ComponentBundle, EncodingPath, MaskedBatch};
use crate::rng::{substream_rng, Stream};
use crate::train::{OptimHyper, OptimizerSet, RunRecord, Variant};

/// Confident target predictions and their argmax labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub confidences: Vec<f64>,
    pub threshold: f64,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Indices in `0..n` that were not selected.
    pub fn complement(&self, n: usize) -> Vec<usize> {
        let mut chosen = vec![false; n];
        for &i in &self.indices {
            chosen[i] = true;
        }
        (0..n).filter(|&i| !chosen[i]).collect()
    }

    /// Writes `sample_id,label,confidence` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sample_id", "label", "confidence"])?;
        for ((i, y), c) in self.indices.iter().zip(&self.labels).zip(&self.confidences) {
            w.write_record([i.to_string(), y.to_string(), format!("{c}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Rows whose largest probability reaches `threshold`.
pub fn select_from_probs(probs: &[Vec<f64>], threshold: f64) -> PseudoLabelSet {
    let mut out = PseudoLabelSet {
        indices: Vec::new(),
        labels: Vec::new(),
        confidences: Vec::new(),
        threshold,
    };
    for (i, row) in probs.iter().enumerate() {
        let y = argmax(row);
        if row[y] >= threshold {
            out.indices.push(i);
            out.labels.push(y);
            out.confidences.push(row[y]);
        }
    }
    out
}

/// Pseudo-labels for every target sample the frozen model is confident about.
pub fn select_pseudo_labels(
    bundle: &ComponentBundle,
    target: &Dataset,
    path: EncodingPath,
    threshold: f64,
    batch_size: usize,
) -> Result<PseudoLabelSet> {
    Ok(select_from_probs(&predict_dataset(bundle, target, path, batch_size)?, threshold))
}

/// How the entropy term enters the refinement objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// Adds `λ·H(p)`, pushing unlabelled predictions towards confident ones.
    Minimize,
    /// Adds `λ·Σ p log p` with the sign taken literally, which raises entropy.
    Literal,
}

/// Mean Shannon entropy of probability rows, in nats.
pub fn mean_entropy(probs: &Tensor) -> Result<Tensor> {
    let logp = probs.clamp(LOG_EPS, f64::INFINITY)?.log()?;
    Ok((probs * logp)?.sum(1)?.mean_all()?.neg()?)
}

/// Cross-entropy over labelled rows plus `λ` times the entropy term over unlabelled rows.
pub fn refinement_loss(
    labelled: &Tensor,
    labels: &[usize],
    unlabelled: Option<&Tensor>,
    lambda: f64,
    mode: EntropyMode,
) -> Result<Tensor> {
    let ce = classification_loss(labelled, labels)?;
    match unlabelled {
        Some(u) if lambda != 0.0 && u.dims()[0] > 0 => {
            let sign = match mode {
                EntropyMode::Minimize => lambda,
                EntropyMode::Literal => -lambda,
            };
            Ok((ce + mean_entropy(u)?.affine(sign, 0.0)?)?)
        }
        _ => Ok(ce),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub variant: Variant,
    pub epochs: usize,
    /// Already divided from the base run's rate.
    pub lr: f64,
    pub lambda: f64,
    pub threshold: f64,
    pub batch_size: usize,
    pub entropy: EntropyMode,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eval_batch_size: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            variant: Variant::AdaptImpute,
            epochs: 10,
            lr: 1e-3,
            lambda: 0.1,
            threshold: 0.95,
            batch_size: 128,
            entropy: EntropyMode::Minimize,
            seed: 0,
            beta1: 0.8,
            beta2: 0.999,
            eval_batch_size: 500,
        }
    }
}

impl RefineConfig {
    /// Ten epochs at a tenth of the base rate.
    pub fn from_base(variant: Variant, base_lr: f64, lambda: f64, seed: u64) -> Self {
        Self {
            variant,
            lr: base_lr / 10.0,
            lambda,
            seed,
            ..Self::default()
        }
    }

    fn components(&self) -> Vec<Component> {
        match self.variant {
            Variant::AdaptImpute => vec![Component::G1, Component::R, Component::F],
            v if v.observed_only() => vec![Component::G1, Component::F],
            _ => vec![Component::G1, Component::G2, Component::F],
        }
    }
}

/// Refines the classifier and feature map on source labels plus target
/// pseudo-labels, reselected at the start of every epoch.
pub fn refine(
    bundle: &ComponentBundle,
    source: &Dataset,
    target: &Dataset,
    cfg: &RefineConfig,
    export_dir: Option<&Path>,
    record: &mut RunRecord,
) -> Result<()> {
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 || !(cfg.lambda >= 0.0) {
        return config(format!("invalid refinement settings {cfg:?}"));
    }
    let variant = cfg.variant.effective(bundle.spec.has_missing_block());
    let path = variant.path();
    let source_labels: Vec<usize> = source
        .labels()
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| crate::Error::Config("source samples must be labelled".into()))?;
    let target_labels: Option<Vec<usize>> = target.labels().into_iter().collect();
    record.notes.insert(
        "entropy_mode".into(),
        match cfg.entropy {
            EntropyMode::Minimize => "minimize entropy".into(),
            EntropyMode::Literal => "literal sign (entropy is maximized)".into(),
        },
    );
    let hyper = OptimHyper {
        lr: cfg.lr,
        decay: 0.0,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        ..OptimHyper::default()
    };
    let mut opt = OptimizerSet::new(bundle, &cfg.components(), hyper)?;
    let mut sources = UniformBatches::new(
        source.len(),
        cfg.batch_size.min(source.len()),
        substream_rng(cfg.seed, Stream::Refine, 0),
    )?;
    let steps = target.len().div_ceil(cfg.batch_size).max(1);
    let mut any_selected = false;

    for epoch in 0..cfg.epochs {
        let pl = select_pseudo_labels(bundle, target, path, cfg.threshold, cfg.eval_batch_size)?;
        if let Some(dir) = export_dir {
            pl.write_csv(&dir.join(format!("pseudo_labels_epoch{epoch:03}.csv")))?;
        }
        record.push(epoch, "refine", "pseudo_labels", pl.len() as f64);
        if let (Some(truth), false) = (&target_labels, pl.is_empty()) {
            let hits = pl.indices.iter().zip(&pl.labels).filter(|(&i, &y)| truth[i] == y).count();
            record.push(epoch, "refine", "pseudo_label_accuracy", hits as f64 / pl.len() as f64);
        }
        any_selected |= !pl.is_empty();
        let rest = pl.complement(target.len());
        let frac_pl = pl.len() as f64 / target.len() as f64;
        let n_pl = ((cfg.batch_size as f64 * frac_pl).round() as usize).min(pl.len());
        let n_rest = (cfg.batch_size - n_pl.min(cfg.batch_size)).min(rest.len());
        let mut pl_batches = (n_pl > 0)
            .then(|| UniformBatches::new(pl.len(), n_pl, substream_rng(cfg.seed, Stream::Refine, 1 + 2 * epoch as u64)))
            .transpose()?;
        let mut rest_batches = (n_rest > 0)
            .then(|| UniformBatches::new(rest.len(), n_rest, substream_rng(cfg.seed, Stream::Refine, 2 + 2 * epoch as u64)))
            .transpose()?;

        bundle.set_train(true);
        let mut total = 0.0;
        for _ in 0..steps {
            let sb = MaskedBatch::from_dataset(source, &sources.next_batch(), bundle.dtype(), bundle.device())?;
            let mut labels: Vec<usize> = sb.labels.clone().unwrap_or_default();
            let mut batch = sb;
            if let Some(b) = pl_batches.as_mut() {
                let picks = b.next_batch();
                let idx: Vec<usize> = picks.iter().map(|&k| pl.indices[k]).collect();
                labels.extend(picks.iter().map(|&k| pl.labels[k]));
                batch = batch.concat(&MaskedBatch::from_dataset(target, &idx, bundle.dtype(), bundle.device())?)?;
            }
            let n_labelled = batch.len();
            let mut n_unlabelled = 0;
            if let Some(b) = rest_batches.as_mut() {
                let idx: Vec<usize> = b.next_batch().iter().map(|&k| rest[k]).collect();
                n_unlabelled = idx.len();
                batch = batch.concat(&MaskedBatch::from_dataset(target, &idx, bundle.dtype(), bundle.device())?)?;
            }
            let probs = classify(bundle, &encode(bundle, &batch, path)?)?;
            let lab = probs.narrow(0, 0, n_labelled)?;
            let unl = (n_unlabelled > 0).then(|| probs.narrow(0, n_labelled, n_unlabelled)).transpose()?;
            let loss = refinement_loss(&lab, &labels, unl.as_ref(), cfg.lambda, cfg.entropy)?;
            let v = scalar(&loss)?;
            if !v.is_finite() {
                bundle.set_train(false);
                return contract(format!("refinement loss became {v} at epoch {epoch}"));
            }
            total += v;
            opt.step(&loss.backward()?, 0.0)?;
        }
        bundle.set_train(false);
        record.push(epoch, "refine", "loss", total / steps as f64);
        let probs = predict_dataset(bundle, source, path, cfg.eval_batch_size)?;
        record.push(epoch, "source", "accuracy", prob_accuracy(&probs, &source_labels)?);
        if let Some(truth) = &target_labels {
            let probs = predict_dataset(bundle, target, path, cfg.eval_batch_size)?;
            record.push(epoch, "target", "accuracy", prob_accuracy(&probs, truth)?);
            record.push(epoch, "target", "cross_entropy", cross_entropy(&probs, truth)?);
        }
    }
    if !any_selected && cfg.epochs > 0 {
        record.warn(format!(
            "no target sample reached confidence {} in any epoch; only the entropy term used target data",
            cfg.threshold
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::new(rows.to_vec(), &Device::Cpu).unwrap()
    }

    #[test]
    fn hand_selection() {
        let probs = vec![vec![0.96, 0.04], vec![0.6, 0.4]];
        let pl = select_from_probs(&probs, 0.95);
        assert_eq!(pl.indices, vec![0]);
        // first class
        assert_eq!(pl.labels, vec![0]);
        assert_eq!(select_from_probs(&probs, 0.0).len(), 2);
        assert!(select_from_probs(&probs, 1.0 + 1e-9).is_empty());
        assert_eq!(pl.complement(2), vec![1]);
    }

    #[test]
    fn entropy_of_uniform_rows_is_ln_k() {
        let u = t(&[vec![0.25; 4], vec![0.25; 4]]);
        let h = scalar(&mean_entropy(&u).unwrap()).unwrap();
        assert!((h - 4f64.ln()).abs() < 1e-12);
        let onehot = t(&[vec![1.0, 0.0, 0.0, 0.0]]);
        assert!(scalar(&mean_entropy(&onehot).unwrap()).unwrap().abs() < 1e-5);
    }

    #[test]
    fn hand_binary_instance() {
        let lab = t(&[vec![0.8, 0.2], vec![0.3, 0.7]]);
        let unl = t(&[vec![0.5, 0.5], vec![0.9, 0.1]]);
        let ce = -(0.8f64.ln() + 0.7f64.ln()) / 2.0;
        let h = (2f64.ln() - (0.9 * 0.9f64.ln() + 0.1 * 0.1f64.ln())) / 2.0;
        let v = scalar(&refinement_loss(&lab, &[0, 1], Some(&unl), 0.1, EntropyMode::Minimize).unwrap()).unwrap();
        assert!((v - (ce + 0.1 * h)).abs() < 1e-12);
        let v = scalar(&refinement_loss(&lab, &[0, 1], Some(&unl), 0.1, EntropyMode::Literal).unwrap()).unwrap();
        assert!((v - (ce - 0.1 * h)).abs() < 1e-12);
        let v = scalar(&refinement_loss(&lab, &[0, 1], Some(&unl), 0.0, EntropyMode::Minimize).unwrap()).unwrap();
        assert!((v - ce).abs() < 1e-12);
    }
}
