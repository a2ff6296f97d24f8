use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{contract, Result};
use crate::nets::{classify, encode, ComponentBundle, EncodingPath, MaskedBatch};

const CLAMP: f64 = 1e-7;

/// A trained run offered to unsupervised model selection.
pub struct IwCandidate<'a> {
    pub run_id: String,
    pub bundle: &'a ComponentBundle,
    /// Encoding used for the source validation samples.
    pub path: EncodingPath,
}

/// Estimated target risk of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IwRisk {
    pub run_id: String,
    pub risk: f64,
    /// Plain source-validation cross-entropy.
    pub source_ce: f64,
    /// True when the weights were degenerate and `risk` is `source_ce`.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IwSelection {
    pub best: String,
    pub risks: Vec<IwRisk>,
}

/// Per-sample cross-entropy and domain-discriminator output `D1(z)` on a
/// labelled set, in eval mode.
pub fn losses_and_source_probs(
    bundle: &ComponentBundle,
    ds: &Dataset,
    path: EncodingPath,
    batch_size: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let was_train = bundle.is_train();
    bundle.set_train(false);
    let mut losses = Vec::with_capacity(ds.len());
    let mut d1 = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = MaskedBatch::from_dataset(ds, chunk, bundle.dtype(), bundle.device())?;
        let Some(labels) = batch.labels.as_deref() else {
            bundle.set_train(was_train);
            return contract("model selection needs labelled source validation data");
        };
        let latent = encode(bundle, &batch, path)?;
        let probs: Vec<Vec<f64>> = classify(bundle, &latent)?.to_dtype(DType::F64)?.to_vec2()?;
        losses.extend(probs.iter().zip(labels).map(|(p, &y)| -p[y].max(CLAMP).ln()));
        let p: Vec<f64> = bundle
            .d1_forward(&latent.joint(bundle.spec.observed_only)?)?
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1()?;
        d1.extend(p);
    }
    bundle.set_train(was_train);
    Ok((losses, d1))
}

/// Density-ratio weights `p_T/p_S = (1 - D1)/D1` from source probabilities.
pub fn raw_weights(source_probs: &[f64]) -> Vec<f64> {
    source_probs
        .iter()
        .map(|&p| {
            let p = p.clamp(CLAMP, 1.0 - CLAMP);
            (1.0 - p) / p
        })
        .collect()
}

/// Weights rescaled to mean one; `None` if they are degenerate.
pub fn normalized_weights(raw: &[f64]) -> Option<Vec<f64>> {
    let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
    if raw.is_empty() || !mean.is_finite() || mean < 1e-6 {
        return None;
    }
    Some(raw.iter().map(|w| w / mean).collect())
}

/// Importance-weighted risk with a control variate on the weights:
/// `mean(w l) + eta (mean(w) - 1)` with `eta = -cov(w l, w) / var(w)`.
/// Returns `None` when the weights are degenerate.
pub fn weighted_risk(losses: &[f64], raw: &[f64]) -> Option<f64> {
    if losses.len() != raw.len() || losses.len() < 2 {
        return None;
    }
    let n = losses.len() as f64;
    let mean_w = raw.iter().sum::<f64>() / n;
    if !mean_w.is_finite() || mean_w < 1e-6 {
        return None;
    }
    let wl: Vec<f64> = losses.iter().zip(raw).map(|(l, w)| l * w).collect();
    let mean_wl = wl.iter().sum::<f64>() / n;
    let cov = wl.iter().zip(raw).map(|(a, w)| (a - mean_wl) * (w - mean_w)).sum::<f64>() / (n - 1.0);
    let var = raw.iter().map(|w| (w - mean_w) * (w - mean_w)).sum::<f64>() / (n - 1.0);
    let eta = if var > 1e-12 { -cov / var } else { 0.0 };
    let risk = mean_wl + eta * (mean_w - 1.0);
    risk.is_finite().then_some(risk)
}

/// Ranks candidates by importance-weighted source-validation cross-entropy,
/// a simplified deep embedded validation. Degenerate weights fall back to
/// the unweighted cross-entropy with a warning.
pub fn select_model_iw(candidates: &[IwCandidate<'_>], source_val: &Dataset, batch_size: usize) -> Result<IwSelection> {
    if candidates.is_empty() {
        return contract("no candidates to select from");
    }
    if source_val.len() < 2 {
        return contract("source validation set needs at least two samples");
    }
    let mut risks = Vec::with_capacity(candidates.len());
    for c in candidates {
        let (losses, d1) = losses_and_source_probs(c.bundle, source_val, c.path, batch_size)?;
        let source_ce = losses.iter().sum::<f64>() / losses.len() as f64;
        let (risk, fallback) = match weighted_risk(&losses, &raw_weights(&d1)) {
            Some(r) => (r, false),
            None => {
                log::warn!("run {}: degenerate importance weights, using source cross-entropy", c.run_id);
                (source_ce, true)
            }
        };
        risks.push(IwRisk {
            run_id: c.run_id.clone(),
            risk,
            source_ce,
            fallback,
        });
    }
    let best = risks
        .iter()
        .min_by(|a, b| a.risk.total_cmp(&b.risk))
        .map(|r| r.run_id.clone())
        .unwrap_or_default();
    Ok(IwSelection { best, risks })
}
