//! Adversarial, imputation and classification losses.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Result};
use crate::nets::{ComponentBundle, LatentBatch};

/// Floor applied to every log argument.
pub const LOG_EPS: f64 = 1e-7;

fn clamped_log(p: &Tensor) -> Result<Tensor> {
    Ok(p.clamp(LOG_EPS, f64::INFINITY)?.log()?)
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// `mean log p_pos + mean log(1 - p_neg)` for discriminator outputs in (0, 1).
pub fn adversarial_pair_loss(p_pos: &Tensor, p_neg: &Tensor) -> Result<Tensor> {
    if p_pos.elem_count() == 0 || p_neg.elem_count() == 0 {
        return contract("adversarial loss on an empty batch");
    }
    let pos = clamped_log(p_pos)?.mean_all()?;
    let neg = clamped_log(&p_neg.affine(-1.0, 1.0)?)?.mean_all()?;
    Ok((pos + neg)?)
}

/// Domain-alignment loss with `D1` reading source as the positive class.
pub fn adaptation_loss(bundle: &ComponentBundle, source: &LatentBatch, target: &LatentBatch) -> Result<Tensor> {
    if source.is_empty() || target.is_empty() {
        return contract("adaptation loss on an empty batch");
    }
    let obs = bundle.spec.observed_only;
    let ps = bundle.d1_forward(&source.joint(obs)?)?;
    let pt = bundle.d1_forward(&target.joint(obs)?)?;
    adversarial_pair_loss(&ps, &pt)
}

/// Imputation adversarial loss; `D2` outputs the probability that its input is generated.
pub fn imputation_adv_loss(bundle: &ComponentBundle, generated: &Tensor, encoded: &Tensor) -> Result<Tensor> {
    if generated.dims() != encoded.dims() {
        return contract(format!(
            "generated latents {:?} and encoded latents {:?} differ in shape",
            generated.dims(),
            encoded.dims()
        ));
    }
    let pg = bundle.d2_forward(generated)?;
    let pe = bundle.d2_forward(encoded)?;
    adversarial_pair_loss(&pg, &pe)
}

/// Batch mean of squared Euclidean distances between rows.
pub fn imputation_mse_loss(generated: &Tensor, encoded: &Tensor) -> Result<Tensor> {
    if generated.dims() != encoded.dims() || generated.rank() != 2 {
        return contract(format!(
            "mse operands {:?} and {:?} must be equal-shape matrices",
            generated.dims(),
            encoded.dims()
        ));
    }
    if generated.dims()[0] == 0 {
        return contract("mse on an empty batch");
    }
    Ok((generated - encoded)?.sqr()?.sum(1)?.mean_all()?)
}

/// Mean negative log-probability of the true class.
pub fn classification_loss(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, k) = probs.dims2()?;
    if n != labels.len() {
        return contract(format!("{n} prediction rows for {} labels", labels.len()));
    }
    if n == 0 {
        return contract("classification loss on an empty batch");
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return contract(format!("label {bad} out of range for {k} classes"));
    }
    let idx: Vec<u32> = labels.iter().map(|&y| y as u32).collect();
    let idx = Tensor::from_vec(idx, (n, 1), probs.device())?;
    let picked = probs.gather(&idx, 1)?;
    Ok(clamped_log(&picked)?.mean_all()?.neg()?)
}

/// Fraction of `p_pos` above 0.5 and `p_neg` below it.
pub fn discriminator_accuracy(p_pos: &Tensor, p_neg: &Tensor) -> Result<f64> {
    let pos: Vec<f64> = p_pos.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    let neg: Vec<f64> = p_neg.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    let correct = pos.iter().filter(|&&p| p > 0.5).count() + neg.iter().filter(|&&p| p <= 0.5).count();
    Ok(correct as f64 / (pos.len() + neg.len()).max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Constant,
    /// Feature-side adaptation and imputation weights follow the gradient-scale ramp.
    Ramp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda_mse: f64,
    pub lambda_ot: f64,
    pub schedule: ScheduleMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            lambda_mse: 1.0,
            lambda_ot: 0.1,
            schedule: ScheduleMode::Ramp,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda_mse, self.lambda_ot];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return config(format!("loss weights must be finite and nonnegative: {self:?}"));
        }
        if self.lambda1 > 1.0 || self.lambda2 > 1.0 {
            return config("lambda1 and lambda2 must lie in [0, 1]");
        }
        Ok(())
    }

    /// Weights seen by the feature side at gradient scale `s`.
    pub fn at_scale(&self, s: f64) -> LossWeights {
        match self.schedule {
            ScheduleMode::Constant => *self,
            ScheduleMode::Ramp => LossWeights {
                lambda1: self.lambda1 * s,
                lambda2: self.lambda2 * s,
                ..*self
            },
        }
    }
}

/// Scalar values of every loss term for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    pub l_adv: f64,
    pub l_mse: f64,
    pub l_ot: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
    pub d1_accuracy: f64,
    pub d2_accuracy: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.l1, self.l_adv, self.l_mse, self.l_ot, self.l2, self.l3, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Named values, in a fixed order, for the metrics stream.
    pub fn entries(&self) -> [(&'static str, f64); 9] {
        [
            ("l1", self.l1),
            ("l_adv", self.l_adv),
            ("l_mse", self.l_mse),
            ("l_ot", self.l_ot),
            ("l2", self.l2),
            ("l3", self.l3),
            ("loss", self.total),
            ("d1_accuracy", self.d1_accuracy),
            ("d2_accuracy", self.d2_accuracy),
        ]
    }
}

/// Raw loss terms before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub l1: f64,
    pub l_adv: f64,
    pub l_mse: f64,
    pub l_ot: f64,
    pub l3: f64,
    pub d1_accuracy: f64,
    pub d2_accuracy: f64,
}

/// `L = λ1·L1 + λ2·L2 + λ3·L3` with `L2 = L_ADV + λ_OT·L_OT + λ_MSE·L_MSE`.
///
/// The adversarial backend leaves `l_ot` at zero and the transport backend
/// leaves `l_adv` at zero, so one composition serves both.
pub fn total_loss(weights: &LossWeights, terms: &LossTerms) -> Result<(f64, LossReport)> {
    weights.validate()?;
    let l2 = terms.l_adv + weights.lambda_ot * terms.l_ot + weights.lambda_mse * terms.l_mse;
    let total = weights.lambda1 * terms.l1 + weights.lambda2 * l2 + weights.lambda3 * terms.l3;
    Ok((
        total,
        LossReport {
            l1: terms.l1,
            l_adv: terms.l_adv,
            l_mse: terms.l_mse,
            l_ot: terms.l_ot,
            l2,
            l3: terms.l3,
            total,
            d1_accuracy: terms.d1_accuracy,
            d2_accuracy: terms.d2_accuracy,
        },
    ))
}
