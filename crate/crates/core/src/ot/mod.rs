//! Exact optimal transport couplings and the transport-based losses.

mod emd;

pub use emd::{emd, emd_uniform, uniform, CostMatrix, Coupling};

use candle_core::{DType, Tensor};

use crate::error::{contract, Result};
use crate::losses::{classification_loss, imputation_mse_loss, scalar, total_loss, LossReport, LossTerms, LossWeights};
use crate::nets::{classify, encode, encode_pair, encode_second, ComponentBundle, LatentBatch, MaskedBatch};
use crate::train::{OptimizerSet, StepPlan};

/// Squared Euclidean distances between the rows of `a` (n×d) and `b` (m×d).
pub fn pairwise_sq_dist(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, d) = a.dims2()?;
    let (m, d2) = b.dims2()?;
    if d != d2 {
        return contract(format!("row widths {d} and {d2} differ"));
    }
    let aa = a.sqr()?.sum_keepdim(1)?.broadcast_as((n, m))?;
    let bb = b.sqr()?.sum_keepdim(1)?.t()?.broadcast_as((n, m))?;
    let ab = a.matmul(&b.t()?)?;
    Ok(((aa + bb)? - ab.affine(2.0, 0.0)?)?.relu()?)
}

/// Cost matrix for the coupling step; gradients never flow through it.
pub fn cost_matrix(a: &Tensor, b: &Tensor) -> Result<CostMatrix> {
    let c = pairwise_sq_dist(&a.detach(), &b.detach())?;
    let (n, m) = c.dims2()?;
    let data = c.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    CostMatrix::new(n, m, data)
}

/// `sum_ij γ_ij ||a_i - b_j||²` with `γ` held fixed.
pub fn transport_loss(coupling: &Coupling, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, m) = (a.dims()[0], b.dims()[0]);
    if coupling.rows != n || coupling.cols != m {
        return contract(format!(
            "coupling is {}x{} but the batches are {n}x{m}; it was solved for other latents",
            coupling.rows, coupling.cols
        ));
    }
    let gamma = Tensor::from_vec(coupling.plan.clone(), (n, m), a.device())?.to_dtype(a.dtype())?;
    Ok((pairwise_sq_dist(a, b)? * gamma)?.sum_all()?)
}

/// Transport alignment between source and target joint latents.
pub fn ot_adaptation_loss(
    coupling: &Coupling,
    source: &LatentBatch,
    target: &LatentBatch,
    observed_only: bool,
) -> Result<Tensor> {
    transport_loss(coupling, &source.joint(observed_only)?, &target.joint(observed_only)?)
}

/// Transport between encoded and generated second components of the same source batch.
pub fn ot_imputation_loss(coupling: &Coupling, encoded: &Tensor, generated: &Tensor) -> Result<Tensor> {
    transport_loss(coupling, encoded, generated)
}

/// Couples two latent sets under uniform marginals.
pub fn solve_coupling(a: &Tensor, b: &Tensor) -> Result<Coupling> {
    emd_uniform(&cost_matrix(a, b)?)
}

/// One transport step: solve the couplings on frozen latents, then take one
/// gradient step with the couplings fixed. `weights` are already scaled for
/// the current progress.
pub fn alternate_step(
    bundle: &ComponentBundle,
    plan: &StepPlan,
    source: &MaskedBatch,
    target: &MaskedBatch,
    weights: &LossWeights,
    opt: &mut OptimizerSet,
    progress: f64,
) -> Result<LossReport> {
    let Some(labels) = &source.labels else {
        return contract("source batch has no labels");
    };
    let obs = bundle.spec.observed_only;
    let align = plan.adapt && weights.lambda1 > 0.0;
    let (ls, lt) = if align {
        let (a, b) = encode_pair(bundle, source, target, plan.path)?;
        (a, Some(b))
    } else {
        (encode(bundle, source, plan.path)?, None)
    };
    let l3 = classification_loss(&classify(bundle, &ls)?, labels)?;
    let mut objective = l3.affine(weights.lambda3, 0.0)?;
    let mut terms = LossTerms { l3: scalar(&l3)?, ..Default::default() };

    if let Some(lt) = lt {
        let (js, jt) = (ls.joint(obs)?, lt.joint(obs)?);
        let gamma = solve_coupling(&js, &jt)?;
        let l1 = transport_loss(&gamma, &js, &jt)?;
        terms.l1 = scalar(&l1)?;
        objective = (objective + l1.affine(weights.lambda1, 0.0)?)?;
    }
    if plan.impute && weights.lambda2 > 0.0 {
        let Some(generated) = &ls.z2 else {
            return contract("imputation step without generated latents");
        };
        let encoded = encode_second(bundle, source)?;
        let gamma = solve_coupling(&encoded, generated)?;
        let l_ot = ot_imputation_loss(&gamma, &encoded, generated)?;
        let l_mse = imputation_mse_loss(generated, &encoded)?;
        terms.l_ot = scalar(&l_ot)?;
        terms.l_mse = scalar(&l_mse)?;
        let l2 = (l_ot.affine(weights.lambda_ot, 0.0)? + l_mse.affine(weights.lambda_mse, 0.0)?)?;
        objective = (objective + l2.affine(weights.lambda2, 0.0)?)?;
    }
    let (_, report) = total_loss(weights, &terms)?;
    if report.is_finite() {
        opt.step(&objective.backward()?, progress)?;
    }
    Ok(report)
}
