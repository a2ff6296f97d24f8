use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{argmax, prob_accuracy};
use crate::data::Dataset;
use crate::error::{contract, Result};
use crate::losses::adversarial_pair_loss;
use crate::nets::{embed_dataset, predict_dataset, ComponentBundle, EncodingPath, Layer, Linear, Sequential};
use crate::rng::{substream_rng, Stream};
use crate::selftrain::PseudoLabelSet;

/// Settings of the fresh binary classifiers behind every two-sample diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of each sample set used for fitting; the rest is held out.
    pub train_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            train_fraction: 0.5,
        }
    }
}

fn to_tensor(rows: &[&Vec<f64>], dev: &Device) -> Result<Tensor> {
    let d = rows.first().map_or(0, |r| r.len());
    let flat: Vec<f32> = rows.iter().flat_map(|r| r.iter().map(|&v| v as f32)).collect();
    Ok(Tensor::from_vec(flat, (rows.len(), d), dev)?)
}

/// Held-out error of a fresh two-hidden-layer classifier separating `a` from `b`.
///
/// Both sets are split by `cfg.train_fraction`; the error is averaged over
/// the two held-out parts so unequal sizes do not bias it.
pub fn two_sample_error(a: &[Vec<f64>], b: &[Vec<f64>], seed: u64, cfg: &ProbeConfig) -> Result<f64> {
    if a.len() < 4 || b.len() < 4 {
        return contract("two-sample probe needs at least 4 rows per set");
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|r| r.len() != d) {
        return contract("two-sample probe rows differ in width");
    }
    let dev = Device::Cpu;
    let mut rng = substream_rng(seed, Stream::Diagnostics, 0);
    let split = |rows: &[Vec<f64>], rng: &mut rand_chacha::ChaCha8Rng| {
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        idx.shuffle(rng);
        let cut = ((rows.len() as f64 * cfg.train_fraction).round() as usize).clamp(1, rows.len() - 1);
        let (tr, te) = idx.split_at(cut);
        (tr.to_vec(), te.to_vec())
    };
    let (a_tr, a_te) = split(a, &mut rng);
    let (b_tr, b_te) = split(b, &mut rng);

    let mut init = substream_rng(seed, Stream::Diagnostics, 1);
    let net = Sequential {
        layers: vec![
            Layer::Linear(Linear::new(d, cfg.hidden, &mut init, DType::F32, &dev)?),
            Layer::Relu,
            Layer::Linear(Linear::new(cfg.hidden, cfg.hidden, &mut init, DType::F32, &dev)?),
            Layer::Relu,
            Layer::Linear(Linear::new(cfg.hidden, 1, &mut init, DType::F32, &dev)?),
            Layer::Sigmoid,
        ],
    };
    let vars = net.trainable().into_iter().map(|(_, v)| v).collect();
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let half = (cfg.batch_size / 2).max(1);
    let steps = a_tr.len().max(b_tr.len()).div_ceil(half);
    let mut order_a = a_tr.clone();
    let mut order_b = b_tr.clone();
    for _ in 0..cfg.epochs {
        order_a.shuffle(&mut rng);
        order_b.shuffle(&mut rng);
        for s in 0..steps {
            let pick = |order: &[usize], rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
                (0..half).map(|k| rows[order[(s * half + k) % order.len()]].clone()).collect()
            };
            let xa = pick(&order_a, a);
            let xb = pick(&order_b, b);
            let pa = net.forward(&to_tensor(&xa.iter().collect::<Vec<_>>(), &dev)?, true, &mut rng)?.squeeze(1)?;
            let pb = net.forward(&to_tensor(&xb.iter().collect::<Vec<_>>(), &dev)?, true, &mut rng)?.squeeze(1)?;
            let loss = adversarial_pair_loss(&pa, &pb)?.neg()?;
            opt.backward_step(&loss)?;
        }
    }
    let held_err = |idx: &[usize], rows: &[Vec<f64>], positive: bool, rng: &mut rand_chacha::ChaCha8Rng| -> Result<f64> {
        let sel: Vec<&Vec<f64>> = idx.iter().map(|&i| &rows[i]).collect();
        let p: Vec<f32> = net.forward(&to_tensor(&sel, &dev)?, false, rng)?.flatten_all()?.to_vec1()?;
        let wrong = p.iter().filter(|&&v| (v > 0.5) != positive).count();
        Ok(wrong as f64 / p.len() as f64)
    };
    Ok(0.5 * (held_err(&a_te, a, true, &mut rng)? + held_err(&b_te, b, false, &mut rng)?))
}

/// `2 (1 - 2 err)` from a held-out domain classifier, clipped to `[0, 2]`.
pub fn proxy_divergence(source: &[Vec<f64>], target: &[Vec<f64>], seed: u64, cfg: &ProbeConfig) -> Result<f64> {
    let err = two_sample_error(source, target, seed, cfg)?;
    Ok((2.0 * (1.0 - 2.0 * err)).clamp(0.0, 2.0))
}

fn concat_rows(a: &[Vec<f64>], b: Option<&Vec<Vec<f64>>>) -> Vec<Vec<f64>> {
    match b {
        Some(b) => a.iter().zip(b).map(|(x, y)| x.iter().chain(y).copied().collect()).collect(),
        None => a.to_vec(),
    }
}

/// Joint latents `[z1, z2]` of a dataset on `path`.
pub fn joint_latents(bundle: &ComponentBundle, ds: &Dataset, path: EncodingPath, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let (z1, z2) = embed_dataset(bundle, ds, path, batch_size)?;
    Ok(concat_rows(&z1, z2.as_ref()))
}

/// Imputation-side diagnostics on a labelled source set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputationDiagnostics {
    /// Mean squared distance between encoded and generated second components.
    pub mse_source: f64,
    /// Held-out error of a fresh classifier separating encoded from generated components.
    pub discriminator_error: f64,
    /// Held-out error of a fresh classifier separating source from target `(z1, ẑ2)` pairs.
    pub transfer_error: f64,
}

/// Source imputation error and cross-domain transfer probes. These are
/// proxies; the density-ratio suprema of the bound are not estimable.
pub fn imputation_diagnostics(
    bundle: &ComponentBundle,
    source: &Dataset,
    target: &Dataset,
    seed: u64,
    probe: &ProbeConfig,
) -> Result<ImputationDiagnostics> {
    if bundle.r.is_none() {
        return contract("imputation diagnostics need a generator");
    }
    let bs = 500;
    let (_, encoded) = embed_dataset(bundle, source, EncodingPath::Full, bs)?;
    let (_, generated) = embed_dataset(bundle, source, EncodingPath::Imputed, bs)?;
    let (Some(encoded), Some(generated)) = (encoded, generated) else {
        return contract("second components missing");
    };
    let n = encoded.len();
    let mse = encoded
        .iter()
        .zip(&generated)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    let discriminator_error = two_sample_error(&generated, &encoded, seed, probe)?;
    let s_pairs = joint_latents(bundle, source, EncodingPath::Imputed, bs)?;
    let t_pairs = joint_latents(bundle, target, EncodingPath::Imputed, bs)?;
    let transfer_error = two_sample_error(&s_pairs, &t_pairs, seed.wrapping_add(1), probe)?;
    Ok(ImputationDiagnostics {
        mse_source: mse,
        discriminator_error,
        transfer_error,
    })
}

/// Terms of the joint-risk proxy computed with pseudo-labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaProxy {
    pub source_error: f64,
    /// Disagreement between the classifier and the pseudo-labels.
    pub pseudo_error: f64,
    /// Error of the pseudo-labels against true target labels, when known.
    pub pseudo_label_error: Option<f64>,
}

impl LambdaProxy {
    /// `source_error + pseudo_error`, the observable part.
    pub fn value(&self) -> f64 {
        self.source_error + self.pseudo_error
    }

    /// All three terms, defined only when target labels are known.
    pub fn with_oracle(&self) -> Option<f64> {
        self.pseudo_label_error.map(|e| self.value() + e)
    }
}

pub fn lambda_proxy(
    bundle: &ComponentBundle,
    path: EncodingPath,
    source: &Dataset,
    target: &Dataset,
    pseudo: &PseudoLabelSet,
) -> Result<LambdaProxy> {
    let labels: Vec<usize> = source
        .labels()
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| crate::Error::Contract("source labels needed".into()))?;
    let source_error = 1.0 - prob_accuracy(&predict_dataset(bundle, source, path, 500)?, &labels)?;
    let probs = predict_dataset(bundle, target, path, 500)?;
    let pseudo_error = if pseudo.is_empty() {
        0.0
    } else {
        let wrong = pseudo.indices.iter().zip(&pseudo.labels).filter(|(&i, &y)| argmax(&probs[i]) != y).count();
        wrong as f64 / pseudo.len() as f64
    };
    let truth: Option<Vec<usize>> = target.labels().into_iter().collect();
    let pseudo_label_error = match (truth, pseudo.is_empty()) {
        (Some(t), false) => {
            let wrong = pseudo.indices.iter().zip(&pseudo.labels).filter(|(&i, &y)| t[i] != y).count();
            Some(wrong as f64 / pseudo.len() as f64)
        }
        _ => None,
    };
    Ok(LambdaProxy {
        source_error,
        pseudo_error,
        pseudo_label_error,
    })
}

/// Everything reported for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub source_risk: f64,
    pub proxy_divergence: f64,
    pub imputation: Option<ImputationDiagnostics>,
    pub lambda_proxy: LambdaProxy,
    pub target_accuracy: Option<f64>,
}

/// Computes every diagnostic for a frozen model. `path` is the encoding the
/// model classifies target samples with; source risk and the joint-risk
/// proxy use it on both domains.
pub fn diagnose(
    bundle: &ComponentBundle,
    path: EncodingPath,
    source: &Dataset,
    target: &Dataset,
    pseudo_threshold: f64,
    seed: u64,
    probe: &ProbeConfig,
) -> Result<DiagnosticsReport> {
    let bs = 500;
    let source_labels: Vec<usize> = source
        .labels()
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| crate::Error::Contract("source labels needed".into()))?;
    let source_probs = predict_dataset(bundle, source, path, bs)?;
    let source_risk = 1.0 - prob_accuracy(&source_probs, &source_labels)?;
    let zs = joint_latents(bundle, source, path, bs)?;
    let zt = joint_latents(bundle, target, path, bs)?;
    let proxy_divergence = proxy_divergence(&zs, &zt, seed, probe)?;
    let imputation = if bundle.r.is_some() && source.x2_observed && path == EncodingPath::Imputed {
        Some(imputation_diagnostics(bundle, source, target, seed, probe)?)
    } else {
        None
    };
    let target_probs = predict_dataset(bundle, target, path, bs)?;
    let pseudo = crate::selftrain::select_from_probs(&target_probs, pseudo_threshold);
    let lambda_proxy = lambda_proxy(bundle, path, source, target, &pseudo)?;
    let target_accuracy = match target.labels().into_iter().collect::<Option<Vec<usize>>>() {
        Some(t) => Some(prob_accuracy(&target_probs, &t)?),
        None => None,
    };
    Ok(DiagnosticsReport {
        source_risk,
        proxy_divergence,
        imputation,
        lambda_proxy,
        target_accuracy,
    })
}

/// Mean distance from each generated second component to the nearest
/// encoded candidate. `candidates[i]` holds raw missing blocks for sample `i`.
pub fn nearest_mode_distance(bundle: &ComponentBundle, ds: &Dataset, candidates: &[Vec<Vec<f32>>]) -> Result<f64> {
    if candidates.len() != ds.len() {
        return contract("one candidate list per sample is required");
    }
    let (_, generated) = embed_dataset(bundle, ds, EncodingPath::Imputed, 500)?;
    let generated = generated.ok_or_else(|| crate::Error::Contract("no generator".into()))?;
    let was_train = bundle.is_train();
    bundle.set_train(false);
    let mut total = 0.0;
    for (g, cands) in generated.iter().zip(candidates) {
        if cands.is_empty() {
            return contract("empty candidate list");
        }
        let d2 = cands[0].len();
        let flat: Vec<f32> = cands.iter().flatten().copied().collect();
        let x2 = Tensor::from_vec(flat, (cands.len(), d2), bundle.device())?.to_dtype(bundle.dtype())?;
        let z: Vec<Vec<f64>> = bundle.g2_forward(&x2)?.to_dtype(DType::F64)?.to_vec2()?;
        let best = z
            .iter()
            .map(|m| m.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        total += best;
    }
    bundle.set_train(was_train);
    Ok(total / ds.len() as f64)
}

/// Largest ratio `p/q` over a grid, for two densities given as nonnegative weights.
pub fn max_density_ratio(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return contract("densities must share a nonempty grid");
    }
    if q.iter().any(|&v| !(v > 0.0)) || p.iter().any(|&v| v < 0.0) {
        return contract("q must be positive and p nonnegative on the grid");
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    Ok(p.iter().zip(q).map(|(a, b)| (a / sp) / (b / sq)).fold(f64::NEG_INFINITY, f64::max))
}
