//! Encoders, generator, classifier and discriminators.

mod checkpoint;
mod grl;
mod layers;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT};
pub use grl::grl_apply;
pub use layers::{softmax_rows, BatchNorm, Conv2d, Layer, Linear, Sequential};

use std::cell::{Cell, RefCell};

use candle_core::{DType, Device, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Domain, FixedMask, InputLayout};
use crate::error::{config, contract, Result};
use crate::rng::{stream_rng, substream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ConvDigits,
    MlpTabular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub family: Family,
    /// Layout of a full (unsplit) sample.
    pub layout: InputLayout,
    pub mask: FixedMask,
    pub num_classes: usize,
    /// Conv filters per layer, or hidden widths ending with the latent width.
    pub encoder_widths: Vec<usize>,
    pub classifier_widths: Vec<usize>,
    pub discriminator_widths: Vec<usize>,
    pub generator_widths: Vec<usize>,
    pub kernel: usize,
    pub dropout: f64,
    pub batch_norm_momentum: f64,
    pub batch_norm_eps: f64,
    /// Classifier and domain discriminator read `z1` only.
    pub observed_only: bool,
}

impl ArchitectureSpec {
    /// Convolutional family for 32x32 digits.
    pub fn conv_digits(layout: InputLayout, mask: FixedMask, num_classes: usize) -> Self {
        Self {
            family: Family::ConvDigits,
            layout,
            mask,
            num_classes,
            encoder_widths: vec![64, 64, 128],
            classifier_widths: vec![100, 100],
            discriminator_widths: vec![100],
            generator_widths: vec![512, 512],
            kernel: 5,
            dropout: 0.5,
            batch_norm_momentum: 0.1,
            batch_norm_eps: 1e-5,
            observed_only: false,
        }
    }

    /// Fully connected family for flat feature vectors.
    pub fn mlp_tabular(layout: InputLayout, mask: FixedMask, num_classes: usize) -> Self {
        Self {
            family: Family::MlpTabular,
            layout,
            mask,
            num_classes,
            encoder_widths: vec![128, 128, 128],
            classifier_widths: vec![128],
            discriminator_widths: vec![128],
            generator_widths: vec![256, 256],
            kernel: 5,
            dropout: 0.0,
            batch_norm_momentum: 0.1,
            batch_norm_eps: 1e-5,
            observed_only: false,
        }
    }

    /// The two-layer 512-wide discriminator.
    pub fn with_strong_discriminator(mut self) -> Self {
        self.discriminator_widths = vec![512, 512];
        self
    }

    /// Adds a third 512-wide generator layer.
    pub fn with_deep_generator(mut self) -> Self {
        self.generator_widths = vec![512, 512, 512];
        self
    }

    pub fn has_missing_block(&self) -> bool {
        self.mask.is_active()
    }

    /// Width of each latent component.
    pub fn latent_dim(&self) -> usize {
        match (self.family, self.layout) {
            (Family::ConvDigits, InputLayout::Image(shape)) => {
                let pools = self.encoder_widths.len() as u32;
                let f = 2usize.pow(pools);
                self.encoder_widths.last().copied().unwrap_or(0) * (shape.height / f) * (shape.width / f)
            }
            _ => self.encoder_widths.last().copied().unwrap_or(0),
        }
    }

    /// Input width of the classifier and domain discriminator.
    pub fn joint_dim(&self) -> usize {
        if self.observed_only || !self.has_missing_block() {
            self.latent_dim()
        } else {
            2 * self.latent_dim()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask.len() != self.layout.len() {
            return config("architecture mask does not match the input layout");
        }
        if self.num_classes < 2 {
            return config("at least two classes are needed");
        }
        if self.encoder_widths.is_empty() {
            return config("encoder needs at least one layer");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return config(format!("dropout rate {} outside [0, 1)", self.dropout));
        }
        if self.family == Family::ConvDigits {
            let InputLayout::Image(shape) = self.layout else {
                return config("conv_digits needs image inputs");
            };
            let f = 2usize.pow(self.encoder_widths.len() as u32);
            if shape.height % f != 0 || shape.width % f != 0 {
                return config(format!("image side must be divisible by {f}"));
            }
        }
        Ok(())
    }
}

/// Which trainable part of the bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    G1,
    G2,
    R,
    F,
    D1,
    D2,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::G1,
        Component::G2,
        Component::R,
        Component::F,
        Component::D1,
        Component::D2,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Component::G1 => "g1",
            Component::G2 => "g2",
            Component::R => "r",
            Component::F => "f",
            Component::D1 => "d1",
            Component::D2 => "d2",
        }
    }
}

/// All parametric components of one model.
pub struct ComponentBundle {
    pub spec: ArchitectureSpec,
    pub g1: Sequential,
    pub g2: Option<Sequential>,
    pub r: Option<Sequential>,
    pub f: Sequential,
    pub d1: Sequential,
    pub d2: Option<Sequential>,
    device: Device,
    dtype: DType,
    train: Cell<bool>,
    dropout_rng: RefCell<ChaCha8Rng>,
    observed_scatter: Option<Tensor>,
    missing_scatter: Option<Tensor>,
}

fn mlp(input: usize, widths: &[usize], output: usize, spec: &ArchitectureSpec, bn: bool, rng: &mut ChaCha8Rng, dtype: DType, dev: &Device) -> Result<Vec<Layer>> {
    let mut layers = Vec::new();
    let mut width = input;
    for (i, &w) in widths.iter().enumerate() {
        layers.push(Layer::Linear(Linear::new(width, w, rng, dtype, dev)?));
        if bn {
            layers.push(Layer::BatchNorm(BatchNorm::new(w, spec.batch_norm_momentum, spec.batch_norm_eps, dtype, dev)?));
        }
        layers.push(Layer::Relu);
        if i == 0 && spec.dropout > 0.0 && output == spec.num_classes {
            layers.push(Layer::Dropout(spec.dropout));
        }
        width = w;
    }
    layers.push(Layer::Linear(Linear::new(width, output, rng, dtype, dev)?));
    Ok(layers)
}

/// Index map that scatters `[block, 0]` into a full flattened sample.
fn scatter_index(mask: &FixedMask, take_missing: bool, device: &Device) -> Result<Tensor> {
    let block_len = if take_missing { mask.missing_count() } else { mask.observed_count() };
    let mut next = 0u32;
    let idx: Vec<u32> = mask
        .bits()
        .iter()
        .map(|&missing| {
            if missing == take_missing {
                next += 1;
                next - 1
            } else {
                block_len as u32
            }
        })
        .collect();
    Ok(Tensor::new(idx.as_slice(), device)?)
}

impl ComponentBundle {
    /// Builds a freshly initialised bundle; component `i` draws from its own init stream.
    pub fn new(spec: ArchitectureSpec, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        spec.validate()?;
        let dev = device;
        let latent = spec.latent_dim();
        let missing = spec.has_missing_block();
        let bn = spec.family == Family::ConvDigits;
        let rng = |c: Component| substream_rng(seed, Stream::Init, c as u64);
        let encoder = |input_dim: usize, rng: &mut ChaCha8Rng| -> Result<Sequential> {
            let mut layers = Vec::new();
            match (spec.family, spec.layout) {
                (Family::ConvDigits, InputLayout::Image(shape)) => {
                    let mut ch = shape.channels;
                    for &filters in &spec.encoder_widths {
                        layers.push(Layer::Conv(Conv2d::new(ch, filters, spec.kernel, rng, dtype, dev)?));
                        layers.push(Layer::MaxPool);
                        layers.push(Layer::BatchNorm(BatchNorm::new(
                            filters,
                            spec.batch_norm_momentum,
                            spec.batch_norm_eps,
                            dtype,
                            dev,
                        )?));
                        layers.push(Layer::Relu);
                        ch = filters;
                    }
                    layers.push(Layer::Flatten);
                }
                _ => {
                    let (hidden, last) = spec.encoder_widths.split_at(spec.encoder_widths.len() - 1);
                    layers = mlp(input_dim, hidden, last[0], &spec, false, rng, dtype, dev)?;
                }
            }
            layers.push(Layer::Sigmoid);
            Ok(Sequential { layers })
        };
        let g1 = encoder(spec.mask.observed_count(), &mut rng(Component::G1))?;
        let g2 = if missing {
            Some(encoder(spec.mask.missing_count(), &mut rng(Component::G2))?)
        } else {
            None
        };
        let r = if missing {
            let mut layers = mlp(latent, &spec.generator_widths, latent, &spec, bn, &mut rng(Component::R), dtype, dev)?;
            layers.push(Layer::Sigmoid);
            Some(Sequential { layers })
        } else {
            None
        };
        let f = Sequential {
            layers: mlp(spec.joint_dim(), &spec.classifier_widths, spec.num_classes, &spec, bn, &mut rng(Component::F), dtype, dev)?,
        };
        let disc = |input: usize, rng: &mut ChaCha8Rng| -> Result<Sequential> {
            let mut layers = mlp(input, &spec.discriminator_widths, 1, &spec, bn, rng, dtype, dev)?;
            layers.push(Layer::Sigmoid);
            Ok(Sequential { layers })
        };
        let d1 = disc(spec.joint_dim(), &mut rng(Component::D1))?;
        let d2 = if missing { Some(disc(latent, &mut rng(Component::D2))?) } else { None };
        let (observed_scatter, missing_scatter) = if spec.family == Family::ConvDigits {
            (
                Some(scatter_index(&spec.mask, false, dev)?),
                Some(scatter_index(&spec.mask, true, dev)?),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            g1,
            g2,
            r,
            f,
            d1,
            d2,
            device: device.clone(),
            dtype,
            train: Cell::new(false),
            dropout_rng: RefCell::new(stream_rng(seed, Stream::Dropout)),
            observed_scatter,
            missing_scatter,
            spec,
        })
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Switches batch-norm and dropout between training and inference behaviour.
    pub fn set_train(&self, train: bool) {
        self.train.set(train);
    }

    pub fn is_train(&self) -> bool {
        self.train.get()
    }

    pub fn reseed_dropout(&self, rng: ChaCha8Rng) {
        *self.dropout_rng.borrow_mut() = rng;
    }

    pub fn component(&self, c: Component) -> Option<&Sequential> {
        match c {
            Component::G1 => Some(&self.g1),
            Component::G2 => self.g2.as_ref(),
            Component::R => self.r.as_ref(),
            Component::F => Some(&self.f),
            Component::D1 => Some(&self.d1),
            Component::D2 => self.d2.as_ref(),
        }
    }

    /// Trainable variables of one component (empty when it does not exist).
    pub fn vars(&self, c: Component) -> Vec<Var> {
        self.component(c)
            .map(|s| s.trainable().into_iter().map(|(_, v)| v).collect())
            .unwrap_or_default()
    }

    /// Every persistent tensor under a qualified name such as `g1.0.weight`.
    pub fn named_state(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        for c in Component::ALL {
            if let Some(seq) = self.component(c) {
                for (name, v) in seq.state() {
                    out.push((format!("{}.{name}", c.as_str()), v));
                }
            }
        }
        out
    }

    /// Snapshot of all persistent values, for equality checks.
    pub fn snapshot(&self) -> Result<Vec<(String, Vec<f64>)>> {
        self.named_state()
            .into_iter()
            .map(|(n, v)| {
                let vals = v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
                Ok((n, vals))
            })
            .collect()
    }

    pub fn run(&self, seq: &Sequential, x: &Tensor) -> Result<Tensor> {
        let mut rng = self.dropout_rng.borrow_mut();
        seq.forward(x, self.train.get(), &mut rng)
    }

    fn encoder_input(&self, block: &Tensor, missing: bool) -> Result<Tensor> {
        let scatter = if missing { &self.missing_scatter } else { &self.observed_scatter };
        match (scatter, self.spec.layout) {
            (Some(idx), InputLayout::Image(shape)) => {
                let b = block.dims()[0];
                let padded = Tensor::cat(&[block, &Tensor::zeros((b, 1), block.dtype(), block.device())?], 1)?;
                Ok(padded
                    .index_select(idx, 1)?
                    .reshape((b, shape.channels, shape.height, shape.width))?)
            }
            _ => Ok(block.clone()),
        }
    }

    pub fn g1_forward(&self, x1: &Tensor) -> Result<Tensor> {
        let input = self.encoder_input(x1, false)?;
        self.run(&self.g1, &input)
    }

    pub fn g2_forward(&self, x2: &Tensor) -> Result<Tensor> {
        let Some(g2) = &self.g2 else {
            return contract("bundle has no missing-block encoder");
        };
        let input = self.encoder_input(x2, true)?;
        self.run(g2, &input)
    }

    pub fn r_forward(&self, z1: &Tensor) -> Result<Tensor> {
        let Some(r) = &self.r else {
            return contract("bundle has no generator");
        };
        self.run(r, z1)
    }

    /// Domain discriminator output, one probability per row.
    pub fn d1_forward(&self, joint: &Tensor) -> Result<Tensor> {
        Ok(self.run(&self.d1, joint)?.squeeze(1)?)
    }

    /// Imputation discriminator output, one probability per row.
    pub fn d2_forward(&self, z2: &Tensor) -> Result<Tensor> {
        let Some(d2) = &self.d2 else {
            return contract("bundle has no imputation discriminator");
        };
        Ok(self.run(d2, z2)?.squeeze(1)?)
    }

    pub fn logits(&self, latent: &LatentBatch) -> Result<Tensor> {
        let joint = latent.joint(self.spec.observed_only)?;
        let expected = self.f.first_linear().map(|l| l.in_features()).unwrap_or(0);
        if joint.dims()[1] != expected {
            return config(format!(
                "latent width {} does not match classifier input {expected}",
                joint.dims()[1]
            ));
        }
        self.run(&self.f, &joint)
    }
}

/// A mini-batch split into observed and missing blocks.
#[derive(Debug, Clone)]
pub struct MaskedBatch {
    pub x1: Tensor,
    /// `None` when the mask is inactive.
    pub x2: Option<Tensor>,
    pub labels: Option<Vec<usize>>,
    pub domain: Domain,
    /// False when `x2` holds zero fill rather than data.
    pub x2_observed: bool,
    pub indices: Vec<usize>,
}

impl MaskedBatch {
    pub fn from_dataset(ds: &Dataset, indices: &[usize], dtype: DType, device: &Device) -> Result<Self> {
        if indices.is_empty() {
            return contract("empty batch");
        }
        let d1 = ds.dim_x1();
        let d2 = ds.dim_x2();
        let mut x1 = Vec::with_capacity(indices.len() * d1);
        let mut x2 = Vec::with_capacity(indices.len() * d2);
        let mut labels = Vec::with_capacity(indices.len());
        let mut domain = None;
        for &i in indices {
            let s = &ds.samples[i];
            x1.extend_from_slice(&s.x1);
            x2.extend_from_slice(&s.x2);
            labels.push(s.label);
            match domain {
                None => domain = Some(s.domain),
                Some(d) if d != s.domain => return contract("batch mixes domains"),
                _ => {}
            }
        }
        let n = indices.len();
        let x1 = Tensor::from_vec(x1, (n, d1), device)?.to_dtype(dtype)?;
        let x2 = if d2 > 0 {
            Some(Tensor::from_vec(x2, (n, d2), device)?.to_dtype(dtype)?)
        } else {
            None
        };
        let labels = labels.iter().copied().collect::<Option<Vec<usize>>>();
        Ok(Self {
            x1,
            x2,
            labels,
            domain: domain.unwrap_or(Domain::Source),
            x2_observed: ds.x2_observed,
            indices: indices.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Drops labels, as required for target batches seen by trainers.
    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    /// Stacks two batches row-wise; labels are kept only when both carry them.
    pub fn concat(&self, other: &MaskedBatch) -> Result<MaskedBatch> {
        let x2 = match (&self.x2, &other.x2) {
            (Some(a), Some(b)) => Some(Tensor::cat(&[a, b], 0)?),
            (None, None) => None,
            _ => return contract("only one batch has a missing block"),
        };
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(MaskedBatch {
            x1: Tensor::cat(&[&self.x1, &other.x1], 0)?,
            x2,
            labels,
            domain: self.domain,
            x2_observed: self.x2_observed && other.x2_observed,
            indices: self.indices.iter().chain(&other.indices).copied().collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Both components encoded from data.
    Encoded,
    /// Second component produced by the generator.
    Generated,
    /// Only the observed component.
    ObservedOnly,
}

/// Per-sample latent pairs `(z1, z2)`.
#[derive(Debug, Clone)]
pub struct LatentBatch {
    pub z1: Tensor,
    pub z2: Option<Tensor>,
    pub provenance: Provenance,
}

impl LatentBatch {
    pub fn len(&self) -> usize {
        self.z1.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenation `[z1, z2]`, or `z1` alone.
    pub fn joint(&self, observed_only: bool) -> Result<Tensor> {
        match (&self.z2, observed_only) {
            (Some(z2), false) => Ok(Tensor::cat(&[&self.z1, z2], 1)?),
            _ => Ok(self.z1.clone()),
        }
    }

    pub fn narrow(&self, start: usize, len: usize) -> Result<LatentBatch> {
        Ok(LatentBatch {
            z1: self.z1.narrow(0, start, len)?,
            z2: self.z2.as_ref().map(|z| z.narrow(0, start, len)).transpose()?,
            provenance: self.provenance,
        })
    }

    pub fn detach(&self) -> LatentBatch {
        LatentBatch {
            z1: self.z1.detach(),
            z2: self.z2.as_ref().map(Tensor::detach),
            provenance: self.provenance,
        }
    }
}

/// How a batch is mapped to latents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingPath {
    /// `(g1(x1), g2(x2))`, requires observed `x2`.
    Full,
    /// `(g1(x1), g2(x2))` where `x2` may be zero fill.
    ZeroFilled,
    /// `(g1(x1), r(g1(x1)))`.
    Imputed,
    /// `g1(x1)` only.
    Observed,
}

/// `(g1(x1), g2(x2))` on batches whose `x2` holds real data.
pub fn encode_full(bundle: &ComponentBundle, batch: &MaskedBatch) -> Result<LatentBatch> {
    if !batch.x2_observed {
        return contract("encode_full called on a zero-filled missing block");
    }
    encode_zero_filled(bundle, batch)
}

/// `(g1(x1), g2(x2))` regardless of whether `x2` is zero fill.
pub fn encode_zero_filled(bundle: &ComponentBundle, batch: &MaskedBatch) -> Result<LatentBatch> {
    let Some(x2) = &batch.x2 else {
        return contract("batch has no missing block");
    };
    Ok(LatentBatch {
        z1: bundle.g1_forward(&batch.x1)?,
        z2: Some(bundle.g2_forward(x2)?),
        provenance: Provenance::Encoded,
    })
}

/// `g2(x2)` alone, for batches whose `x2` holds real data.
pub fn encode_second(bundle: &ComponentBundle, batch: &MaskedBatch) -> Result<Tensor> {
    match &batch.x2 {
        Some(x2) if batch.x2_observed => bundle.g2_forward(x2),
        Some(_) => contract("missing block is zero fill"),
        None => contract("batch has no missing block"),
    }
}

/// `(g1(x1), r(g1(x1)))`.
pub fn encode_hat(bundle: &ComponentBundle, batch: &MaskedBatch) -> Result<LatentBatch> {
    let z1 = bundle.g1_forward(&batch.x1)?;
    let z2 = bundle.r_forward(&z1)?;
    Ok(LatentBatch {
        z1,
        z2: Some(z2),
        provenance: Provenance::Generated,
    })
}

pub fn encode_observed(bundle: &ComponentBundle, batch: &MaskedBatch) -> Result<LatentBatch> {
    Ok(LatentBatch {
        z1: bundle.g1_forward(&batch.x1)?,
        z2: None,
        provenance: Provenance::ObservedOnly,
    })
}

pub fn encode(bundle: &ComponentBundle, batch: &MaskedBatch, path: EncodingPath) -> Result<LatentBatch> {
    match path {
        EncodingPath::Full => encode_full(bundle, batch),
        EncodingPath::ZeroFilled => encode_zero_filled(bundle, batch),
        EncodingPath::Imputed => encode_hat(bundle, batch),
        EncodingPath::Observed => encode_observed(bundle, batch),
    }
}

/// Encodes two batches in one forward pass so batch statistics span both,
/// then splits the latents back apart.
pub fn encode_pair(
    bundle: &ComponentBundle,
    first: &MaskedBatch,
    second: &MaskedBatch,
    path: EncodingPath,
) -> Result<(LatentBatch, LatentBatch)> {
    let n = first.len();
    let joint = encode(bundle, &first.concat(second)?, path)?;
    Ok((joint.narrow(0, n)?, joint.narrow(n, second.len())?))
}

/// Row-stochastic class-probability matrix.
pub fn classify(bundle: &ComponentBundle, latent: &LatentBatch) -> Result<Tensor> {
    softmax_rows(&bundle.logits(latent)?)
}

/// Class probabilities for a whole dataset in eval mode, batched.
pub fn predict_dataset(
    bundle: &ComponentBundle,
    ds: &Dataset,
    path: EncodingPath,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let was_train = bundle.is_train();
    bundle.set_train(false);
    let mut out = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = MaskedBatch::from_dataset(ds, chunk, bundle.dtype(), bundle.device())?;
        let p = classify(bundle, &encode(bundle, &batch, path)?)?;
        out.extend(p.to_dtype(DType::F64)?.to_vec2::<f64>()?);
    }
    bundle.set_train(was_train);
    Ok(out)
}

/// Latents for a whole dataset in eval mode as `(z1, z2)` row vectors.
pub fn embed_dataset(
    bundle: &ComponentBundle,
    ds: &Dataset,
    path: EncodingPath,
    batch_size: usize,
) -> Result<(Vec<Vec<f64>>, Option<Vec<Vec<f64>>>)> {
    let was_train = bundle.is_train();
    bundle.set_train(false);
    let mut z1 = Vec::with_capacity(ds.len());
    let mut z2 = Vec::new();
    let mut has_z2 = false;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = MaskedBatch::from_dataset(ds, chunk, bundle.dtype(), bundle.device())?;
        let lat = encode(bundle, &batch, path)?;
        z1.extend(lat.z1.to_dtype(DType::F64)?.to_vec2::<f64>()?);
        if let Some(t) = &lat.z2 {
            has_z2 = true;
            z2.extend(t.to_dtype(DType::F64)?.to_vec2::<f64>()?);
        }
    }
    bundle.set_train(was_train);
    Ok((z1, has_z2.then_some(z2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_mask, make_horizontal_patch_mask, ImageShape};

    fn toy_dataset(domain: Domain, shape: ImageShape, n: usize) -> Dataset {
        let rows = (0..n)
            .map(|i| {
                let x = (0..shape.len()).map(|j| (((i * 31 + j * 7) % 13) as f32 / 6.5) - 1.0).collect();
                (x, Some(i % 3))
            })
            .collect();
        Dataset::from_full("toy", InputLayout::Image(shape), 3, domain, rows).unwrap()
    }

    fn mlp_bundle() -> (ComponentBundle, Dataset, Dataset) {
        let shape = ImageShape::new(1, 4, 3);
        let mask = make_horizontal_patch_mask(shape, 0.5).unwrap();
        let spec = ArchitectureSpec::mlp_tabular(InputLayout::Image(shape), mask.clone(), 3);
        let bundle = ComponentBundle::new(spec, 0, DType::F64, &Device::Cpu).unwrap();
        let src = apply_mask(&toy_dataset(Domain::Source, shape, 8), &mask, &[Domain::Target]).unwrap();
        let tgt = apply_mask(&toy_dataset(Domain::Target, shape, 8), &mask, &[Domain::Target]).unwrap();
        (bundle, src, tgt)
    }

    fn batch(ds: &Dataset) -> MaskedBatch {
        MaskedBatch::from_dataset(ds, &(0..ds.len()).collect::<Vec<_>>(), DType::F64, &Device::Cpu).unwrap()
    }

    fn values(t: &Tensor) -> Vec<f64> {
        t.flatten_all().unwrap().to_vec1().unwrap()
    }

    #[test]
    fn latents_are_in_unit_interval_and_deterministic_in_eval() {
        let (b, src, _) = mlp_bundle();
        let x = batch(&src);
        let a = encode_full(&b, &x).unwrap();
        let c = encode_full(&b, &x).unwrap();
        assert_eq!(values(&a.z1), values(&c.z1));
        assert!(values(&a.z1).iter().chain(&values(a.z2.as_ref().unwrap())).all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn encode_full_rejects_zero_filled_target() {
        let (b, _, tgt) = mlp_bundle();
        assert!(matches!(encode_full(&b, &batch(&tgt)), Err(crate::Error::Contract(_))));
        assert!(encode_zero_filled(&b, &batch(&tgt)).is_ok());
    }

    #[test]
    fn encode_hat_shares_g1_and_matches_g2_shape() {
        let (b, src, _) = mlp_bundle();
        let x = batch(&src);
        let full = encode_full(&b, &x).unwrap();
        let hat = encode_hat(&b, &x).unwrap();
        assert_eq!(values(&full.z1), values(&hat.z1));
        assert_eq!(full.z2.unwrap().dims(), hat.z2.unwrap().dims());
    }

    #[test]
    fn conv_digits_latent_is_2048() {
        let shape = ImageShape::new(3, 32, 32);
        let mask = make_horizontal_patch_mask(shape, 0.5).unwrap();
        let spec = ArchitectureSpec::conv_digits(InputLayout::Image(shape), mask.clone(), 10);
        assert_eq!(spec.latent_dim(), 2048);
        let b = ComponentBundle::new(spec, 0, DType::F32, &Device::Cpu).unwrap();
        let ds = apply_mask(&toy_dataset(Domain::Source, shape, 2), &mask, &[]).unwrap();
        let x = MaskedBatch::from_dataset(&ds, &[0, 1], DType::F32, &Device::Cpu).unwrap();
        let lat = encode_full(&b, &x).unwrap();
        assert_eq!(lat.z1.dims(), &[2, 2048]);
        assert_eq!(lat.z2.as_ref().unwrap().dims(), &[2, 2048]);
        let p = classify(&b, &lat).unwrap();
        assert_eq!(p.dims(), &[2, 10]);
    }

    #[test]
    fn zeroed_final_layer_gives_uniform_rows() {
        let (b, src, _) = mlp_bundle();
        let last = b.f.last_linear().unwrap();
        last.weight.set(&last.weight.as_tensor().zeros_like().unwrap()).unwrap();
        last.bias.set(&last.bias.as_tensor().zeros_like().unwrap()).unwrap();
        let p = classify(&b, &encode_hat(&b, &batch(&src)).unwrap()).unwrap();
        let rows: Vec<Vec<f64>> = p.to_vec2().unwrap();
        assert_eq!(rows.len(), 8);
        for row in rows {
            for v in row {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn classify_rejects_wrong_width() {
        let (b, src, _) = mlp_bundle();
        let lat = encode_observed(&b, &batch(&src)).unwrap();
        assert!(matches!(classify(&b, &lat), Err(crate::Error::Config(_))));
    }

    #[test]
    fn parameter_sharing_between_paths() {
        let (b, src, _) = mlp_bundle();
        let x = batch(&src);
        let before_full = encode_full(&b, &x).unwrap();
        let before_hat = encode_hat(&b, &x).unwrap();
        let bump = |seq: &Sequential| {
            let l = seq.first_linear().unwrap();
            l.bias.set(&(l.bias.as_tensor() + 0.5).unwrap()).unwrap();
        };
        // g2 only moves the encoded second component
        bump(b.g2.as_ref().unwrap());
        let full = encode_full(&b, &x).unwrap();
        let hat = encode_hat(&b, &x).unwrap();
        assert_eq!(values(&full.z1), values(&before_full.z1));
        assert_ne!(values(full.z2.as_ref().unwrap()), values(before_full.z2.as_ref().unwrap()));
        assert_eq!(values(hat.z2.as_ref().unwrap()), values(before_hat.z2.as_ref().unwrap()));
        // r only moves the generated second component
        bump(b.r.as_ref().unwrap());
        let full2 = encode_full(&b, &x).unwrap();
        let hat2 = encode_hat(&b, &x).unwrap();
        assert_eq!(values(full2.z2.as_ref().unwrap()), values(full.z2.as_ref().unwrap()));
        assert_ne!(values(hat2.z2.as_ref().unwrap()), values(hat.z2.as_ref().unwrap()));
        // g1 moves both paths
        bump(&b.g1);
        let full3 = encode_full(&b, &x).unwrap();
        let hat3 = encode_hat(&b, &x).unwrap();
        assert_ne!(values(&full3.z1), values(&full2.z1));
        assert_ne!(values(hat3.z2.as_ref().unwrap()), values(hat2.z2.as_ref().unwrap()));
    }

    #[test]
    fn same_seed_same_weights() {
        let (a, _, _) = mlp_bundle();
        let (b, _, _) = mlp_bundle();
        assert_eq!(a.snapshot().unwrap(), b.snapshot().unwrap());
    }
}
