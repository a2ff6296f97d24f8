//! Minimal layer set with seeded initialisation and explicit train/eval modes.

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` tensor drawn from `rng`.
pub(crate) fn fan_in_uniform(
    shape: &[usize],
    fan_in: usize,
    rng: &mut ChaCha8Rng,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Ok(Tensor::from_vec(values, shape, device)?.to_dtype(dtype)?)
}

#[derive(Debug)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut ChaCha8Rng, dtype: DType, device: &Device) -> Result<Self> {
        Ok(Self {
            weight: Var::from_tensor(&fan_in_uniform(&[output, input], input, rng, dtype, device)?)?,
            bias: Var::from_tensor(&fan_in_uniform(&[output], input, rng, dtype, device)?)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.as_tensor().t()?)?.broadcast_add(self.bias.as_tensor())?)
    }

    pub fn in_features(&self) -> usize {
        self.weight.as_tensor().dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.as_tensor().dims()[0]
    }
}

/// 2D convolution with "same" padding for odd kernels.
#[derive(Debug)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Var,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        input: usize,
        output: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let fan_in = input * kernel * kernel;
        Ok(Self {
            weight: Var::from_tensor(&fan_in_uniform(&[output, input, kernel, kernel], fan_in, rng, dtype, device)?)?,
            bias: Var::from_tensor(&fan_in_uniform(&[output], fan_in, rng, dtype, device)?)?,
            padding: kernel / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out = x.conv2d(self.weight.as_tensor(), self.padding, 1, 1, 1)?;
        let channels = self.bias.as_tensor().dims()[0];
        Ok(out.broadcast_add(&self.bias.as_tensor().reshape((1, channels, 1, 1))?)?)
    }
}

/// Batch normalisation over the feature axis (dim 1) of 2D or 4D inputs.
///
/// Running statistics are kept in `Var`s so checkpoints carry them, but they
/// are never handed to an optimiser.
#[derive(Debug)]
pub struct BatchNorm {
    pub gamma: Var,
    pub beta: Var,
    pub running_mean: Var,
    pub running_var: Var,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(features: usize, momentum: f64, eps: f64, dtype: DType, device: &Device) -> Result<Self> {
        Ok(Self {
            gamma: Var::ones(features, dtype, device)?,
            beta: Var::zeros(features, dtype, device)?,
            running_mean: Var::zeros(features, dtype, device)?,
            running_var: Var::ones(features, dtype, device)?,
            momentum,
            eps,
        })
    }

    fn broadcast_shape(&self, x: &Tensor) -> Vec<usize> {
        let mut shape = vec![1; x.rank()];
        shape[1] = x.dims()[1];
        shape
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let shape = self.broadcast_shape(x);
        let reduce: Vec<usize> = (0..x.rank()).filter(|&d| d != 1).collect();
        let (mean, var) = if train {
            let mean = x.mean_keepdim(reduce.as_slice())?;
            let centred = x.broadcast_sub(&mean)?;
            let var = centred.sqr()?.mean_keepdim(reduce.as_slice())?;
            let count: usize = reduce.iter().map(|&d| x.dims()[d]).product();
            let unbiased = if count > 1 {
                (var.detach().flatten_all()? * (count as f64 / (count - 1) as f64))?
            } else {
                var.detach().flatten_all()?
            };
            let m = self.momentum;
            self.running_mean.set(
                &((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach().flatten_all()? * m)?)?,
            )?;
            self.running_var
                .set(&((self.running_var.as_tensor() * (1.0 - m))? + (unbiased * m)?)?)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape(shape.as_slice())?,
                self.running_var.as_tensor().reshape(shape.as_slice())?,
            )
        };
        let normed = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma.as_tensor().reshape(shape.as_slice())?)?
            .broadcast_add(&self.beta.as_tensor().reshape(shape.as_slice())?)?)
    }
}

#[derive(Debug)]
pub enum Layer {
    Linear(Linear),
    Conv(Conv2d),
    BatchNorm(BatchNorm),
    Relu,
    Sigmoid,
    /// 2x2 max pooling with stride 2.
    MaxPool,
    Dropout(f64),
    Flatten,
}

/// Inverted dropout with a caller-supplied RNG.
pub(crate) fn dropout(x: &Tensor, rate: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if rate <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    let n = x.elem_count();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}

/// Ordered stack of layers.
#[derive(Debug, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn forward(&self, x: &Tensor, train: bool, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Linear(l) => l.forward(&h)?,
                Layer::Conv(c) => c.forward(&h)?,
                Layer::BatchNorm(bn) => bn.forward(&h, train)?,
                Layer::Relu => h.relu()?,
                Layer::Sigmoid => candle_nn::ops::sigmoid(&h)?,
                Layer::MaxPool => h.max_pool2d(2)?,
                Layer::Dropout(rate) if train => dropout(&h, *rate, rng)?,
                Layer::Dropout(_) => h,
                Layer::Flatten => h.flatten_from(1)?,
            };
        }
        Ok(h)
    }

    /// Parameters updated by gradient descent, with stable names.
    pub fn trainable(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Linear(Linear { weight, bias }) | Layer::Conv(Conv2d { weight, bias, .. }) => {
                    out.push((format!("{i}.weight"), weight.clone()));
                    out.push((format!("{i}.bias"), bias.clone()));
                }
                Layer::BatchNorm(bn) => {
                    out.push((format!("{i}.gamma"), bn.gamma.clone()));
                    out.push((format!("{i}.beta"), bn.beta.clone()));
                }
                _ => {}
            }
        }
        out
    }

    /// Every persistent tensor, including batch-norm running statistics.
    pub fn state(&self) -> Vec<(String, Var)> {
        let mut out = self.trainable();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::BatchNorm(bn) = layer {
                out.push((format!("{i}.running_mean"), bn.running_mean.clone()));
                out.push((format!("{i}.running_var"), bn.running_var.clone()));
            }
        }
        out
    }

    /// The last linear layer, if any.
    pub fn last_linear(&self) -> Option<&Linear> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Linear(lin) => Some(lin),
            _ => None,
        })
    }

    pub fn first_linear(&self) -> Option<&Linear> {
        self.layers.iter().find_map(|l| match l {
            Layer::Linear(lin) => Some(lin),
            _ => None,
        })
    }
}

/// Row-wise softmax.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(x, D::Minus1)?)
}
