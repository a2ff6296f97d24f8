use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};

use crate::error::{contract, Result};

struct GradientReversal {
    scale: f64,
}

impl CustomOp1 for GradientReversal {
    fn name(&self) -> &'static str {
        "gradient-reversal"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (start, end) = layout
            .contiguous_offsets()
            .ok_or_else(|| candle_core::Error::Msg("gradient reversal needs a contiguous input".into()))?;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(v[start..end].to_vec()),
            CpuStorage::F64(v) => CpuStorage::F64(v[start..end].to_vec()),
            other => {
                return Err(candle_core::Error::Msg(format!("gradient reversal does not support {other:?}")))
            }
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad_res.affine(-self.scale, 0.0)?))
    }
}

/// Identity in the forward pass; multiplies the incoming gradient by `-scale` in the backward pass.
pub fn grl_apply(x: &Tensor, scale: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&scale) {
        return contract(format!("gradient reversal scale {scale} outside [0, 1]"));
    }
    Ok(x.contiguous()?.apply_op1(GradientReversal { scale })?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn grad_of(scale: f64) -> Vec<f64> {
        let x = Var::new(&[1.0f64, -2.0, 0.5], &Device::Cpu).unwrap();
        let y = grl_apply(x.as_tensor(), scale).unwrap();
        let loss = y.sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        grads.get(x.as_tensor()).unwrap().to_vec1().unwrap()
    }

    #[test]
    fn forward_is_identity() {
        let x = Tensor::new(&[[1.0f32, 2.0], [3.0, 4.0]], &Device::Cpu).unwrap();
        let y = grl_apply(&x.t().unwrap(), 0.3).unwrap();
        assert_eq!(y.to_vec2::<f32>().unwrap(), vec![vec![1.0, 3.0], vec![2.0, 4.0]]);
    }

    #[test]
    fn zero_scale_blocks_and_unit_scale_negates() {
        assert_eq!(grad_of(0.0), vec![0.0; 3]);
        assert_eq!(grad_of(1.0), vec![-2.0, 4.0, -1.0]);
    }

    #[test]
    fn scale_outside_unit_interval_is_rejected() {
        let x = Tensor::new(&[1.0f64], &Device::Cpu).unwrap();
        assert!(grl_apply(&x, 1.5).is_err());
        assert!(grl_apply(&x, -0.1).is_err());
    }
}
