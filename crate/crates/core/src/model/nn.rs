//! Minimal layer toolkit over candle tensors with seeded initialization.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Named tensors, as stored in checkpoints.
pub type State = HashMap<String, Tensor>;

/// Seeded parameter initializer.
pub(crate) struct Init {
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl Init {
    pub(crate) fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: device.clone(),
        }
    }

    /// U(-bound, bound), the usual fan-in scaled default for conv/linear layers.
    pub(crate) fn uniform(&mut self, shape: &[usize], bound: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        let t = Tensor::from_vec(v, shape, &self.device)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    pub(crate) fn constant(&self, shape: &[usize], value: f64) -> Result<Tensor> {
        Ok((Tensor::ones(shape, self.dtype, &self.device)? * value)?)
    }
}

pub(crate) fn take(state: &State, name: &str, shape: &[usize]) -> Result<Tensor> {
    let t = state
        .get(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
    if t.dims() != shape {
        return Err(Error::Checkpoint(format!(
            "tensor {name} has shape {:?}, expected {shape:?}",
            t.dims()
        )));
    }
    Ok(t.to_dtype(DType::F32)?)
}

pub(crate) fn take_var(state: &State, name: &str, shape: &[usize]) -> Result<Var> {
    Ok(Var::from_tensor(&take(state, name, shape)?)?)
}

#[derive(Debug)]
pub(crate) struct Conv {
    pub(crate) weight: Var,
    pub(crate) bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv {
    pub(crate) fn init(
        init: &mut Init,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        Self::init_gain(init, cin, cout, k, stride, padding, bias, 1.0)
    }

    /// Like `init` with the bound scaled by `gain` (`sqrt(6)` gives He-uniform).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn init_gain(
        init: &mut Init,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        gain: f64,
    ) -> Result<Self> {
        let bound = gain / ((cin * k * k) as f64).sqrt();
        let weight = init.uniform(&[cout, cin, k, k], bound)?;
        let bias = if bias {
            Some(init.uniform(&[cout], bound)?)
        } else {
            None
        };
        Ok(Conv {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub(crate) fn load(
        state: &State,
        prefix: &str,
        shape: [usize; 4],
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = take_var(state, &format!("{prefix}.weight"), &shape)?;
        let bias = if bias {
            Some(take_var(state, &format!("{prefix}.bias"), &[shape[0]])?)
        } else {
            None
        };
        Ok(Conv {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?,
            None => y,
        })
    }

    pub(crate) fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.weight.as_tensor().clone()));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.bias"), b.as_tensor().clone()));
        }
    }

    pub(crate) fn vars(&self, out: &mut Vec<Var>) {
        out.push(self.weight.clone());
        if let Some(b) = &self.bias {
            out.push(b.clone());
        }
    }
}

#[derive(Debug)]
pub(crate) struct Linear {
    pub(crate) weight: Var,
    pub(crate) bias: Var,
}

impl Linear {
    pub(crate) fn init(init: &mut Init, din: usize, dout: usize) -> Result<Self> {
        let bound = 1.0 / (din as f64).sqrt();
        Ok(Linear {
            weight: init.uniform(&[dout, din], bound)?,
            bias: init.uniform(&[dout], bound)?,
        })
    }

    pub(crate) fn load(state: &State, prefix: &str, din: usize, dout: usize) -> Result<Self> {
        Ok(Linear {
            weight: take_var(state, &format!("{prefix}.weight"), &[dout, din])?,
            bias: take_var(state, &format!("{prefix}.bias"), &[dout])?,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x
            .matmul(&self.weight.as_tensor().t()?)?
            .broadcast_add(self.bias.as_tensor())?)
    }

    pub(crate) fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.weight.as_tensor().clone()));
        out.push((format!("{prefix}.bias"), self.bias.as_tensor().clone()));
    }
}

/// Batch normalization with frozen running statistics; the affine part is
/// trainable.
#[derive(Debug)]
pub(crate) struct FrozenBatchNorm {
    weight: Var,
    bias: Var,
    running_mean: Tensor,
    running_var: Tensor,
}

const BN_EPS: f64 = 1e-5;

impl FrozenBatchNorm {
    pub(crate) fn init(init: &Init, c: usize) -> Result<Self> {
        Ok(FrozenBatchNorm {
            weight: Var::from_tensor(&init.constant(&[c], 1.0)?)?,
            bias: Var::from_tensor(&init.constant(&[c], 0.0)?)?,
            running_mean: init.constant(&[c], 0.0)?,
            running_var: init.constant(&[c], 1.0)?,
        })
    }

    pub(crate) fn load(state: &State, prefix: &str, c: usize) -> Result<Self> {
        Ok(FrozenBatchNorm {
            weight: take_var(state, &format!("{prefix}.weight"), &[c])?,
            bias: take_var(state, &format!("{prefix}.bias"), &[c])?,
            running_mean: take(state, &format!("{prefix}.running_mean"), &[c])?,
            running_var: take(state, &format!("{prefix}.running_var"), &[c])?,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let inv_std = (self.running_var.clone() + BN_EPS)?.sqrt()?.recip()?;
        let scale = self.weight.as_tensor().mul(&inv_std)?;
        let shift = self.bias.as_tensor().sub(&self.running_mean.mul(&scale)?)?;
        Ok(x
            .broadcast_mul(&scale.reshape((1, (), 1, 1))?)?
            .broadcast_add(&shift.reshape((1, (), 1, 1))?)?)
    }

    pub(crate) fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.weight.as_tensor().clone()));
        out.push((format!("{prefix}.bias"), self.bias.as_tensor().clone()));
        out.push((format!("{prefix}.running_mean"), self.running_mean.clone()));
        out.push((format!("{prefix}.running_var"), self.running_var.clone()));
    }

    pub(crate) fn vars(&self, out: &mut Vec<Var>) {
        out.push(self.weight.clone());
        out.push(self.bias.clone());
    }
}

/// Spatial mean over the last two dims: [B, K, h, w] -> [B, K].
pub(crate) fn global_avg_pool(maps: &Tensor) -> Result<Tensor> {
    Ok(maps.mean(D::Minus1)?.mean(D::Minus1)?)
}
