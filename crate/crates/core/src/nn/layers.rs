use candle_core::{Tensor, D};

use super::im2col::im2col;
use super::lora::LoraAdapter;
use super::params::{Init, Scope};
use crate::error::{Error, Result};

/// Affine map `x · W + b` with `W` stored as `(in, out)`, optionally carrying a LoRA adapter.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub lora: Option<LoraAdapter>,
    pub in_dim: usize,
    pub out_dim: usize,
    name: String,
}

impl Dense {
    pub fn new(scope: &Scope<'_>, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self::with_init(scope, in_dim, out_dim, bias, Init::Uniform(bound))
    }

    pub fn with_init(scope: &Scope<'_>, in_dim: usize, out_dim: usize, bias: bool, init: Init) -> Result<Self> {
        let weight = scope.var("weight", &[in_dim, out_dim], init)?;
        let bias = if bias { Some(scope.var("bias", &[out_dim], Init::Zeros)?) } else { None };
        Ok(Self { weight, bias, lora: None, in_dim, out_dim, name: scope.prefix().to_string() })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Applies the map to the last dimension of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let last = *dims.last().ok_or_else(|| Error::invalid("dense input is a scalar"))?;
        if last != self.in_dim {
            return Err(Error::invalid(format!(
                "layer `{}` expects last dimension {}, got {last}",
                self.name, self.in_dim
            )));
        }
        let flat = x.reshape(((), self.in_dim))?;
        let mut y = flat.matmul(&self.weight)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(b)?;
        }
        if let Some(lora) = &self.lora {
            y = (y + lora.delta(&flat)?)?;
        }
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_dim;
        Ok(y.reshape(out_dims)?)
    }

    pub fn install_lora(&mut self, scope: &Scope<'_>, rank: usize, scale: f64) -> Result<()> {
        self.lora = Some(LoraAdapter::new(scope, self.in_dim, self.out_dim, rank, scale)?);
        Ok(())
    }
}

/// 2-D convolution over NHWC tensors.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub dense: Dense,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    pub fn new(scope: &Scope<'_>, cin: usize, cout: usize, kernel: usize, stride: usize) -> Result<Self> {
        let dense = Dense::new(scope, kernel * kernel * cin, cout, true)?;
        Ok(Self { dense, kernel, stride, pad: kernel / 2, in_channels: cin, out_channels: cout })
    }

    pub fn zeroed(scope: &Scope<'_>, cin: usize, cout: usize, kernel: usize) -> Result<Self> {
        let dense = Dense::with_init(scope, kernel * kernel * cin, cout, true, Init::Zeros)?;
        Ok(Self { dense, kernel, stride: 1, pad: kernel / 2, in_channels: cin, out_channels: cout })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, h, w, c) = x.dims4()?;
        if c != self.in_channels {
            return Err(Error::invalid(format!(
                "conv `{}` expects {} channels, got {c}",
                self.dense.name(),
                self.in_channels
            )));
        }
        if self.kernel == 1 && self.stride == 1 {
            return self.dense.forward(x);
        }
        let cols = im2col(x, self.kernel, self.stride, self.pad)?;
        let ho = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let wo = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        Ok(self.dense.forward(&cols)?.reshape((b, ho, wo, self.out_channels))?)
    }
}

/// Group normalisation over NHWC tensors.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    gamma: Tensor,
    beta: Tensor,
    groups: usize,
    eps: f64,
}

impl GroupNorm {
    pub fn new(scope: &Scope<'_>, channels: usize, groups: usize) -> Result<Self> {
        if !channels.is_multiple_of(groups) {
            return Err(Error::config(format!("{channels} channels not divisible into {groups} groups")));
        }
        Ok(Self {
            gamma: scope.var("gamma", &[channels], Init::Const(1.0))?,
            beta: scope.var("beta", &[channels], Init::Zeros)?,
            groups,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, h, w, c) = x.dims4()?;
        let g = x.reshape((b, h * w, self.groups, c / self.groups))?;
        let mean = g.mean_keepdim((1, 3))?;
        let centered = g.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim((1, 3))?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let normed = normed.reshape((b, h, w, c))?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

pub fn silu(x: &Tensor) -> Result<Tensor> {
    Ok(x.silu()?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(slope, 0.0)?)?)
}

/// Derivative of [`leaky_relu`] evaluated at `x`, as a constant tensor.
pub fn leaky_relu_grad(x: &Tensor, slope: f64) -> Result<Tensor> {
    let positive = x.detach().ge(0.0)?.to_dtype(x.dtype())?;
    Ok(positive.affine(1.0 - slope, slope)?)
}

/// Nearest-neighbour 2× upsampling of an NHWC tensor.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    let x = x.reshape((b, h, 1, w, 1, c))?.broadcast_as((b, h, 2, w, 2, c))?;
    Ok(x.reshape((b, 2 * h, 2 * w, c))?)
}

/// 2×2 average pooling of an NHWC tensor.
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!("cannot pool odd spatial size {h}x{w}")));
    }
    Ok(x.reshape((b, h / 2, 2, w / 2, 2, c))?.mean((2, 4))?)
}

/// Mean over the spatial dimensions of an NHWC tensor.
pub fn global_mean(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean((1, 2))?)
}

/// Mean of the row-wise cross entropy between `logits` `(n, k)` and integer `targets`.
pub fn cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let log_probs = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let picked = log_probs.gather(&targets.unsqueeze(1)?, 1)?;
    Ok(picked.neg()?.mean_all()?)
}
