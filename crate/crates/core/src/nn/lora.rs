use candle_core::Tensor;

use super::params::{Init, Scope};
use crate::error::{Error, Result};

/// Low-rank additive adapter `ΔW = scale · up · down` on a dense map `in → out`.
///
/// `down` is `rank × in`, `up` is `out × rank`. `up` starts at zero, so a freshly
/// installed adapter contributes exactly nothing.
#[derive(Debug, Clone)]
pub struct LoraAdapter {
    pub down: Tensor,
    pub up: Tensor,
    pub rank: usize,
    pub scale: f64,
}

impl LoraAdapter {
    pub fn new(scope: &Scope<'_>, in_dim: usize, out_dim: usize, rank: usize, scale: f64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::config("LoRA rank must be at least 1"));
        }
        if rank > in_dim.min(out_dim) {
            return Err(Error::config(format!(
                "LoRA rank {rank} exceeds layer `{}` dimension min({in_dim}, {out_dim})",
                scope.prefix()
            )));
        }
        let bound = 1.0 / (in_dim as f64).sqrt();
        let down = scope.var("lora_down", &[rank, in_dim], Init::Uniform(bound))?;
        let up = scope.var("lora_up", &[out_dim, rank], Init::Zeros)?;
        Ok(Self { down, up, rank, scale })
    }

    /// `scale · (x · downᵀ) · upᵀ` for `x` of shape `(n, in)`.
    pub fn delta(&self, x: &Tensor) -> Result<Tensor> {
        let h = x.matmul(&self.down.t()?)?;
        Ok(h.matmul(&self.up.t()?)?.affine(self.scale, 0.0)?)
    }

    /// The dense `out × in` weight update.
    pub fn weight_delta(&self) -> Result<Tensor> {
        Ok(self.up.matmul(&self.down)?.affine(self.scale, 0.0)?)
    }
}
