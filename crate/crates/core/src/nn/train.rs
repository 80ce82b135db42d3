use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ImagePatch;

/// Decoupled-weight-decay Adam settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, weight_decay: 0.01, eps: 1e-8 }
    }
}

pub fn adamw(vars: Vec<Var>, cfg: &OptimizerConfig) -> Result<AdamW> {
    let params =
        ParamsAdamW { lr: cfg.lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps, weight_decay: cfg.weight_decay };
    Ok(AdamW::new(vars, params)?)
}

pub fn tensor_to_vec(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.flatten_all()?.to_dtype(candle_core::DType::F32)?.to_vec1::<f32>()?)
}

/// Stacks HWC RGB patches into an NHWC `(b, h, w, 3)` tensor, optionally
/// flipping individual patches (`flips[i] = (horizontal, vertical)`).
pub fn images_to_tensor(patches: &[&ImagePatch], flips: Option<&[(bool, bool)]>) -> Result<Tensor> {
    let first = patches.first().ok_or_else(|| Error::invalid("no patches to stack"))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(patches.len() * h * w * 3);
    for (i, p) in patches.iter().enumerate() {
        if (p.height, p.width) != (h, w) {
            return Err(Error::invalid(format!("patch `{}` is {}x{}, batch is {h}x{w}", p.patch_id, p.height, p.width)));
        }
        let (fh, fv) = flips.map_or((false, false), |f| f[i]);
        for y in 0..h {
            let sy = if fv { h - 1 - y } else { y };
            for x in 0..w {
                let sx = if fh { w - 1 - x } else { x };
                let o = (sy * w + sx) * 3;
                data.extend_from_slice(&p.pixels[o..o + 3]);
            }
        }
    }
    Ok(Tensor::from_vec(data, (patches.len(), h, w, 3), &candle_core::Device::Cpu)?)
}
