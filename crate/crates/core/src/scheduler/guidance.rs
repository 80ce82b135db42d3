use serde::{Deserialize, Serialize};

use super::prox::{prox_l0_in_place, quantile_lambda, LambdaRule};
use super::NoisePredictor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{ConditionBundle, LatentGrid};

/// Guidance and inversion settings. Field names on disk follow the
/// experiment vocabulary (`GS`, `S`, `q`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    #[serde(rename = "GS")]
    pub guidance_scale: f64,
    #[serde(rename = "S")]
    pub strength: f64,
    #[serde(rename = "T_inference")]
    pub t_inference: usize,
    pub prox_enabled: bool,
    #[serde(rename = "q")]
    pub quantile: f64,
    #[serde(default)]
    pub lambda_rule: LambdaRule,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            guidance_scale: 4.0,
            strength: 0.7,
            t_inference: 50,
            prox_enabled: false,
            quantile: 0.7,
            lambda_rule: LambdaRule::ThresholdIsQuantile,
        }
    }
}

impl GuidanceConfig {
    /// Settings used with the L0-regularised guidance: lower strength, higher scale.
    pub fn with_prox() -> Self {
        Self { guidance_scale: 12.0, strength: 0.5, prox_enabled: true, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.guidance_scale.is_finite() && self.guidance_scale >= 0.0) {
            return Err(Error::config(format!("guidance scale must be finite and >= 0, got {}", self.guidance_scale)));
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::config(format!("strength must lie in [0,1], got {}", self.strength)));
        }
        if self.t_inference == 0 {
            return Err(Error::config("T_inference must be at least 1"));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::config(format!("quantile must lie in (0,1), got {}", self.quantile)));
        }
        Ok(())
    }

    /// Number of inversion (and denoising) steps: `round(S · T_inference)`.
    pub fn inversion_steps(&self) -> usize {
        (self.strength * self.t_inference as f64).round() as usize
    }
}

/// Combines conditional and embedding-only noise predictions.
///
/// Without the prox this is `GS·ε_c + (1−GS)·ε_u`, which equals ε_c at GS=1
/// and ε_u at GS=0 bit for bit. With the prox, `d = ε_c − ε_u` is hard
/// thresholded at its own `q`-quantile before scaling: `ε_u + GS·prox(d)`.
pub fn combine_guidance<T: Scalar>(eps_cond: &[T], eps_uncond: &[T], cfg: &GuidanceConfig) -> Result<Vec<T>> {
    if eps_cond.len() != eps_uncond.len() {
        return Err(Error::invalid("guidance branches differ in size"));
    }
    let gs = T::c(cfg.guidance_scale);
    if !cfg.prox_enabled {
        let keep = T::one() - gs;
        return Ok(eps_cond.iter().zip(eps_uncond).map(|(c, u)| gs * *c + keep * *u).collect());
    }
    let mut d: Vec<T> = eps_cond.iter().zip(eps_uncond).map(|(c, u)| *c - *u).collect();
    let lambda = quantile_lambda(&d, T::c(cfg.quantile), cfg.lambda_rule)?;
    prox_l0_in_place(&mut d, lambda)?;
    Ok(eps_uncond.iter().zip(&d).map(|(u, d)| *u + gs * *d).collect())
}

/// Guided noise estimate for one latent.
///
/// `cond_null` must carry the same embedding as `cond`; only the token differs.
pub fn guided_noise<T: Scalar, M: NoisePredictor<T> + ?Sized>(
    z_t: &LatentGrid<T>,
    t: usize,
    cond: &ConditionBundle<T>,
    cond_null: &ConditionBundle<T>,
    cfg: &GuidanceConfig,
    model: &M,
) -> Result<Vec<T>> {
    if cond.embedding != cond_null.embedding {
        return Err(Error::invalid("conditional and unconditional branches must share the embedding"));
    }
    let latents = [z_t.clone(), z_t.clone()];
    let conds = [cond.clone(), cond_null.clone()];
    let mut eps = model.predict_noise_batch(&latents, t, &conds)?;
    let eps_u = eps.pop().expect("two branches");
    let eps_c = eps.pop().expect("two branches");
    combine_guidance(&eps_c, &eps_u, cfg)
}

/// Batched [`guided_noise`]: the unconditional branch of each item is its
/// condition with the token replaced by NULL.
pub fn guided_noise_batch<T: Scalar, M: NoisePredictor<T> + ?Sized>(
    latents: &[LatentGrid<T>],
    t: usize,
    conds: &[ConditionBundle<T>],
    cfg: &GuidanceConfig,
    model: &M,
) -> Result<Vec<Vec<T>>> {
    let n = latents.len();
    let mut all_latents = Vec::with_capacity(2 * n);
    all_latents.extend_from_slice(latents);
    all_latents.extend_from_slice(latents);
    let mut all_conds = Vec::with_capacity(2 * n);
    all_conds.extend_from_slice(conds);
    all_conds.extend(conds.iter().map(ConditionBundle::nulled));
    let mut eps = model.predict_noise_batch(&all_latents, t, &all_conds)?;
    let eps_u = eps.split_off(n);
    eps.iter().zip(&eps_u).map(|(c, u)| combine_guidance(c, u, cfg)).collect()
}
