use super::guidance::{guided_noise_batch, GuidanceConfig};
use super::schedule::NoiseSchedule;
use super::NoisePredictor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{ConditionBundle, LatentGrid};

/// Uniform inference timestep grid `t_k = ⌊k·T_train / T_inference⌋`, `k = 0..=T_inference`.
///
/// The grid starts at the clean timestep 0.
pub fn inference_grid(t_train: usize, t_inference: usize) -> Vec<usize> {
    (0..=t_inference).map(|k| k * t_train / t_inference).collect()
}

/// Deterministic DDIM transfer of `z` at timestep `from` to timestep `to`
/// under the noise estimate `eps`. Works in both directions.
pub fn ddim_transfer<T: Scalar>(z: &[T], eps: &[T], from: usize, to: usize, schedule: &NoiseSchedule<T>) -> Vec<T> {
    let (ab_from, ab_to) = (schedule.alpha_bar(from), schedule.alpha_bar(to));
    let (sa_from, ss_from) = (ab_from.sqrt(), (T::one() - ab_from).sqrt());
    let (sa_to, ss_to) = (ab_to.sqrt(), (T::one() - ab_to).sqrt());
    z.iter()
        .zip(eps)
        .map(|(z, e)| {
            let x0 = (*z - ss_from * *e) / sa_from;
            sa_to * x0 + ss_to * *e
        })
        .collect()
}

/// One denoising DDIM step (η = 0) from `t` to `t_prev ≤ t`.
pub fn ddim_step<T: Scalar>(
    z_t: &LatentGrid<T>,
    eps_hat: &[T],
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule<T>,
) -> Result<LatentGrid<T>> {
    schedule.check_timestep(t)?;
    if t_prev > t {
        return Err(Error::invalid(format!("DDIM step must not increase the timestep ({t} -> {t_prev})")));
    }
    if eps_hat.len() != z_t.len() {
        return Err(Error::invalid("noise estimate does not match latent size"));
    }
    if !z_t.is_finite() || eps_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite input to DDIM step at t={t}")));
    }
    if t_prev == t {
        return Ok(z_t.clone());
    }
    Ok(z_t.with_values(ddim_transfer(&z_t.values, eps_hat, t, t_prev, schedule), t_prev))
}

/// Latents pushed toward the prior together with the timesteps they visited.
#[derive(Debug, Clone)]
pub struct Inversion<T> {
    pub latents: Vec<LatentGrid<T>>,
    /// `t_0 = 0, …, t_steps`.
    pub grid: Vec<usize>,
    pub steps: usize,
}

/// DDIM inversion of clean latents for `round(S·T_inference)` steps.
///
/// Each step from `t_k` to `t_{k+1}` uses the conditional noise predicted at
/// `(z_{t_k}, t_{k+1})` without guidance.
pub fn ddim_invert<T: Scalar, M: NoisePredictor<T> + ?Sized>(
    z0: &[LatentGrid<T>],
    conds: &[ConditionBundle<T>],
    cfg: &GuidanceConfig,
    schedule: &NoiseSchedule<T>,
    model: &M,
) -> Result<Inversion<T>> {
    cfg.validate()?;
    if z0.len() != conds.len() {
        return Err(Error::invalid("one condition per latent required"));
    }
    if let Some(z) = z0.iter().find(|z| z.timestep != 0) {
        return Err(Error::invalid(format!("inversion expects clean latents, got timestep {}", z.timestep)));
    }
    let steps = cfg.inversion_steps();
    let grid = inference_grid(schedule.t_train(), cfg.t_inference);
    let mut z = z0.to_vec();
    for k in 0..steps {
        let (from, to) = (grid[k], grid[k + 1]);
        let eps = model.predict_noise_batch(&z, to, conds)?;
        for (zi, ei) in z.iter_mut().zip(&eps) {
            let next = ddim_transfer(&zi.values, ei, from, to, schedule);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("inversion diverged at t={to}")));
            }
            *zi = zi.with_values(next, to);
        }
    }
    Ok(Inversion { latents: z, grid: grid[..=steps].to_vec(), steps })
}

/// Guided DDIM denoising from grid index `start_step` down to the clean latent.
pub fn denoise<T: Scalar, M: NoisePredictor<T> + ?Sized>(
    z_noisy: &[LatentGrid<T>],
    start_step: usize,
    conds: &[ConditionBundle<T>],
    cfg: &GuidanceConfig,
    schedule: &NoiseSchedule<T>,
    model: &M,
) -> Result<Vec<LatentGrid<T>>> {
    cfg.validate()?;
    if z_noisy.len() != conds.len() {
        return Err(Error::invalid("one condition per latent required"));
    }
    if start_step != cfg.inversion_steps() {
        return Err(Error::invalid(format!(
            "start step {start_step} does not match the configured {} inversion steps",
            cfg.inversion_steps()
        )));
    }
    let grid = inference_grid(schedule.t_train(), cfg.t_inference);
    if let Some(z) = z_noisy.iter().find(|z| z.timestep != grid[start_step]) {
        return Err(Error::invalid(format!(
            "latent at timestep {} is off the inference grid (expected {})",
            z.timestep, grid[start_step]
        )));
    }
    let mut z = z_noisy.to_vec();
    for k in (1..=start_step).rev() {
        let eps = guided_noise_batch(&z, grid[k], conds, cfg, model)?;
        for (zi, ei) in z.iter_mut().zip(&eps) {
            *zi = ddim_step(zi, ei, grid[k], grid[k - 1], schedule)?;
        }
    }
    Ok(z)
}
