use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Linear-beta noise schedule over training timesteps `1..=T`.
///
/// `alpha_bar(0)` is defined as 1 so that the last deterministic step lands on
/// the clean latent.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    t_train: usize,
    betas: Vec<T>,
    alphas_bar: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(rename = "T_train")]
    pub t_train: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { t_train: 1000, beta_start: 1e-4, beta_end: 2e-2 }
    }
}

impl<T: Scalar> NoiseSchedule<T> {
    /// Default schedule: betas linear from 1e-4 to 2e-2.
    pub fn linear(t_train: usize) -> Result<Self> {
        Self::from_config(&ScheduleConfig { t_train, ..ScheduleConfig::default() })
    }

    pub fn from_config(cfg: &ScheduleConfig) -> Result<Self> {
        let n = cfg.t_train;
        if n < 2 {
            return Err(Error::config(format!("schedule needs at least 2 timesteps, got {n}")));
        }
        if !(0.0 < cfg.beta_start && cfg.beta_start <= cfg.beta_end && cfg.beta_end < 1.0) {
            return Err(Error::config(format!("invalid beta range [{}, {}]", cfg.beta_start, cfg.beta_end)));
        }
        let betas: Vec<T> = (0..n)
            .map(|i| T::c(cfg.beta_start + (cfg.beta_end - cfg.beta_start) * i as f64 / (n - 1) as f64))
            .collect();
        let mut acc = T::one();
        let alphas_bar = betas
            .iter()
            .map(|b| {
                acc *= T::one() - *b;
                acc
            })
            .collect();
        Ok(Self { t_train: n, betas, alphas_bar })
    }

    pub fn t_train(&self) -> usize {
        self.t_train
    }

    /// β_t for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> T {
        self.betas[t - 1]
    }

    /// ᾱ_t for `t` in `0..=T` with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> T {
        if t == 0 {
            T::one()
        } else {
            self.alphas_bar[t - 1]
        }
    }

    pub fn alphas_bar(&self) -> &[T] {
        &self.alphas_bar
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t > self.t_train {
            return Err(Error::invalid(format!("timestep {t} beyond schedule length {}", self.t_train)));
        }
        Ok(())
    }

    /// `z_t = sqrt(ᾱ_t)·z_0 + sqrt(1−ᾱ_t)·ε`.
    pub fn add_noise(&self, z0: &[T], eps: &[T], t: usize) -> Vec<T> {
        let ab = self.alpha_bar(t);
        let (a, s) = (ab.sqrt(), (T::one() - ab).sqrt());
        z0.iter().zip(eps).map(|(z, e)| a * *z + s * *e).collect()
    }
}
