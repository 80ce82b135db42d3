//! Noise schedule, deterministic DDIM inversion/denoising and
//! L0-regularised classifier-free guidance.

mod ddim;
mod guidance;
mod prox;
mod schedule;

pub use ddim::{ddim_invert, ddim_step, ddim_transfer, denoise, inference_grid, Inversion};
pub use guidance::{combine_guidance, guided_noise, guided_noise_batch, GuidanceConfig};
pub use prox::{prox_l0, prox_l0_in_place, quantile, quantile_lambda, LambdaRule};
pub use schedule::{NoiseSchedule, ScheduleConfig};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::types::{ConditionBundle, LatentGrid};

/// A conditioned noise-prediction network ε(z_t, t, p, e).
pub trait NoisePredictor<T: Scalar> {
    /// Predicts the noise of every latent at the shared timestep `t`.
    fn predict_noise_batch(
        &self,
        latents: &[LatentGrid<T>],
        t: usize,
        conds: &[ConditionBundle<T>],
    ) -> Result<Vec<Vec<T>>>;

    fn predict_noise(&self, z_t: &LatentGrid<T>, t: usize, cond: &ConditionBundle<T>) -> Result<Vec<T>> {
        let mut out = self.predict_noise_batch(std::slice::from_ref(z_t), t, std::slice::from_ref(cond))?;
        Ok(out.remove(0))
    }
}

/// Closed-form stand-ins for the denoiser.
pub mod testing {
    use super::*;
    use crate::types::DomainToken;

    /// Returns the same noise for every input.
    #[derive(Debug, Clone)]
    pub struct ConstantNoise<T>(pub Vec<T>);

    impl<T: Scalar> NoisePredictor<T> for ConstantNoise<T> {
        fn predict_noise_batch(
            &self,
            latents: &[LatentGrid<T>],
            _t: usize,
            _conds: &[ConditionBundle<T>],
        ) -> Result<Vec<Vec<T>>> {
            Ok(latents.iter().map(|_| self.0.clone()).collect())
        }
    }

    /// `ε = 0.5·z + offset(token) + 0.1·Σe`, offsets cycling through a fixed table.
    #[derive(Debug, Clone)]
    pub struct AffineStub {
        pub fs: Vec<f64>,
        pub ffpe: Vec<f64>,
    }

    impl Default for AffineStub {
        fn default() -> Self {
            Self { fs: vec![-0.3, 0.4, 0.0, -0.6], ffpe: vec![0.2, -0.9, 0.05, 1.1] }
        }
    }

    impl<T: Scalar> NoisePredictor<T> for AffineStub {
        fn predict_noise_batch(
            &self,
            latents: &[LatentGrid<T>],
            _t: usize,
            conds: &[ConditionBundle<T>],
        ) -> Result<Vec<Vec<T>>> {
            Ok(latents
                .iter()
                .zip(conds)
                .map(|(z, c)| {
                    let e_sum = c.embedding.as_ref().map_or(T::zero(), |e| e.0.iter().fold(T::zero(), |a, b| a + *b));
                    z.values
                        .iter()
                        .enumerate()
                        .map(|(i, v)| {
                            let off = match c.token {
                                DomainToken::Fs => self.fs[i % self.fs.len()],
                                DomainToken::Ffpe => self.ffpe[i % self.ffpe.len()],
                                DomainToken::Null => 0.0,
                            };
                            T::c(0.5) * *v + T::c(off) + T::c(0.1) * e_sum
                        })
                        .collect()
                })
                .collect())
        }
    }
}
