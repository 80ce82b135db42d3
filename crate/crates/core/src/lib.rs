//! Unpaired frozen-section → FFPE translation with a conditioned latent
//! diffusion model, plus the case-wise evaluation protocol.
//!
//! The numerical core (noise schedule, DDIM, hard-threshold guidance,
//! Fréchet distance, AUC) is generic over [`Scalar`]; the trained networks
//! run in `f32` on candle.

pub mod embed;
pub mod error;
pub mod io;
pub mod ldm;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod scheduler;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use types::{ClassLabel, ConditionBundle, Domain, DomainToken, EmbeddingVector, ImagePatch, LatentGrid};

pub type Latent = LatentGrid<f32>;
pub type Embedding = EmbeddingVector<f32>;
pub type Condition = ConditionBundle<f32>;
pub type Schedule = scheduler::NoiseSchedule<f32>;
