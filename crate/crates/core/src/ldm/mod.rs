//! Latent diffusion model: autoencoder, conditioned U-Net noise predictor,
//! LoRA fine-tuning and checkpoints.

mod denoiser;
mod model;
mod vae;

pub use denoiser::{timestep_features, Denoiser, DenoiserConfig};
pub use model::{diffusion_loss, LatentDiffusion, LdmConfig, LdmTrainer, LoraConfig, Stage, StageConfig, TrainingSample};
pub use vae::{train_vae, Vae, VaeConfig, VaeTrainReport};
