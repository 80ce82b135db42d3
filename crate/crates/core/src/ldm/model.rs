use std::path::Path;

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::denoiser::{Denoiser, DenoiserConfig};
use super::vae::{train_vae, Vae, VaeConfig, VaeTrainReport};
use crate::error::{Error, Result};
use crate::io::{ensure_dir, read_json, write_json};
use crate::nn::{adamw, OptimizerConfig, ParamStore};
use crate::scheduler::{NoisePredictor, NoiseSchedule, ScheduleConfig};
use crate::types::{ConditionBundle, DomainToken, EmbeddingVector, ImagePatch, LatentGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub scale: f64,
    pub stage: StageConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdmConfig {
    pub vae: VaeConfig,
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    /// Probability of replacing the domain token by NULL during training.
    pub token_dropout: f64,
    pub base: StageConfig,
    pub lora: LoraConfig,
    pub seed: u64,
}

impl Default for LdmConfig {
    fn default() -> Self {
        let stage = |steps, lr| StageConfig {
            steps,
            batch_size: 32,
            optimizer: OptimizerConfig { lr, weight_decay: 0.0, ..Default::default() },
        };
        Self {
            vae: VaeConfig::default(),
            denoiser: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            token_dropout: 0.1,
            base: stage(5000, 1e-3),
            lora: LoraConfig { rank: 8, scale: 1.0, stage: stage(1500, 5e-4) },
            seed: 0,
        }
    }
}

/// One training example: a clean latent with its domain token and embedding.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub latent: LatentGrid<f32>,
    pub token: DomainToken,
    pub embedding: EmbeddingVector<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LdmMeta {
    version: String,
    git_describe: String,
    seed: u64,
    lora_rank: Option<usize>,
    lora_scale: f64,
    downsample: usize,
    latent_channels: usize,
    t_train: usize,
    latent_scale: f64,
    vae_val_mse: Option<f64>,
    embedding_mean: Vec<f32>,
    embedding_std: Vec<f32>,
    config: LdmConfig,
}

/// Autoencoder, noise predictor and schedule of a latent diffusion model.
pub struct LatentDiffusion {
    vae_store: ParamStore,
    den_store: ParamStore,
    pub vae: Vae,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule<f32>,
    pub cfg: LdmConfig,
    lora_rank: Option<usize>,
    emb_stats: (Vec<f32>, Vec<f32>),
}

/// ε-prediction MSE on a batch: draws `t ~ U{1..T}` and `ε ~ N(0, I)` per
/// sample and drops tokens to NULL with probability `dropout`.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_loss(
    predict: impl Fn(&Tensor, &[usize], &[u32], &Tensor) -> Result<Tensor>,
    schedule: &NoiseSchedule<f32>,
    z0: &Tensor,
    tokens: &[DomainToken],
    e: &Tensor,
    dropout: f64,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let (b, h, w, c) = z0.dims4()?;
    let dev = z0.device();
    let t: Vec<usize> = (0..b).map(|_| rng.random_range(1..=schedule.t_train())).collect();
    let toks: Vec<u32> = tokens
        .iter()
        .map(|tok| if rng.random::<f64>() < dropout { DomainToken::Null } else { *tok })
        .map(|tok| tok.index() as u32)
        .collect();
    let noise: Vec<f32> = (0..b * h * w * c).map(|_| StandardNormal.sample(rng)).collect();
    let noise = Tensor::from_vec(noise, (b, h, w, c), dev)?;
    let a: Vec<f32> = t.iter().map(|&ti| schedule.alpha_bar(ti).sqrt()).collect();
    let s: Vec<f32> = t.iter().map(|&ti| (1.0 - schedule.alpha_bar(ti)).sqrt()).collect();
    let a = Tensor::from_vec(a, (b, 1, 1, 1), dev)?;
    let s = Tensor::from_vec(s, (b, 1, 1, 1), dev)?;
    let z_t = (z0.broadcast_mul(&a)? + noise.broadcast_mul(&s)?)?;
    let pred = predict(&z_t, &t, &toks, e)?;
    let loss = (pred - noise)?.sqr()?.mean_all()?;
    let value = loss.to_scalar::<f32>()?;
    if !value.is_finite() {
        return Err(Error::Training(format!("diffusion loss became {value}")));
    }
    Ok(loss)
}

/// Which parameters a denoiser training stage updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Every denoiser parameter.
    Base,
    /// LoRA adapters plus the conditioning path (time, token, embedding and modulation layers).
    Lora,
}

impl LatentDiffusion {
    pub fn new(cfg: LdmConfig) -> Result<Self> {
        if cfg.vae.latent_channels != cfg.denoiser.latent_channels {
            return Err(Error::config("VAE and denoiser disagree on latent channels"));
        }
        if !(0.0..=1.0).contains(&cfg.token_dropout) {
            return Err(Error::config(format!("token dropout must lie in [0,1], got {}", cfg.token_dropout)));
        }
        let vae_store = ParamStore::new(cfg.seed);
        let den_store = ParamStore::new(cfg.seed.wrapping_add(1));
        let vae = Vae::new(&vae_store.scope("vae"), cfg.vae.clone())?;
        let denoiser = Denoiser::new(&den_store.scope("unet"), cfg.denoiser.clone())?;
        let schedule = NoiseSchedule::from_config(&cfg.schedule)?;
        let d = cfg.denoiser.embedding_dim;
        Ok(Self {
            vae_store,
            den_store,
            vae,
            denoiser,
            schedule,
            cfg,
            lora_rank: None,
            emb_stats: (vec![0.0; d], vec![1.0; d]),
        })
    }

    pub fn lora_rank(&self) -> Option<usize> {
        self.lora_rank
    }

    pub fn num_denoiser_params(&self) -> usize {
        self.den_store.num_params()
    }

    pub fn denoiser_store(&self) -> &ParamStore {
        &self.den_store
    }

    pub fn train_vae(
        &mut self,
        patches: &[ImagePatch],
        validation: &[ImagePatch],
        on_epoch: impl FnMut(usize, f64),
    ) -> Result<VaeTrainReport> {
        train_vae(&mut self.vae, &self.vae_store, "vae.", patches, validation, self.cfg.seed ^ 0x5ae, on_epoch)
    }

    pub fn encode(&self, patches: &[ImagePatch]) -> Result<Vec<LatentGrid<f32>>> {
        self.vae.encode(patches)
    }

    pub fn decode(&self, latents: &[LatentGrid<f32>]) -> Result<Vec<Vec<f32>>> {
        self.vae.decode(latents)
    }

    /// Fixes the standardisation of conditioning embeddings from training data.
    pub fn fit_embedding_stats(&mut self, embeddings: &[EmbeddingVector<f32>]) -> Result<()> {
        let d = self.cfg.denoiser.embedding_dim;
        if embeddings.is_empty() || embeddings.iter().any(|e| e.dim() != d) {
            return Err(Error::invalid(format!("need non-empty {d}-d embeddings")));
        }
        let n = embeddings.len() as f64;
        let mut mean = vec![0f32; d];
        let mut std = vec![0f32; d];
        for j in 0..d {
            let m = embeddings.iter().map(|e| e.0[j] as f64).sum::<f64>() / n;
            let v = embeddings.iter().map(|e| (e.0[j] as f64 - m).powi(2)).sum::<f64>() / n;
            mean[j] = m as f32;
            std[j] = v.sqrt().max(1e-3) as f32;
        }
        self.denoiser.set_embedding_stats(&mean, &std)?;
        self.emb_stats = (mean, std);
        Ok(())
    }

    /// Adds zero-initialised adapters of the given rank to every internal denoiser layer.
    pub fn install_lora(&mut self, rank: usize, scale: f64) -> Result<()> {
        if self.lora_rank.is_some() {
            return Err(Error::config("LoRA adapters are already installed"));
        }
        self.denoiser.install_lora(&self.den_store, rank, scale)?;
        self.lora_rank = Some(rank);
        self.cfg.lora.rank = rank;
        self.cfg.lora.scale = scale;
        Ok(())
    }

    pub fn trainer(&self, stage: Stage) -> Result<LdmTrainer> {
        let (vars, sc) = match stage {
            Stage::Base => (self.den_store.all_vars(), &self.cfg.base),
            Stage::Lora => {
                if self.lora_rank.is_none() {
                    return Err(Error::config("LoRA stage requested before adapters were installed"));
                }
                let keep = |n: &str| n.contains(".lora_") || n.starts_with("unet.cond.") || n.contains(".film.");
                (self.den_store.vars_where(keep), &self.cfg.lora.stage)
            }
        };
        let salt = if stage == Stage::Base { 0xba5e } else { 0x10ba };
        Ok(LdmTrainer {
            opt: adamw(vars, &sc.optimizer)?,
            rng: ChaCha8Rng::seed_from_u64(self.cfg.seed ^ salt),
            batch_size: sc.batch_size,
            steps: sc.steps,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        let mut tensors = self.vae_store.tensors();
        tensors.extend(self.den_store.tensors());
        let ab = self.schedule.alphas_bar().to_vec();
        tensors.insert("schedule.alphas_bar".into(), Tensor::from_vec(ab.clone(), ab.len(), &candle_core::Device::Cpu)?);
        let path = dir.join("ldm.safetensors");
        candle_core::safetensors::save(&tensors, &path)?;
        let meta = LdmMeta {
            version: env!("CARGO_PKG_VERSION").to_string(),
            git_describe: env!("F2F_GIT_DESCRIBE").to_string(),
            seed: self.cfg.seed,
            lora_rank: self.lora_rank,
            lora_scale: self.cfg.lora.scale,
            downsample: self.cfg.vae.downsample,
            latent_channels: self.cfg.vae.latent_channels,
            t_train: self.cfg.schedule.t_train,
            latent_scale: self.vae.latent_scale,
            vae_val_mse: self.vae.val_mse,
            embedding_mean: self.emb_stats.0.clone(),
            embedding_std: self.emb_stats.1.clone(),
            config: self.cfg.clone(),
        };
        write_json(&dir.join("ldm.json"), &meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: LdmMeta = read_json(&dir.join("ldm.json"))?;
        let mut model = Self::new(meta.config)?;
        if let Some(rank) = meta.lora_rank {
            model.install_lora(rank, meta.lora_scale)?;
        }
        let path = dir.join("ldm.safetensors");
        model.vae_store.load(&path)?;
        model.den_store.load(&path)?;
        model.vae.latent_scale = meta.latent_scale;
        model.vae.val_mse = meta.vae_val_mse;
        model.denoiser.set_embedding_stats(&meta.embedding_mean, &meta.embedding_std)?;
        model.emb_stats = (meta.embedding_mean, meta.embedding_std);
        Ok(model)
    }
}

impl NoisePredictor<f32> for LatentDiffusion {
    fn predict_noise_batch(
        &self,
        latents: &[LatentGrid<f32>],
        t: usize,
        conds: &[ConditionBundle<f32>],
    ) -> Result<Vec<Vec<f32>>> {
        self.denoiser.predict_noise_batch(latents, t, conds)
    }
}

/// Optimiser state for one denoiser training stage.
pub struct LdmTrainer {
    opt: AdamW,
    rng: ChaCha8Rng,
    pub batch_size: usize,
    pub steps: usize,
}

impl LdmTrainer {
    /// One optimisation step on a random minibatch; returns the loss.
    pub fn step(&mut self, model: &LatentDiffusion, data: &[TrainingSample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("no diffusion training samples"));
        }
        let idx: Vec<usize> = (0..self.batch_size).map(|_| self.rng.random_range(0..data.len())).collect();
        let latents: Vec<LatentGrid<f32>> = idx.iter().map(|&i| data[i].latent.clone()).collect();
        let z0 = Denoiser::latents_to_tensor(&latents)?;
        let tokens: Vec<DomainToken> = idx.iter().map(|&i| data[i].token).collect();
        let d = model.cfg.denoiser.embedding_dim;
        let e: Vec<f32> = idx.iter().flat_map(|&i| data[i].embedding.0.iter().copied()).collect();
        let e = Tensor::from_vec(e, (idx.len(), d), z0.device())?;
        let den = &model.denoiser;
        let loss = diffusion_loss(
            |z, t, tok, e| den.forward(z, t, tok, e),
            &model.schedule,
            &z0,
            &tokens,
            &e,
            model.cfg.token_dropout,
            &mut self.rng,
        )?;
        self.opt.backward_step(&loss)?;
        Ok(loss.to_scalar::<f32>()? as f64)
    }

    /// Runs the configured number of steps, reporting each loss.
    pub fn run(
        &mut self,
        model: &LatentDiffusion,
        data: &[TrainingSample],
        mut on_step: impl FnMut(usize, f64),
    ) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(self.steps);
        for s in 0..self.steps {
            let l = self.step(model, data)?;
            on_step(s, l);
            losses.push(l);
        }
        Ok(losses)
    }
}
