use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{silu, tensor_to_vec, upsample2, Conv2d, Dense, GroupNorm, Init, ParamStore, Scope};
use crate::scheduler::NoisePredictor;
use crate::types::{ConditionBundle, LatentGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    pub embedding_dim: usize,
    /// Channel width per resolution level, finest first.
    pub widths: Vec<usize>,
    pub time_dim: usize,
    pub cond_dim: usize,
    pub groups: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { latent_channels: 4, embedding_dim: 128, widths: vec![32, 64, 64], time_dim: 64, cond_dim: 128, groups: 8 }
    }
}

/// Residual block with a scale/shift modulation from the conditioning vector.
#[derive(Debug, Clone)]
struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    film: Dense,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
    out_channels: usize,
}

impl ResBlock {
    fn new(s: &Scope<'_>, cin: usize, cout: usize, cond: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            norm1: GroupNorm::new(&s.sub("norm1"), cin, groups)?,
            conv1: Conv2d::new(&s.sub("conv1"), cin, cout, 3, 1)?,
            film: Dense::with_init(&s.sub("film"), cond, 2 * cout, true, Init::Zeros)?,
            norm2: GroupNorm::new(&s.sub("norm2"), cout, groups)?,
            conv2: Conv2d::new(&s.sub("conv2"), cout, cout, 3, 1)?,
            skip: if cin == cout { None } else { Some(Conv2d::new(&s.sub("skip"), cin, cout, 1, 1)?) },
            out_channels: cout,
        })
    }

    fn forward(&self, x: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&silu(&self.norm1.forward(x)?)?)?;
        let (b, ..) = h.dims4()?;
        let film = self.film.forward(cond)?.reshape((b, 1, 1, 2 * self.out_channels))?;
        let scale = film.narrow(D::Minus1, 0, self.out_channels)?;
        let shift = film.narrow(D::Minus1, self.out_channels, self.out_channels)?;
        let h = self.norm2.forward(&h)?;
        let h = h.broadcast_mul(&scale.affine(1.0, 1.0)?)?.broadcast_add(&shift)?;
        let h = self.conv2.forward(&silu(&h)?)?;
        let skip = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((skip + h)?)
    }

    fn internal_layers(&mut self) -> Vec<&mut Dense> {
        let mut v = vec![&mut self.conv1.dense, &mut self.conv2.dense];
        if let Some(s) = &mut self.skip {
            v.push(&mut s.dense);
        }
        v
    }
}

/// U-Net noise predictor ε(z_t, t, token, e) over NHWC latents.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub cfg: DenoiserConfig,
    time1: Dense,
    time2: Dense,
    token: Tensor,
    embed: Dense,
    conv_in: Conv2d,
    down: Vec<(ResBlock, Option<Conv2d>)>,
    mid: (ResBlock, ResBlock),
    up: Vec<ResBlock>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
    emb_mean: Tensor,
    emb_std: Tensor,
}

/// Sinusoidal timestep features `[sin(t·ω_i), cos(t·ω_i)]`.
pub fn timestep_features(t: &[usize], dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(t.len() * dim);
    for &ti in t {
        let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp() * ti as f64);
        let (s, c): (Vec<f32>, Vec<f32>) = freqs.map(|a| (a.sin() as f32, a.cos() as f32)).unzip();
        out.extend(s);
        out.extend(c);
    }
    out
}

impl Denoiser {
    pub fn new(scope: &Scope<'_>, cfg: DenoiserConfig) -> Result<Self> {
        if cfg.widths.is_empty() || !cfg.time_dim.is_multiple_of(2) {
            return Err(Error::config("denoiser needs at least one width and an even time dimension"));
        }
        let c = scope.sub("cond");
        let cd = cfg.cond_dim;
        let g = cfg.groups;
        let w = &cfg.widths;
        let levels = w.len();
        let mut down = Vec::new();
        for l in 0..levels {
            let s = scope.sub(format!("down{l}"));
            let block = ResBlock::new(&s.sub("res"), w[l], w[l], 2 * cd, g)?;
            let sample = if l + 1 < levels { Some(Conv2d::new(&s.sub("downsample"), w[l], w[l + 1], 3, 2)?) } else { None };
            down.push((block, sample));
        }
        let top = w[levels - 1];
        let mid = (
            ResBlock::new(&scope.sub("mid0"), top, top, 2 * cd, g)?,
            ResBlock::new(&scope.sub("mid1"), top, top, 2 * cd, g)?,
        );
        let mut up = Vec::new();
        for l in (0..levels - 1).rev() {
            up.push(ResBlock::new(&scope.sub(format!("up{l}")), w[l + 1] + w[l], w[l], 2 * cd, g)?);
        }
        let dev = scope.device();
        Ok(Self {
            time1: Dense::new(&c.sub("time1"), cfg.time_dim, cd, true)?,
            time2: Dense::new(&c.sub("time2"), cd, cd, true)?,
            token: c.var("token", &[3, cd], Init::Normal(1.0))?,
            embed: Dense::new(&c.sub("embed"), cfg.embedding_dim, cd, true)?,
            conv_in: Conv2d::new(&scope.sub("conv_in"), cfg.latent_channels, w[0], 3, 1)?,
            down,
            mid,
            up,
            norm_out: GroupNorm::new(&scope.sub("norm_out"), w[0], g)?,
            conv_out: Conv2d::zeroed(&scope.sub("conv_out"), w[0], cfg.latent_channels, 3)?,
            emb_mean: Tensor::zeros(cfg.embedding_dim, candle_core::DType::F32, dev)?,
            emb_std: Tensor::ones(cfg.embedding_dim, candle_core::DType::F32, dev)?,
            cfg,
        })
    }

    /// Per-coordinate standardisation applied to conditioning embeddings.
    pub fn set_embedding_stats(&mut self, mean: &[f32], std: &[f32]) -> Result<()> {
        let d = self.cfg.embedding_dim;
        if mean.len() != d || std.len() != d || std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid(format!("embedding statistics must be {d}-d with positive spread")));
        }
        self.emb_mean = Tensor::from_slice(mean, d, self.emb_mean.device())?;
        self.emb_std = Tensor::from_slice(std, d, self.emb_std.device())?;
        Ok(())
    }

    fn conditioning(&self, t: &[usize], tokens: &[u32], e: &Tensor) -> Result<Tensor> {
        let dev = e.device();
        let tf = Tensor::from_vec(timestep_features(t, self.cfg.time_dim), (t.len(), self.cfg.time_dim), dev)?;
        let temb = self.time2.forward(&silu(&self.time1.forward(&tf)?)?)?;
        let tok = self.token.index_select(&Tensor::from_slice(tokens, tokens.len(), dev)?, 0)?;
        let e = e.broadcast_sub(&self.emb_mean)?.broadcast_div(&self.emb_std)?;
        let eemb = self.embed.forward(&e)?;
        silu(&Tensor::cat(&[(temb + tok)?, eemb], D::Minus1)?)
    }

    /// Noise prediction for latents `(b, h, w, c)` at per-sample timesteps.
    pub fn forward(&self, z: &Tensor, t: &[usize], tokens: &[u32], e: &Tensor) -> Result<Tensor> {
        let (b, ..) = z.dims4()?;
        if t.len() != b || tokens.len() != b || e.dims2()? != (b, self.cfg.embedding_dim) {
            return Err(Error::invalid(format!(
                "denoiser batch of {b} needs {b} timesteps, tokens and {}-d embeddings",
                self.cfg.embedding_dim
            )));
        }
        let cond = self.conditioning(t, tokens, e)?;
        let mut h = self.conv_in.forward(z)?;
        let mut skips = Vec::new();
        for (block, sample) in &self.down {
            h = block.forward(&h, &cond)?;
            if let Some(s) = sample {
                skips.push(h.clone());
                h = s.forward(&h)?;
            }
        }
        h = self.mid.1.forward(&self.mid.0.forward(&h, &cond)?, &cond)?;
        for block in &self.up {
            let skip = skips.pop().expect("one skip per level");
            h = block.forward(&Tensor::cat(&[upsample2(&h)?, skip], D::Minus1)?, &cond)?;
        }
        self.conv_out.forward(&silu(&self.norm_out.forward(&h)?)?)
    }

    /// Layers that receive LoRA adapters: every convolution inside the network,
    /// excluding the input/output convolutions and the conditioning path.
    pub fn internal_layers(&mut self) -> Vec<&mut Dense> {
        let mut v = Vec::new();
        for (block, sample) in &mut self.down {
            v.extend(block.internal_layers());
            if let Some(s) = sample {
                v.push(&mut s.dense);
            }
        }
        v.extend(self.mid.0.internal_layers());
        v.extend(self.mid.1.internal_layers());
        for block in &mut self.up {
            v.extend(block.internal_layers());
        }
        v
    }

    /// Installs a LoRA adapter of the given rank on every internal layer.
    pub fn install_lora(&mut self, store: &ParamStore, rank: usize, scale: f64) -> Result<()> {
        for layer in self.internal_layers() {
            let scope = store.scope(layer.name());
            layer.install_lora(&scope, rank, scale)?;
        }
        Ok(())
    }

    pub fn latents_to_tensor(latents: &[LatentGrid<f32>]) -> Result<Tensor> {
        let (h, w, c) = latents.first().ok_or_else(|| Error::invalid("empty latent batch"))?.shape();
        if latents.iter().any(|z| z.shape() != (h, w, c)) {
            return Err(Error::invalid("latents in one batch must share a shape"));
        }
        let flat: Vec<f32> = latents.iter().flat_map(|z| z.values.iter().copied()).collect();
        Ok(Tensor::from_vec(flat, (latents.len(), h, w, c), &candle_core::Device::Cpu)?)
    }
}

impl NoisePredictor<f32> for Denoiser {
    fn predict_noise_batch(
        &self,
        latents: &[LatentGrid<f32>],
        t: usize,
        conds: &[ConditionBundle<f32>],
    ) -> Result<Vec<Vec<f32>>> {
        if latents.len() != conds.len() {
            return Err(Error::invalid("one condition per latent required"));
        }
        if latents.is_empty() {
            return Ok(Vec::new());
        }
        let d = self.cfg.embedding_dim;
        let mut e = Vec::with_capacity(conds.len() * d);
        for c in conds {
            match &c.embedding {
                Some(v) if v.dim() == d => e.extend_from_slice(&v.0),
                Some(v) => return Err(Error::invalid(format!("conditioning embedding is {}-d, expected {d}", v.dim()))),
                None => e.extend(std::iter::repeat_n(0.0, d)),
            }
        }
        let z = Self::latents_to_tensor(latents)?;
        let e = Tensor::from_vec(e, (conds.len(), d), z.device())?;
        let tokens: Vec<u32> = conds.iter().map(|c| c.token.index() as u32).collect();
        let ts = vec![t; latents.len()];
        let eps = tensor_to_vec(&self.forward(&z, &ts, &tokens, &e)?)?;
        let n = latents[0].len();
        let out: Vec<Vec<f32>> = eps.chunks(n).map(<[f32]>::to_vec).collect();
        if out.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("denoiser produced non-finite noise at t={t}")));
        }
        Ok(out)
    }
}
