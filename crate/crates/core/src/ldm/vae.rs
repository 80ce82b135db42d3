use candle_core::{Tensor, D};
use candle_nn::Optimizer;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adamw, images_to_tensor, silu, tensor_to_vec, upsample2, Conv2d, OptimizerConfig, ParamStore, Scope};
use crate::types::{ImagePatch, LatentGrid};

/// Shifts the initial posterior std to about 0.05 so the sampled latents
/// carry signal from the first step.
const LOGVAR_OFFSET: f64 = -6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    /// Spatial downsampling factor `f` (a power of two).
    pub downsample: usize,
    pub latent_channels: usize,
    pub base_width: usize,
    pub max_width: usize,
    pub kl_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            downsample: 4,
            latent_channels: 4,
            base_width: 16,
            max_width: 64,
            kl_weight: 1e-6,
            epochs: 8,
            batch_size: 4,
            optimizer: OptimizerConfig { lr: 1e-3, weight_decay: 0.0, ..Default::default() },
        }
    }
}

impl VaeConfig {
    pub fn levels(&self) -> Result<usize> {
        let f = self.downsample;
        if f == 0 || !f.is_power_of_two() {
            return Err(Error::config(format!("downsample factor must be a power of two, got {f}")));
        }
        Ok(f.trailing_zeros() as usize)
    }

    fn width(&self, level: usize) -> usize {
        (self.base_width << level).min(self.max_width)
    }
}

#[derive(Debug, Clone)]
struct Encoder {
    conv_in: Conv2d,
    blocks: Vec<(Conv2d, Conv2d)>,
    mid: Conv2d,
    out: Conv2d,
}

#[derive(Debug, Clone)]
struct Decoder {
    conv_in: Conv2d,
    mid: Conv2d,
    blocks: Vec<(Conv2d, Conv2d)>,
    out: Conv2d,
}

/// Convolutional autoencoder with a diagonal-Gaussian posterior; images are
/// NHWC in `[0,1]`, latents are scaled to roughly unit variance.
#[derive(Debug, Clone)]
pub struct Vae {
    enc: Encoder,
    dec: Decoder,
    pub cfg: VaeConfig,
    /// Multiplier applied to posterior means so that encoded latents have unit std.
    pub latent_scale: f64,
    /// Reconstruction MSE on held-out patches recorded after training.
    pub val_mse: Option<f64>,
}

impl Vae {
    pub fn new(scope: &Scope<'_>, cfg: VaeConfig) -> Result<Self> {
        let levels = cfg.levels()?;
        let c = cfg.latent_channels;
        let top = cfg.width(levels);
        let s = scope.sub("enc");
        let mut blocks = Vec::new();
        for l in 0..levels {
            blocks.push((
                Conv2d::new(&s.sub(format!("b{l}.conv")), cfg.width(l), cfg.width(l), 3, 1)?,
                Conv2d::new(&s.sub(format!("b{l}.down")), cfg.width(l), cfg.width(l + 1), 3, 2)?,
            ));
        }
        let enc = Encoder {
            conv_in: Conv2d::new(&s.sub("conv_in"), 3, cfg.width(0), 3, 1)?,
            blocks,
            mid: Conv2d::new(&s.sub("mid"), top, top, 3, 1)?,
            out: Conv2d::new(&s.sub("out"), top, 2 * c, 1, 1)?,
        };
        let s = scope.sub("dec");
        let mut blocks = Vec::new();
        for l in (0..levels).rev() {
            blocks.push((
                Conv2d::new(&s.sub(format!("b{l}.up")), cfg.width(l + 1), cfg.width(l), 3, 1)?,
                Conv2d::new(&s.sub(format!("b{l}.conv")), cfg.width(l), cfg.width(l), 3, 1)?,
            ));
        }
        let dec = Decoder {
            conv_in: Conv2d::new(&s.sub("conv_in"), c, top, 3, 1)?,
            mid: Conv2d::new(&s.sub("mid"), top, top, 3, 1)?,
            blocks,
            out: Conv2d::new(&s.sub("out"), cfg.width(0), 3, 3, 1)?,
        };
        Ok(Self { enc, dec, cfg, latent_scale: 1.0, val_mse: None })
    }

    /// Posterior `(mean, logvar)` of unscaled latents for images `(b, H, W, 3)`.
    pub fn posterior(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut h = silu(&self.enc.conv_in.forward(&x.affine(2.0, -1.0)?)?)?;
        for (conv, down) in &self.enc.blocks {
            h = silu(&conv.forward(&h)?)?;
            h = silu(&down.forward(&h)?)?;
        }
        h = silu(&self.enc.mid.forward(&h)?)?;
        let stats = self.enc.out.forward(&h)?;
        let c = self.cfg.latent_channels;
        let mean = stats.narrow(D::Minus1, 0, c)?;
        let logvar = (stats.narrow(D::Minus1, c, c)? + LOGVAR_OFFSET)?.clamp(-30f32, 20f32)?;
        Ok((mean, logvar))
    }

    /// Unscaled latents `(b, h, w, c)` to images in `[0,1]`.
    pub fn decode_raw(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = silu(&self.dec.conv_in.forward(z)?)?;
        h = silu(&self.dec.mid.forward(&h)?)?;
        for (up, conv) in &self.dec.blocks {
            h = silu(&up.forward(&upsample2(&h)?)?)?;
            h = silu(&conv.forward(&h)?)?;
        }
        Ok(candle_nn::ops::sigmoid(&self.dec.out.forward(&h)?)?)
    }

    /// Deterministic encoding: the scaled posterior mean.
    pub fn encode(&self, patches: &[ImagePatch]) -> Result<Vec<LatentGrid<f32>>> {
        let f = self.cfg.downsample;
        if let Some(p) = patches.iter().find(|p| p.height % f != 0 || p.width % f != 0 || p.height == 0) {
            return Err(Error::invalid(format!(
                "patch `{}` is {}x{}, not a multiple of the downsample factor {f}",
                p.patch_id, p.height, p.width
            )));
        }
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(64) {
            let refs: Vec<&ImagePatch> = chunk.iter().collect();
            let (mean, _) = self.posterior(&images_to_tensor(&refs, None)?)?;
            let (_, h, w, c) = mean.dims4()?;
            let values = tensor_to_vec(&mean.affine(self.latent_scale, 0.0)?)?;
            for v in values.chunks(h * w * c) {
                out.push(LatentGrid::new(v.to_vec(), h, w, c, 0)?);
            }
        }
        Ok(out)
    }

    /// Decodes scaled latents to `[0,1]` HWC pixel buffers.
    pub fn decode(&self, latents: &[LatentGrid<f32>]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(64) {
            let (h, w, c) = chunk[0].shape();
            if c != self.cfg.latent_channels {
                return Err(Error::invalid(format!("latent has {c} channels, decoder expects {}", self.cfg.latent_channels)));
            }
            if chunk.iter().any(|z| z.shape() != (h, w, c)) {
                return Err(Error::invalid("latents in one decode call must share a shape"));
            }
            let flat: Vec<f32> = chunk.iter().flat_map(|z| z.values.iter().copied()).collect();
            let z = Tensor::from_vec(flat, (chunk.len(), h, w, c), &candle_core::Device::Cpu)?;
            let x = self.decode_raw(&z.affine(1.0 / self.latent_scale, 0.0)?)?;
            let px = tensor_to_vec(&x)?;
            let n = px.len() / chunk.len();
            out.extend(px.chunks(n).map(|p| p.iter().map(|v| v.clamp(0.0, 1.0)).collect()));
        }
        Ok(out)
    }

    /// Sets the latent scale to `1/std` of the posterior means over `patches`.
    pub fn calibrate_scale(&mut self, patches: &[ImagePatch]) -> Result<f64> {
        self.latent_scale = 1.0;
        let z = self.encode(patches)?;
        let n: usize = z.iter().map(|g| g.len()).sum();
        let mean = z.iter().flat_map(|g| &g.values).map(|v| *v as f64).sum::<f64>() / n as f64;
        let var = z.iter().flat_map(|g| &g.values).map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        if !(var.is_finite() && var > 0.0) {
            return Err(Error::Numerical(format!("latent variance is {var}")));
        }
        self.latent_scale = 1.0 / var.sqrt();
        Ok(self.latent_scale)
    }

    /// Mean squared error of `decode(encode(x))` over `patches`.
    pub fn reconstruction_mse(&self, patches: &[ImagePatch]) -> Result<f64> {
        let recon = self.decode(&self.encode(patches)?)?;
        let (mut sum, mut n) = (0.0, 0usize);
        for (p, r) in patches.iter().zip(&recon) {
            sum += p.pixels.iter().zip(r).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
            n += r.len();
        }
        Ok(sum / n.max(1) as f64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeTrainReport {
    pub epoch_losses: Vec<f64>,
    pub latent_scale: f64,
    pub val_mse: Option<f64>,
}

/// Trains all variables under `prefix` of `store` with an MSE reconstruction
/// loss and a small KL term, calibrates the latent scale and records the
/// reconstruction MSE on `validation`.
pub fn train_vae(
    vae: &mut Vae,
    store: &ParamStore,
    prefix: &str,
    patches: &[ImagePatch],
    validation: &[ImagePatch],
    seed: u64,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<VaeTrainReport> {
    if patches.is_empty() {
        return Err(Error::invalid("VAE training set is empty"));
    }
    let cfg = vae.cfg.clone();
    let mut opt = adamw(store.vars_where(|n| n.starts_with(prefix)), &cfg.optimizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut epoch_losses = Vec::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0);
        for idx in order.chunks(cfg.batch_size) {
            let refs: Vec<&ImagePatch> = idx.iter().map(|&i| &patches[i]).collect();
            let x = images_to_tensor(&refs, None)?;
            let (mean, logvar) = vae.posterior(&x)?;
            let noise: Vec<f32> = (0..mean.elem_count()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let noise = Tensor::from_vec(noise, mean.shape(), mean.device())?;
            let z = (&mean + (logvar.affine(0.5, 0.0)?.exp()? * noise)?)?;
            let recon = vae.decode_raw(&z)?;
            let diff = (recon - &x)?;
            let rec = diff.sqr()?.mean_all()?;
            let kl = ((mean.sqr()? + logvar.exp()?)? - logvar)?.affine(0.5, -0.5)?.mean_all()?;
            let loss = (rec + kl.affine(cfg.kl_weight, 0.0)?)?;
            let value = loss.to_scalar::<f32>()? as f64;
            if !value.is_finite() {
                return Err(Error::Training(format!("VAE loss became {value} in epoch {epoch}")));
            }
            opt.backward_step(&loss)?;
            sum += value * idx.len() as f64;
            count += idx.len();
        }
        let mean = sum / count as f64;
        on_epoch(epoch, mean);
        epoch_losses.push(mean);
    }
    let latent_scale = vae.calibrate_scale(patches)?;
    vae.val_mse = if validation.is_empty() { None } else { Some(vae.reconstruction_mse(validation)?) };
    Ok(VaeTrainReport { epoch_losses, latent_scale, val_mse: vae.val_mse })
}
