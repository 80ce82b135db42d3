use std::path::Path;

use candle_core::{Tensor, D};
use candle_nn::{AdamW, Optimizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::penalty::{gradient_penalty_with, Critic, MlpCritic};
use crate::error::{Error, Result};
use crate::io::{fnv1a, read_json, write_json};
use crate::nn::{adamw, leaky_relu, tensor_to_vec, Dense, Init, OptimizerConfig, ParamStore, Scope};
use crate::scalar::Scalar;
use crate::types::EmbeddingVector;

/// A map between embedding spaces of equal dimension.
pub trait EmbeddingMap<T: Scalar> {
    fn dim(&self) -> usize;
    fn map_batch(&self, e: &[EmbeddingVector<T>]) -> Result<Vec<EmbeddingVector<T>>>;
}

/// Leaves embeddings untouched.
#[derive(Debug, Clone, Copy)]
pub struct IdentityMap(pub usize);

impl<T: Scalar> EmbeddingMap<T> for IdentityMap {
    fn dim(&self) -> usize {
        self.0
    }

    fn map_batch(&self, e: &[EmbeddingVector<T>]) -> Result<Vec<EmbeddingVector<T>>> {
        Ok(e.to_vec())
    }
}

/// `(1−α)·e_fs + α·G(e_fs)`.
pub fn translate_embedding<T: Scalar, G: EmbeddingMap<T> + ?Sized>(
    e_fs: &EmbeddingVector<T>,
    g: &G,
    alpha: f64,
) -> Result<EmbeddingVector<T>> {
    Ok(translate_embeddings(std::slice::from_ref(e_fs), g, alpha)?.remove(0))
}

pub fn translate_embeddings<T: Scalar, G: EmbeddingMap<T> + ?Sized>(
    e_fs: &[EmbeddingVector<T>],
    g: &G,
    alpha: f64,
) -> Result<Vec<EmbeddingVector<T>>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("blend weight must lie in [0,1], got {alpha}")));
    }
    if let Some(e) = e_fs.iter().find(|e| e.dim() != g.dim()) {
        return Err(Error::invalid(format!("embedding of dimension {} given to a {}-d translator", e.dim(), g.dim())));
    }
    let mapped = g.map_batch(e_fs)?;
    let (a, keep) = (T::c(alpha), T::c(1.0 - alpha));
    mapped
        .iter()
        .zip(e_fs)
        .map(|(g, e)| EmbeddingVector::new(e.0.iter().zip(&g.0).map(|(x, y)| keep * *x + a * *y).collect()))
        .collect()
}

/// U-style fully connected generator `d → 64 → 32 → 64 → d` with additive
/// skips between mirrored layers and a residual connection from the input.
#[derive(Debug, Clone)]
pub struct UNetFc {
    l1: Dense,
    l2: Dense,
    l3: Dense,
    l4: Dense,
    dim: usize,
}

const GEN_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslatorInit {
    /// Zero output layer: the generator starts as the identity map.
    Identity,
    #[default]
    Random,
}

impl UNetFc {
    pub fn new(scope: &Scope<'_>, dim: usize, wide: usize, narrow: usize, init: TranslatorInit) -> Result<Self> {
        let l4 = match init {
            TranslatorInit::Identity => Dense::with_init(&scope.sub("l4"), wide, dim, true, Init::Zeros)?,
            TranslatorInit::Random => Dense::new(&scope.sub("l4"), wide, dim, true)?,
        };
        Ok(Self {
            l1: Dense::new(&scope.sub("l1"), dim, wide, true)?,
            l2: Dense::new(&scope.sub("l2"), wide, narrow, true)?,
            l3: Dense::new(&scope.sub("l3"), narrow, wide, true)?,
            l4,
            dim,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let a1 = leaky_relu(&self.l1.forward(x)?, GEN_SLOPE)?;
        let a2 = leaky_relu(&self.l2.forward(&a1)?, GEN_SLOPE)?;
        let a3 = (leaky_relu(&self.l3.forward(&a2)?, GEN_SLOPE)? + a1)?;
        Ok((self.l4.forward(&a3)? + x)?)
    }
}

impl EmbeddingMap<f32> for UNetFc {
    fn dim(&self) -> usize {
        self.dim
    }

    fn map_batch(&self, e: &[EmbeddingVector<f32>]) -> Result<Vec<EmbeddingVector<f32>>> {
        if e.is_empty() {
            return Ok(Vec::new());
        }
        let x = embeddings_to_tensor(e)?;
        let y = tensor_to_vec(&self.forward(&x)?)?;
        y.chunks(self.dim).map(|c| EmbeddingVector::new(c.to_vec())).collect()
    }
}

pub(crate) fn embeddings_to_tensor(e: &[EmbeddingVector<f32>]) -> Result<Tensor> {
    let d = e.first().map_or(0, |v| v.dim());
    if e.iter().any(|v| v.dim() != d) {
        return Err(Error::invalid("embeddings differ in dimension"));
    }
    let flat: Vec<f32> = e.iter().flat_map(|v| v.0.iter().copied()).collect();
    Ok(Tensor::from_vec(flat, (e.len(), d), &candle_core::Device::Cpu)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslatorConfig {
    pub dim: usize,
    pub wide: usize,
    pub narrow: usize,
    pub critic_hidden: usize,
    pub lambda_gp: f64,
    pub lambda_cyc: f64,
    pub n_critic: usize,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub steps: usize,
    pub init: TranslatorInit,
    pub seed: u64,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            wide: 64,
            narrow: 32,
            critic_hidden: 128,
            lambda_gp: 10.0,
            lambda_cyc: 10.0,
            n_critic: 5,
            optimizer: OptimizerConfig { lr: 1e-4, beta1: 0.0, beta2: 0.9, weight_decay: 0.0, eps: 1e-8 },
            batch_size: 64,
            steps: 2000,
            init: TranslatorInit::Random,
            seed: 0,
        }
    }
}

impl TranslatorConfig {
    fn architecture(&self) -> String {
        format!(
            "unet-fc:{d}-{w}-{n}-{w}-{d}+skip+residual;critic:{d}-{h}-{h}-1",
            d = self.dim,
            w = self.wide,
            n = self.narrow,
            h = self.critic_hidden
        )
    }
}

/// The four networks of the cycle: `G: fs → ffpe`, `F: ffpe → fs` and one critic per domain.
#[derive(Debug, Clone)]
pub struct TranslatorNets {
    pub g: UNetFc,
    pub f: UNetFc,
    pub d_ffpe: MlpCritic,
    pub d_fs: MlpCritic,
}

impl TranslatorNets {
    /// Exchanges the roles of the two domains.
    pub fn swapped(&self) -> Self {
        Self { g: self.f.clone(), f: self.g.clone(), d_ffpe: self.d_fs.clone(), d_fs: self.d_ffpe.clone() }
    }
}

/// Loss components of one translator update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TranslatorLosses {
    pub critic_ffpe: f64,
    pub critic_fs: f64,
    pub gp_ffpe: f64,
    pub gp_fs: f64,
    pub adv_g: f64,
    pub adv_f: f64,
    pub cycle: f64,
    pub critic_total: f64,
    pub generator_total: f64,
}

impl TranslatorLosses {
    fn check(&self) -> Result<()> {
        let parts = [
            self.critic_ffpe,
            self.critic_fs,
            self.gp_ffpe,
            self.gp_fs,
            self.adv_g,
            self.adv_f,
            self.cycle,
        ];
        if parts.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Training(format!("non-finite translator loss: {self:?}")))
        }
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

/// Critic objective for both directions: `E[D(fake)] − E[D(real)] + λ_gp·GP`.
/// The same interpolation weights `u` are used in both directions.
pub(crate) fn critic_objective(
    nets: &TranslatorNets,
    fs: &Tensor,
    ffpe: &Tensor,
    u: &[f64],
    lambda_gp: f64,
    out: &mut TranslatorLosses,
) -> Result<Tensor> {
    let fake_ffpe = nets.g.forward(fs)?.detach();
    let fake_fs = nets.f.forward(ffpe)?.detach();
    let w_ffpe = (nets.d_ffpe.score(&fake_ffpe)?.mean_all()? - nets.d_ffpe.score(ffpe)?.mean_all()?)?;
    let w_fs = (nets.d_fs.score(&fake_fs)?.mean_all()? - nets.d_fs.score(fs)?.mean_all()?)?;
    let gp_ffpe = gradient_penalty_with(&nets.d_ffpe, ffpe, &fake_ffpe, u)?;
    let gp_fs = gradient_penalty_with(&nets.d_fs, fs, &fake_fs, u)?;
    out.critic_ffpe = scalar(&w_ffpe)?;
    out.critic_fs = scalar(&w_fs)?;
    out.gp_ffpe = scalar(&gp_ffpe)?;
    out.gp_fs = scalar(&gp_fs)?;
    let total = ((w_ffpe + w_fs)? + (gp_ffpe + gp_fs)?.affine(lambda_gp, 0.0)?)?;
    out.critic_total = scalar(&total)?;
    Ok(total)
}

/// Generator objective: `−E[D(fake)]` both ways plus `λ_cyc` times the mean
/// absolute cycle reconstruction error in both directions.
pub(crate) fn generator_objective(
    nets: &TranslatorNets,
    fs: &Tensor,
    ffpe: &Tensor,
    lambda_cyc: f64,
    out: &mut TranslatorLosses,
) -> Result<Tensor> {
    let fake_ffpe = nets.g.forward(fs)?;
    let fake_fs = nets.f.forward(ffpe)?;
    let adv_g = nets.d_ffpe.score(&fake_ffpe)?.mean_all()?.neg()?;
    let adv_f = nets.d_fs.score(&fake_fs)?.mean_all()?.neg()?;
    let cyc_fs = (nets.f.forward(&fake_ffpe)? - fs)?.abs()?.mean_all()?;
    let cyc_ffpe = (nets.g.forward(&fake_fs)? - ffpe)?.abs()?.mean_all()?;
    let cycle = (cyc_fs + cyc_ffpe)?;
    out.adv_g = scalar(&adv_g)?;
    out.adv_f = scalar(&adv_f)?;
    out.cycle = scalar(&cycle)?;
    let total = ((adv_g + adv_f)? + cycle.affine(lambda_cyc, 0.0)?)?;
    out.generator_total = scalar(&total)?;
    Ok(total)
}

/// Mean over rows of `‖F(G(e)) − e‖₁`.
pub fn cycle_error(nets: &TranslatorNets, e: &Tensor) -> Result<f64> {
    let back = nets.f.forward(&nets.g.forward(e)?)?;
    scalar(&(back - e)?.abs()?.sum(D::Minus1)?.mean_all()?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TranslatorMeta {
    dim: usize,
    architecture: String,
    architecture_hash: String,
    lambda_gp: f64,
    lambda_cyc: f64,
    seed: u64,
    config: TranslatorConfig,
}

/// Generator/critic pair with their parameters.
pub struct TranslatorPair {
    store: ParamStore,
    pub nets: TranslatorNets,
    pub cfg: TranslatorConfig,
}

impl TranslatorPair {
    pub fn new(cfg: TranslatorConfig) -> Result<Self> {
        let store = ParamStore::new(cfg.seed);
        let nets = {
            let root = store.root();
            TranslatorNets {
                g: UNetFc::new(&root.sub("G"), cfg.dim, cfg.wide, cfg.narrow, cfg.init)?,
                f: UNetFc::new(&root.sub("F"), cfg.dim, cfg.wide, cfg.narrow, cfg.init)?,
                d_ffpe: MlpCritic::new(&root.sub("D_ffpe"), cfg.dim, cfg.critic_hidden)?,
                d_fs: MlpCritic::new(&root.sub("D_fs"), cfg.dim, cfg.critic_hidden)?,
            }
        };
        Ok(Self { store, nets, cfg })
    }

    pub fn generator(&self) -> &UNetFc {
        &self.nets.g
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        crate::io::ensure_dir(dir)?;
        self.store.save(&dir.join("translator.safetensors"))?;
        let architecture = self.cfg.architecture();
        let meta = TranslatorMeta {
            dim: self.cfg.dim,
            architecture_hash: format!("{:016x}", fnv1a(architecture.as_bytes())),
            architecture,
            lambda_gp: self.cfg.lambda_gp,
            lambda_cyc: self.cfg.lambda_cyc,
            seed: self.cfg.seed,
            config: self.cfg.clone(),
        };
        write_json(&dir.join("translator.json"), &meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: TranslatorMeta = read_json(&dir.join("translator.json"))?;
        let mut pair = Self::new(meta.config)?;
        pair.store.load(&dir.join("translator.safetensors"))?;
        Ok(pair)
    }
}

/// Alternating WGAN-GP / cycle-consistency optimisation of a [`TranslatorPair`].
pub struct TranslatorTrainer {
    pub pair: TranslatorPair,
    opt_gen: AdamW,
    opt_critic: AdamW,
    rng: ChaCha8Rng,
}

impl TranslatorTrainer {
    pub fn new(pair: TranslatorPair) -> Result<Self> {
        let gen_vars = pair.store.vars_where(|n| n.starts_with("G.") || n.starts_with("F."));
        let critic_vars = pair.store.vars_where(|n| n.starts_with("D_"));
        let opt_gen = adamw(gen_vars, &pair.cfg.optimizer)?;
        let opt_critic = adamw(critic_vars, &pair.cfg.optimizer)?;
        let rng = ChaCha8Rng::seed_from_u64(pair.cfg.seed ^ 0x7a11);
        Ok(Self { pair, opt_gen, opt_critic, rng })
    }

    /// `n_critic` critic updates followed by one generator update on the given unpaired batches.
    pub fn step(&mut self, batch_fs: &Tensor, batch_ffpe: &Tensor) -> Result<TranslatorLosses> {
        let (n, d) = batch_fs.dims2()?;
        if batch_ffpe.dims2()? != (n, d) || d != self.pair.cfg.dim {
            return Err(Error::invalid(format!(
                "translator batches must both be (n, {}), got {:?} and {:?}",
                self.pair.cfg.dim,
                batch_fs.dims(),
                batch_ffpe.dims()
            )));
        }
        let mut losses = TranslatorLosses::default();
        for _ in 0..self.pair.cfg.n_critic {
            let u: Vec<f64> = (0..n).map(|_| self.rng.random::<f64>()).collect();
            let loss = critic_objective(&self.pair.nets, batch_fs, batch_ffpe, &u, self.pair.cfg.lambda_gp, &mut losses)?;
            losses.check()?;
            self.opt_critic.backward_step(&loss)?;
        }
        let loss = generator_objective(&self.pair.nets, batch_fs, batch_ffpe, self.pair.cfg.lambda_cyc, &mut losses)?;
        losses.check()?;
        self.opt_gen.backward_step(&loss)?;
        Ok(losses)
    }

    /// Runs `cfg.steps` updates on minibatches drawn independently from each domain.
    pub fn train(
        &mut self,
        fs: &[EmbeddingVector<f32>],
        ffpe: &[EmbeddingVector<f32>],
        mut on_step: impl FnMut(usize, &TranslatorLosses),
    ) -> Result<TranslatorLosses> {
        if fs.is_empty() || ffpe.is_empty() {
            return Err(Error::invalid("translator training needs embeddings from both domains"));
        }
        let fs_all = embeddings_to_tensor(fs)?;
        let ffpe_all = embeddings_to_tensor(ffpe)?;
        let b = self.pair.cfg.batch_size;
        let mut last = TranslatorLosses::default();
        for step in 0..self.pair.cfg.steps {
            let pick = |rng: &mut ChaCha8Rng, len: usize| -> Result<Tensor> {
                let idx: Vec<u32> = (0..b).map(|_| rng.random_range(0..len) as u32).collect();
                Ok(Tensor::from_vec(idx, b, &candle_core::Device::Cpu)?)
            };
            let i_fs = pick(&mut self.rng, fs.len())?;
            let i_ffpe = pick(&mut self.rng, ffpe.len())?;
            let batch_fs = fs_all.index_select(&i_fs, 0)?;
            let batch_ffpe = ffpe_all.index_select(&i_ffpe, 0)?;
            last = self.step(&batch_fs, &batch_ffpe)?;
            on_step(step, &last);
        }
        Ok(last)
    }
}
