//! Pipeline stages. Every stage writes into its own directory under the
//! output root and leaves a completion marker; a completed stage is skipped
//! unless forced.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use f2f_core::embed::{
    ConvExtractor, EmbeddingMap, FeatureExtractor, IdentityMap, TranslatorPair, TranslatorTrainer,
};
use f2f_core::io::write_json;
use f2f_core::ldm::{LatentDiffusion, Stage, TrainingSample};
use f2f_core::metrics::MilEnsemble;
use f2f_core::pipeline::Translator;
use f2f_core::synth::{generate_dataset, Dataset, Split};
use f2f_core::{Domain, Embedding, ImagePatch};
use log::info;

use crate::config::RunConfig;
use crate::eval::{make_bags, write_patch_set};

const COMPLETE: &str = ".complete";
pub const SNAPSHOT: &str = "config.resolved.toml";

/// Directory layout of one run.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn extractor(&self) -> PathBuf {
        self.root.join("extractor")
    }

    pub fn ldm_base(&self) -> PathBuf {
        self.root.join("ldm").join("base")
    }

    pub fn ldm_lora(&self, rank: usize) -> PathBuf {
        self.root.join("ldm").join(format!("lora_r{rank}"))
    }

    pub fn translator(&self) -> PathBuf {
        self.root.join("translator")
    }

    pub fn mil(&self) -> PathBuf {
        self.root.join("mil")
    }

    pub fn translations(&self, tag: &str) -> PathBuf {
        self.root.join("translations").join(tag)
    }

    pub fn eval(&self, tag: &str) -> PathBuf {
        self.root.join("eval").join(tag)
    }

    pub fn sweep(&self, axis: &str) -> PathBuf {
        self.root.join("sweep").join(axis)
    }
}

pub fn is_complete(dir: &Path) -> bool {
    dir.join(COMPLETE).exists()
}

/// Returns false when the stage is already done and not forced; otherwise
/// clears the directory and writes the config snapshot into it.
pub(crate) fn begin(dir: &Path, cfg: &RunConfig, force: bool) -> Result<bool> {
    if is_complete(dir) && !force {
        info!("{} is complete; skipping (use --force to redo)", dir.display());
        return Ok(false);
    }
    if dir.exists() {
        std::fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_snapshot(dir, cfg)?;
    Ok(true)
}

pub(crate) fn finish(dir: &Path) -> Result<()> {
    std::fs::write(dir.join(COMPLETE), b"").with_context(|| format!("marking {}", dir.display()))
}

pub fn write_snapshot(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(SNAPSHOT), cfg.to_toml()?).with_context(|| format!("writing snapshot in {}", dir.display()))
}

fn require(dir: &Path, what: &str) -> Result<()> {
    if !is_complete(dir) {
        anyhow::bail!("{what} not found at {} (run the producing command first)", dir.display());
    }
    Ok(())
}

pub fn load_dataset(ws: &Workspace) -> Result<Dataset> {
    require(&ws.data(), "dataset")?;
    Dataset::load(&ws.data()).context("loading dataset")
}

pub fn load_extractor(ws: &Workspace) -> Result<ConvExtractor> {
    require(&ws.extractor(), "extractor checkpoint")?;
    ConvExtractor::load(&ws.extractor()).context("loading extractor")
}

pub fn load_ldm(ws: &Workspace, rank: usize) -> Result<LatentDiffusion> {
    let dir = ws.ldm_lora(rank);
    require(&dir, "LDM checkpoint")?;
    LatentDiffusion::load(&dir).with_context(|| format!("loading LDM from {}", dir.display()))
}

pub fn load_translator(ws: &Workspace) -> Result<TranslatorPair> {
    require(&ws.translator(), "translator checkpoint")?;
    TranslatorPair::load(&ws.translator()).context("loading translator")
}

pub fn load_mil(ws: &Workspace) -> Result<MilEnsemble> {
    require(&ws.mil(), "MIL checkpoint")?;
    MilEnsemble::load(&ws.mil()).context("loading MIL ensemble")
}

fn select_splits(ds: &Dataset, splits: &[Split], domain: Domain) -> Vec<ImagePatch> {
    splits.iter().flat_map(|s| ds.select(*s, domain)).collect()
}

pub fn synth(cfg: &RunConfig, ws: &Workspace, force: bool) -> Result<()> {
    let dir = ws.data();
    if !begin(&dir, cfg, force)? {
        return Ok(());
    }
    let t = Instant::now();
    let ds = generate_dataset(&cfg.data)?;
    ds.write(&dir)?;
    info!("synth: {} patches in {:.1?}", ds.patches.len(), t.elapsed());
    finish(&dir)
}

/// Trains the feature extractor on clean training patches.
pub fn train_extractor(cfg: &RunConfig, ws: &Workspace, force: bool) -> Result<()> {
    let dir = ws.extractor();
    let ds = load_dataset(ws)?;
    if !begin(&dir, cfg, force)? {
        return Ok(());
    }
    let t = Instant::now();
    let train = ds.select(Split::Train, Domain::Ffpe);
    let mut ex = ConvExtractor::new(cfg.extractor.config.clone())?;
    let report = ex.train(&train, |e, l| info!("extractor epoch {e}: loss {l:.4}"))?;
    let val_ffpe = ex.accuracy(&ds.select(Split::Val, Domain::Ffpe))?;
    let val_fs = ex.accuracy(&ds.select(Split::Val, Domain::Fs))?;
    ex.save(&dir)?;
    write_json(
        &dir.join("report.json"),
        &serde_json::json!({
            "epoch_losses": report.epoch_losses,
            "train_accuracy": report.train_accuracy,
            "val_accuracy_ffpe": val_ffpe,
            "val_accuracy_fs": val_fs,
            "seconds": t.elapsed().as_secs_f64(),
        }),
    )?;
    info!("extractor: val acc FFPE {val_ffpe:.3}, FS {val_fs:.3} in {:.1?}", t.elapsed());
    finish(&dir)
}

fn training_samples(
    ldm: &LatentDiffusion,
    extractor: &dyn FeatureExtractor,
    patches: &[ImagePatch],
) -> Result<Vec<TrainingSample>> {
    let latents = ldm.encode(patches)?;
    let embeddings = extractor.extract_batch(patches)?;
    Ok(latents
        .into_iter()
        .zip(embeddings)
        .zip(patches)
        .map(|((latent, embedding), p)| TrainingSample { latent, token: p.domain.token(), embedding })
        .collect())
}

fn ldm_train_patches(ds: &Dataset) -> (Vec<ImagePatch>, Vec<ImagePatch>) {
    let train = [Domain::Ffpe, Domain::Fs].iter().flat_map(|d| ds.select(Split::Train, *d)).collect();
    let val = [Domain::Ffpe, Domain::Fs].iter().flat_map(|d| ds.select(Split::Val, *d)).collect();
    (train, val)
}

/// Autoencoder plus base denoiser, then the configured LoRA rank.
pub fn train_ldm(cfg: &RunConfig, ws: &Workspace, force: bool) -> Result<()> {
    let dir = ws.ldm_base();
    let ds = load_dataset(ws)?;
    let extractor = load_extractor(ws)?;
    if begin(&dir, cfg, force)? {
        let t = Instant::now();
        let (train, val) = ldm_train_patches(&ds);
        let mut ldm = LatentDiffusion::new(cfg.ldm.clone())?;
        let vr = ldm.train_vae(&train, &val, |e, l| info!("vae epoch {e}: loss {l:.5}"))?;
        info!("vae: val mse {:?}, latent scale {:.3} ({:.1?})", vr.val_mse, vr.latent_scale, t.elapsed());
        let samples = training_samples(&ldm, &extractor, &train)?;
        let embeddings: Vec<Embedding> = samples.iter().map(|s| s.embedding.clone()).collect();
        ldm.fit_embedding_stats(&embeddings)?;
        let mut trainer = ldm.trainer(Stage::Base)?;
        let losses = trainer.run(&ldm, &samples, |s, l| {
            if s % 250 == 0 {
                info!("ldm base step {s}: loss {l:.4}");
            }
        })?;
        ldm.save(&dir)?;
        write_json(
            &dir.join("report.json"),
            &serde_json::json!({
                "vae_epoch_losses": vr.epoch_losses,
                "vae_val_mse": vr.val_mse,
                "latent_scale": vr.latent_scale,
                "denoiser_params": ldm.num_denoiser_params(),
                "loss_first_100": mean_of(&losses[..losses.len().min(100)]),
                "loss_last_100": mean_of(&losses[losses.len().saturating_sub(100)..]),
                "seconds": t.elapsed().as_secs_f64(),
            }),
        )?;
        finish(&dir)?;
    }
    train_lora(cfg, ws, cfg.ldm.lora.rank, force)
}

fn mean_of(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Fine-tunes LoRA adapters of one rank on top of the base checkpoint.
pub fn train_lora(cfg: &RunConfig, ws: &Workspace, rank: usize, force: bool) -> Result<()> {
    let dir = ws.ldm_lora(rank);
    require(&ws.ldm_base(), "base LDM checkpoint")?;
    let ds = load_dataset(ws)?;
    let extractor = load_extractor(ws)?;
    if !begin(&dir, cfg, force)? {
        return Ok(());
    }
    let t = Instant::now();
    let mut ldm = LatentDiffusion::load(&ws.ldm_base())?;
    ldm.cfg.lora.stage = cfg.ldm.lora.stage.clone();
    ldm.install_lora(rank, cfg.ldm.lora.scale)?;
    let (train, _) = ldm_train_patches(&ds);
    let samples = training_samples(&ldm, &extractor, &train)?;
    let mut trainer = ldm.trainer(Stage::Lora)?;
    let losses = trainer.run(&ldm, &samples, |s, l| {
        if s % 250 == 0 {
            info!("lora r{rank} step {s}: loss {l:.4}");
        }
    })?;
    ldm.save(&dir)?;
    write_json(
        &dir.join("report.json"),
        &serde_json::json!({
            "rank": rank,
            "loss_first_100": mean_of(&losses[..losses.len().min(100)]),
            "loss_last_100": mean_of(&losses[losses.len().saturating_sub(100)..]),
            "seconds": t.elapsed().as_secs_f64(),
        }),
    )?;
    info!("lora r{rank}: done in {:.1?}", t.elapsed());
    finish(&dir)
}

/// Trains the FS ↔ FFPE embedding translator on unpaired training embeddings.
pub fn train_translator(cfg: &RunConfig, ws: &Workspace, force: bool) -> Result<()> {
    let dir = ws.translator();
    let ds = load_dataset(ws)?;
    let extractor = load_extractor(ws)?;
    if !begin(&dir, cfg, force)? {
        return Ok(());
    }
    let t = Instant::now();
    let fs = extractor.extract_batch(&ds.select(Split::Train, Domain::Fs))?;
    let ffpe = extractor.extract_batch(&ds.select(Split::Train, Domain::Ffpe))?;
    let pair = TranslatorPair::new(cfg.translator.clone())?;
    let mut trainer = TranslatorTrainer::new(pair)?;
    let last = trainer.train(&fs, &ffpe, |s, l| {
        if s % 500 == 0 {
            info!("translator step {s}: critic {:.4} generator {:.4} cycle {:.4}", l.critic_total, l.generator_total, l.cycle);
        }
    })?;
    trainer.pair.save(&dir)?;
    write_json(&dir.join("report.json"), &serde_json::json!({ "final": last, "seconds": t.elapsed().as_secs_f64() }))?;
    info!("translator: done in {:.1?}", t.elapsed());
    finish(&dir)
}

/// Trains the MIL ensemble on clean non-test cases only.
pub fn train_mil(cfg: &RunConfig, ws: &Workspace, force: bool) -> Result<()> {
    let dir = ws.mil();
    let ds = load_dataset(ws)?;
    let extractor = load_extractor(ws)?;
    if !begin(&dir, cfg, force)? {
        return Ok(());
    }
    let patches = select_splits(&ds, &[Split::Train, Split::Val], Domain::Ffpe);
    let bags = make_bags(&extractor, &patches, cfg.eval.bag_size)?;
    let ens = MilEnsemble::train(&bags, &cfg.mil)?;
    ens.save(&dir)?;
    info!("mil: held-out FFPE AUC per fold {:?}", ens.held_out_auc);
    finish(&dir)
}

/// Translates the test-split FS patches into `out_dir`.
pub fn translate(cfg: &RunConfig, ws: &Workspace, out_dir: &Path, force: bool) -> Result<()> {
    cfg.validate()?;
    let ds = load_dataset(ws)?;
    let extractor = load_extractor(ws)?;
    let ldm = load_ldm(ws, cfg.ldm.lora.rank)?;
    let pair = if cfg.translate.use_translator { Some(load_translator(ws)?) } else { None };
    if !begin(out_dir, cfg, force)? {
        return Ok(());
    }
    let t = Instant::now();
    let identity = IdentityMap(extractor.dim());
    let map: &dyn EmbeddingMap<f32> = match &pair {
        Some(p) => p.generator(),
        None => &identity,
    };
    let translator = Translator {
        ldm: &ldm,
        extractor: &extractor,
        map,
        alpha: cfg.alpha,
        guidance: cfg.guidance,
        batch_size: cfg.translate.batch_size,
        seed: cfg.seed,
    };
    let source = ds.select(Split::Test, Domain::Fs);
    let out = translator.translate_batch(&source)?;
    write_patch_set(out_dir, &out.patches)?;
    let mut lines = String::new();
    for r in &out.records {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    std::fs::write(out_dir.join("records.jsonl"), lines)?;
    info!("translate: {} patches into {} in {:.1?}", out.patches.len(), out_dir.display(), t.elapsed());
    finish(out_dir)
}
