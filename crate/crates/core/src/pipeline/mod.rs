//! FS → FFPE image translation: embed, translate the embedding, invert the
//! FS latent with DDIM, then denoise it under FFPE conditioning.

use serde::{Deserialize, Serialize};

use crate::embed::{translate_embeddings, EmbeddingMap, FeatureExtractor};
use crate::error::{Error, Result};
use crate::ldm::LatentDiffusion;
use crate::scheduler::{ddim_invert, denoise, GuidanceConfig};
use crate::synth::{derive_seed, reassemble, tile_image};
use crate::types::{ConditionBundle, Domain, DomainToken, EmbeddingVector, ImagePatch, LatentGrid};

/// Per-patch log of one translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub patch_id: String,
    pub case_id: String,
    #[serde(rename = "S")]
    pub strength: f64,
    #[serde(rename = "GS")]
    pub guidance_scale: f64,
    #[serde(rename = "T_inference")]
    pub t_inference: usize,
    pub prox_enabled: bool,
    pub q: f64,
    pub alpha: f64,
    pub steps: usize,
    pub start_timestep: usize,
    pub latent_norm: f64,
    pub inverted_norm: f64,
    pub output_latent_norm: f64,
    pub embedding_shift: f64,
    pub mean_abs_pixel_change: f64,
    pub seed: u64,
}

/// Everything needed to translate FS patches.
pub struct Translator<'a> {
    pub ldm: &'a LatentDiffusion,
    pub extractor: &'a dyn FeatureExtractor,
    pub map: &'a dyn EmbeddingMap<f32>,
    pub alpha: f64,
    pub guidance: GuidanceConfig,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationOutput {
    pub patches: Vec<ImagePatch>,
    pub records: Vec<TranslationRecord>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage { stage: name, message: other.to_string() },
    })
}

fn check_latents(name: &'static str, z: &[LatentGrid<f32>]) -> Result<()> {
    match z.iter().position(|g| !g.is_finite()) {
        Some(i) => Err(Error::Stage { stage: name, message: format!("non-finite latent for item {i}") }),
        None => Ok(()),
    }
}

impl Translator<'_> {
    /// Translates one patch; identical to a batch of one.
    pub fn translate_patch(&self, patch: &ImagePatch) -> Result<(ImagePatch, TranslationRecord)> {
        let mut out = self.translate_chunk(std::slice::from_ref(patch))?;
        Ok((out.patches.remove(0), out.records.remove(0)))
    }

    /// Translates patches in fixed-size chunks, in order.
    pub fn translate_batch(&self, patches: &[ImagePatch]) -> Result<TranslationOutput> {
        self.guidance.validate()?;
        let mut all = TranslationOutput { patches: Vec::with_capacity(patches.len()), records: Vec::new() };
        for chunk in patches.chunks(self.batch_size.max(1)) {
            let out = self.translate_chunk(chunk)?;
            all.patches.extend(out.patches);
            all.records.extend(out.records);
        }
        Ok(all)
    }

    fn translate_chunk(&self, patches: &[ImagePatch]) -> Result<TranslationOutput> {
        let cfg = &self.guidance;
        cfg.validate()?;
        if let Some(p) = patches.iter().find(|p| p.domain != Domain::Fs) {
            return Err(Error::invalid(format!("patch `{}` is not a frozen-section patch", p.patch_id)));
        }
        let e_fs = stage("embed", self.extractor.extract_batch(patches))?;
        let e_tr = stage("translate_embedding", translate_embeddings(&e_fs, self.map, self.alpha))?;
        let z0 = stage("encode", self.ldm.encode(patches))?;
        check_latents("encode", &z0)?;
        let inv_conds: Vec<ConditionBundle<f32>> =
            e_fs.iter().map(|e| ConditionBundle::new(DomainToken::Fs, Some(e.clone()))).collect();
        let inv = stage("invert", ddim_invert(&z0, &inv_conds, cfg, &self.ldm.schedule, self.ldm))?;
        check_latents("invert", &inv.latents)?;
        let gen_conds: Vec<ConditionBundle<f32>> =
            e_tr.iter().map(|e| ConditionBundle::new(DomainToken::Ffpe, Some(e.clone()))).collect();
        let z_out = stage("denoise", denoise(&inv.latents, inv.steps, &gen_conds, cfg, &self.ldm.schedule, self.ldm))?;
        check_latents("denoise", &z_out)?;
        let pixels = stage("decode", self.ldm.decode(&z_out))?;
        if pixels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Stage { stage: "decode", message: "non-finite pixels".into() });
        }
        let start_timestep = inv.grid[inv.steps];
        let mut out = TranslationOutput { patches: Vec::new(), records: Vec::new() };
        for (i, p) in patches.iter().enumerate() {
            let mut q = p.with_pixels(pixels[i].clone());
            q.domain = Domain::Ffpe;
            let change = p.pixels.iter().zip(&q.pixels).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / p.pixels.len() as f64;
            out.records.push(TranslationRecord {
                patch_id: p.patch_id.clone(),
                case_id: p.case_id.clone(),
                strength: cfg.strength,
                guidance_scale: cfg.guidance_scale,
                t_inference: cfg.t_inference,
                prox_enabled: cfg.prox_enabled,
                q: cfg.quantile,
                alpha: self.alpha,
                steps: inv.steps,
                start_timestep,
                latent_norm: z0[i].norm() as f64,
                inverted_norm: inv.latents[i].norm() as f64,
                output_latent_norm: z_out[i].norm() as f64,
                embedding_shift: shift(&e_fs[i], &e_tr[i]),
                mean_abs_pixel_change: change,
                seed: derive_seed(self.seed, &[&p.patch_id]),
            });
            out.patches.push(q);
        }
        Ok(out)
    }

    /// Translates a large FS image tile by tile and stitches the result.
    pub fn translate_tiled(&self, image: &ImagePatch, tile: usize) -> Result<(ImagePatch, Vec<TranslationRecord>)> {
        let mut tiles = tile_image(image, tile)?;
        let (rows, cols) = (image.height / tile, image.width / tile);
        let mut records = Vec::with_capacity(tiles.len());
        for t in &mut tiles {
            let (patch, mut rec) = self.translate_patch(&t.patch)?;
            rec.seed = derive_seed(self.seed, &[&image.patch_id, &t.row.to_string(), &t.col.to_string()]);
            t.patch = patch;
            records.push(rec);
        }
        let mut out = reassemble(&tiles, rows, cols, image)?;
        out.domain = Domain::Ffpe;
        Ok((out, records))
    }
}

fn shift(a: &EmbeddingVector<f32>, b: &EmbeddingVector<f32>) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
}
