use std::path::Path;

use candle_core::{Tensor, D};
use candle_nn::Optimizer;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::nn::{adamw, cross_entropy, global_mean, images_to_tensor, leaky_relu, tensor_to_vec, Conv2d, Dense};
use crate::nn::{OptimizerConfig, ParamStore};
use crate::types::{ClassLabel, EmbeddingVector, ImagePatch};

/// Maps image patches to fixed-dimension embeddings.
pub trait FeatureExtractor {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn extract_batch(&self, patches: &[ImagePatch]) -> Result<Vec<EmbeddingVector<f32>>>;

    fn extract(&self, patch: &ImagePatch) -> Result<EmbeddingVector<f32>> {
        Ok(self.extract_batch(std::slice::from_ref(patch))?.remove(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    pub dim: usize,
    pub channels: [usize; 3],
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub flips: bool,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            channels: [16, 32, 64],
            epochs: 12,
            batch_size: 32,
            optimizer: OptimizerConfig { lr: 2e-3, weight_decay: 1e-4, ..Default::default() },
            flips: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractorTrainReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

const SLOPE: f64 = 0.1;
const CHUNK: usize = 128;

/// Small convolutional patch classifier; the embedding is the activation
/// before the class head.
pub struct ConvExtractor {
    store: ParamStore,
    convs: Vec<Conv2d>,
    embed: Dense,
    head: Dense,
    cfg: ExtractorConfig,
    name: String,
}

impl ConvExtractor {
    pub fn new(cfg: ExtractorConfig) -> Result<Self> {
        let store = ParamStore::new(cfg.seed);
        let [c1, c2, c3] = cfg.channels;
        let (convs, embed, head) = {
            let root = store.root();
            let convs = vec![
                Conv2d::new(&root.sub("conv0"), 3, c1, 3, 1)?,
                Conv2d::new(&root.sub("conv1"), c1, c2, 3, 2)?,
                Conv2d::new(&root.sub("conv2"), c2, c3, 3, 2)?,
                Conv2d::new(&root.sub("conv3"), c3, c3, 3, 2)?,
            ];
            let embed = Dense::new(&root.sub("embed"), c3, cfg.dim, true)?;
            let head = Dense::new(&root.sub("head"), cfg.dim, ClassLabel::ALL.len(), true)?;
            (convs, embed, head)
        };
        let name = format!("conv-extractor-{}", cfg.dim);
        Ok(Self { store, convs, embed, head, cfg, name })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.cfg
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    /// `(b, h, w, 3)` images to `(b, dim)` embeddings.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.affine(2.0, -1.0)?;
        for conv in &self.convs {
            h = leaky_relu(&conv.forward(&h)?, SLOPE)?;
        }
        leaky_relu(&self.embed.forward(&global_mean(&h)?)?, SLOPE)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.head.forward(&self.features(x)?)
    }

    /// Supervised training on class labels with random flips.
    pub fn train(&mut self, patches: &[ImagePatch], mut on_epoch: impl FnMut(usize, f64)) -> Result<ExtractorTrainReport> {
        if patches.is_empty() {
            return Err(Error::invalid("extractor training set is empty"));
        }
        let mut opt = adamw(self.store.all_vars(), &self.cfg.optimizer)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0xe47);
        let mut order: Vec<usize> = (0..patches.len()).collect();
        let mut epoch_losses = Vec::with_capacity(self.cfg.epochs);
        for epoch in 0..self.cfg.epochs {
            order.shuffle(&mut rng);
            let (mut sum, mut count) = (0.0, 0usize);
            for idx in order.chunks(self.cfg.batch_size) {
                let batch: Vec<&ImagePatch> = idx.iter().map(|&i| &patches[i]).collect();
                let flips: Vec<(bool, bool)> = if self.cfg.flips {
                    idx.iter().map(|_| (rng.random(), rng.random())).collect()
                } else {
                    vec![(false, false); idx.len()]
                };
                let x = images_to_tensor(&batch, Some(&flips))?;
                let y: Vec<u32> = batch.iter().map(|p| p.class_label.index() as u32).collect();
                let y = Tensor::from_vec(y, idx.len(), x.device())?;
                let loss = cross_entropy(&self.logits(&x)?, &y)?;
                let value = loss.to_scalar::<f32>()? as f64;
                if !value.is_finite() {
                    return Err(Error::Training(format!("extractor loss became {value} in epoch {epoch}")));
                }
                opt.backward_step(&loss)?;
                sum += value * idx.len() as f64;
                count += idx.len();
            }
            let mean = sum / count as f64;
            on_epoch(epoch, mean);
            epoch_losses.push(mean);
        }
        let train_accuracy = self.accuracy(patches)?;
        Ok(ExtractorTrainReport { epoch_losses, train_accuracy })
    }

    pub fn predict(&self, patches: &[ImagePatch]) -> Result<Vec<ClassLabel>> {
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(CHUNK) {
            let refs: Vec<&ImagePatch> = chunk.iter().collect();
            let pred = self.logits(&images_to_tensor(&refs, None)?)?.argmax(D::Minus1)?.to_vec1::<u32>()?;
            out.extend(pred.into_iter().map(|i| ClassLabel::from_index(i as usize).expect("three-way head")));
        }
        Ok(out)
    }

    pub fn accuracy(&self, patches: &[ImagePatch]) -> Result<f64> {
        let pred = self.predict(patches)?;
        let hits = pred.iter().zip(patches).filter(|(p, q)| **p == q.class_label).count();
        Ok(hits as f64 / patches.len().max(1) as f64)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        crate::io::ensure_dir(dir)?;
        self.store.save(&dir.join("extractor.safetensors"))?;
        write_json(&dir.join("extractor.json"), &self.cfg)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg: ExtractorConfig = read_json(&dir.join("extractor.json"))?;
        let mut ex = Self::new(cfg)?;
        ex.store.load(&dir.join("extractor.safetensors"))?;
        Ok(ex)
    }
}

impl FeatureExtractor for ConvExtractor {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn extract_batch(&self, patches: &[ImagePatch]) -> Result<Vec<EmbeddingVector<f32>>> {
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(CHUNK) {
            let refs: Vec<&ImagePatch> = chunk.iter().collect();
            let f = tensor_to_vec(&self.features(&images_to_tensor(&refs, None)?)?)?;
            for row in f.chunks(self.cfg.dim) {
                out.push(EmbeddingVector::new(row.to_vec())?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Domain;

    fn striped(label: ClassLabel, phase: usize) -> ImagePatch {
        let (h, w) = (16, 16);
        let mut px = vec![0.2f32; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                let on = match label {
                    ClassLabel::A => (x + phase) % 4 < 2,
                    ClassLabel::B => (y + phase) % 4 < 2,
                    ClassLabel::C => (x + y + phase) % 6 < 2,
                };
                if on {
                    px[(y * w + x) * 3] = 0.8;
                }
            }
        }
        ImagePatch::new(px, h, w, Domain::Ffpe, label, "c", format!("{label}-{phase}")).unwrap()
    }

    #[test]
    fn embeddings_have_configured_dim_and_are_deterministic() {
        let cfg = ExtractorConfig { dim: 24, channels: [4, 8, 8], ..Default::default() };
        let a = ConvExtractor::new(cfg.clone()).unwrap();
        let b = ConvExtractor::new(cfg).unwrap();
        let patches: Vec<ImagePatch> = (0..3).map(|i| striped(ClassLabel::ALL[i], i)).collect();
        let ea = a.extract_batch(&patches).unwrap();
        assert_eq!(ea.len(), 3);
        assert!(ea.iter().all(|e| e.dim() == 24));
        assert_eq!(ea, b.extract_batch(&patches).unwrap());
        assert_eq!(a.extract(&patches[1]).unwrap().dim(), 24);
    }

    #[test]
    fn learns_separable_textures_and_round_trips() {
        let cfg = ExtractorConfig { dim: 16, channels: [8, 8, 16], epochs: 25, batch_size: 12, ..Default::default() };
        let mut ex = ConvExtractor::new(cfg).unwrap();
        let patches: Vec<ImagePatch> =
            (0..24).map(|i| striped(ClassLabel::ALL[i % 3], i / 3)).collect();
        let report = ex.train(&patches, |_, _| {}).unwrap();
        assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
        assert!(report.train_accuracy > 0.9, "accuracy {}", report.train_accuracy);
        let dir = tempfile::tempdir().unwrap();
        ex.save(dir.path()).unwrap();
        let back = ConvExtractor::load(dir.path()).unwrap();
        assert_eq!(ex.extract_batch(&patches).unwrap(), back.extract_batch(&patches).unwrap());
    }
}
