use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use candle_core::Tensor;
use candle_nn::Optimizer;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::auc::{accuracy, macro_auc};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::nn::{adamw, cross_entropy, leaky_relu, tensor_to_vec, Dense, OptimizerConfig, ParamStore, Scope};
use crate::types::{ClassLabel, EmbeddingVector};

/// A labelled set of patch embeddings from one case.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub case_id: String,
    pub label: ClassLabel,
    pub embeddings: Vec<EmbeddingVector<f32>>,
}

impl Bag {
    /// Coordinate-wise mean; each coordinate is summed in sorted order so the
    /// result does not depend on the order of the instances.
    pub fn pooled(&self) -> Result<Vec<f32>> {
        let first = self.embeddings.first().ok_or_else(|| Error::invalid(format!("bag of `{}` is empty", self.case_id)))?;
        let d = first.dim();
        if self.embeddings.iter().any(|e| e.dim() != d) {
            return Err(Error::invalid(format!("bag of `{}` mixes embedding sizes", self.case_id)));
        }
        let n = self.embeddings.len();
        let mut column = vec![0f32; n];
        Ok((0..d)
            .map(|j| {
                for (slot, e) in column.iter_mut().zip(&self.embeddings) {
                    *slot = e.0[j];
                }
                column.sort_by(f32::total_cmp);
                column.iter().sum::<f32>() / n as f32
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MilConfig {
    pub hidden: usize,
    pub folds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for MilConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            folds: 6,
            epochs: 150,
            batch_size: 16,
            optimizer: OptimizerConfig { lr: 1e-3, weight_decay: 1e-3, ..Default::default() },
            seed: 0,
        }
    }
}

/// Mean-pooling MIL head: standardise the pooled embedding, then `d → hidden → 3`.
#[derive(Debug, Clone)]
pub struct MilModel {
    l1: Dense,
    l2: Dense,
    shift: Tensor,
    scale: Tensor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Standardizer {
    mean: Vec<f32>,
    std: Vec<f32>,
}

impl Standardizer {
    fn fit(rows: &[Vec<f32>]) -> Self {
        let n = rows.len() as f64;
        let d = rows[0].len();
        let mut mean = vec![0f32; d];
        let mut std = vec![0f32; d];
        for j in 0..d {
            let m = rows.iter().map(|r| r[j] as f64).sum::<f64>() / n;
            let v = rows.iter().map(|r| (r[j] as f64 - m).powi(2)).sum::<f64>() / n;
            mean[j] = m as f32;
            std[j] = v.sqrt().max(1e-6) as f32;
        }
        Self { mean, std }
    }
}

impl MilModel {
    fn new(scope: &Scope<'_>, dim: usize, hidden: usize, norm: &Standardizer) -> Result<Self> {
        let dev = scope.device();
        Ok(Self {
            l1: Dense::new(&scope.sub("l1"), dim, hidden, true)?,
            l2: Dense::new(&scope.sub("l2"), hidden, ClassLabel::ALL.len(), true)?,
            shift: Tensor::from_slice(&norm.mean, dim, dev)?,
            scale: Tensor::from_slice(&norm.std, dim, dev)?,
        })
    }

    /// Class logits for pooled rows `(n, d)`.
    pub fn logits(&self, pooled: &Tensor) -> Result<Tensor> {
        let x = pooled.broadcast_sub(&self.shift)?.broadcast_div(&self.scale)?;
        self.l2.forward(&leaky_relu(&self.l1.forward(&x)?, 0.1)?)
    }

    pub fn predict(&self, bags: &[Bag]) -> Result<Vec<Vec<f32>>> {
        let logits = tensor_to_vec(&self.logits(&pooled_tensor(bags)?)?)?;
        Ok(logits.chunks(ClassLabel::ALL.len()).map(<[f32]>::to_vec).collect())
    }
}

fn pooled_tensor(bags: &[Bag]) -> Result<Tensor> {
    let rows = bags.iter().map(Bag::pooled).collect::<Result<Vec<_>>>()?;
    let d = rows.first().map_or(0, Vec::len);
    Ok(Tensor::from_vec(rows.concat(), (bags.len(), d), &candle_core::Device::Cpu)?)
}

/// Assigns every case to one of `k` folds, spreading each class evenly.
/// Returns `case_id → fold`.
pub fn stratified_folds(bags: &[Bag], k: usize, seed: u64) -> Result<BTreeMap<String, usize>> {
    if k < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {k}")));
    }
    let mut by_class: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    let mut case_label: BTreeMap<&str, ClassLabel> = BTreeMap::new();
    for b in bags {
        if let Some(prev) = case_label.insert(&b.case_id, b.label) {
            if prev != b.label {
                return Err(Error::invalid(format!("case `{}` has bags with different labels", b.case_id)));
            }
        }
        by_class.entry(b.label.index()).or_default().insert(b.case_id.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    let mut offset = 0;
    for cases in by_class.values() {
        let mut cases: Vec<&String> = cases.iter().collect();
        cases.shuffle(&mut rng);
        for (i, c) in cases.into_iter().enumerate() {
            out.insert(c.clone(), (offset + i) % k);
        }
        offset += 1;
    }
    Ok(out)
}

/// Mean and population standard deviation of per-fold metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub fold_auc: Vec<f64>,
    pub fold_accuracy: Vec<f64>,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

impl ClassificationReport {
    fn new(fold_auc: Vec<f64>, fold_accuracy: Vec<f64>) -> Self {
        let (auc_mean, auc_std) = mean_std(&fold_auc);
        let (accuracy_mean, accuracy_std) = mean_std(&fold_accuracy);
        Self { fold_auc, fold_accuracy, auc_mean, auc_std, accuracy_mean, accuracy_std }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnsembleMeta {
    config: MilConfig,
    dim: usize,
    norms: Vec<Standardizer>,
    held_out_auc: Vec<f64>,
}

/// One MIL model per cross-validation fold.
pub struct MilEnsemble {
    store: ParamStore,
    pub models: Vec<MilModel>,
    pub held_out_auc: Vec<f64>,
    cfg: MilConfig,
    dim: usize,
    norms: Vec<Standardizer>,
}

impl MilEnsemble {
    /// Trains `cfg.folds` models with case-level stratified cross-validation.
    pub fn train(bags: &[Bag], cfg: &MilConfig) -> Result<Self> {
        let dim = bags.first().ok_or_else(|| Error::invalid("no training bags"))?.embeddings.first().map_or(0, |e| e.dim());
        let folds = stratified_folds(bags, cfg.folds, cfg.seed)?;
        let pooled = bags.iter().map(Bag::pooled).collect::<Result<Vec<_>>>()?;
        let store = ParamStore::new(cfg.seed);
        let mut models = Vec::new();
        let mut norms = Vec::new();
        let mut held_out_auc = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3117);
        for fold in 0..cfg.folds {
            let (train_idx, val_idx): (Vec<usize>, Vec<usize>) =
                (0..bags.len()).partition(|&i| folds[&bags[i].case_id] != fold);
            if train_idx.is_empty() || val_idx.is_empty() {
                return Err(Error::invalid(format!("fold {fold} is empty; too few cases for {} folds", cfg.folds)));
            }
            let norm = Standardizer::fit(&train_idx.iter().map(|&i| pooled[i].clone()).collect::<Vec<_>>());
            let scope = store.scope(&format!("fold{fold}"));
            let model = MilModel::new(&scope, dim, cfg.hidden, &norm)?;
            let vars = store.vars_where(|n| n.starts_with(&format!("fold{fold}.")));
            let mut opt = adamw(vars, &cfg.optimizer)?;
            let mut order = train_idx.clone();
            for epoch in 0..cfg.epochs {
                order.shuffle(&mut rng);
                for chunk in order.chunks(cfg.batch_size) {
                    let rows: Vec<f32> = chunk.iter().flat_map(|&i| pooled[i].iter().copied()).collect();
                    let x = Tensor::from_vec(rows, (chunk.len(), dim), store.device())?;
                    let y: Vec<u32> = chunk.iter().map(|&i| bags[i].label.index() as u32).collect();
                    let y = Tensor::from_vec(y, chunk.len(), store.device())?;
                    let loss = cross_entropy(&model.logits(&x)?, &y)?;
                    if !loss.to_scalar::<f32>()?.is_finite() {
                        return Err(Error::Training(format!("MIL loss diverged in fold {fold}, epoch {epoch}")));
                    }
                    opt.backward_step(&loss)?;
                }
            }
            let val: Vec<Bag> = val_idx.iter().map(|&i| bags[i].clone()).collect();
            let labels: Vec<usize> = val.iter().map(|b| b.label.index()).collect();
            held_out_auc.push(macro_auc(&model.predict(&val)?, &labels, ClassLabel::ALL.len()).unwrap_or(f64::NAN));
            models.push(model);
            norms.push(norm);
        }
        Ok(Self { store, models, held_out_auc, cfg: cfg.clone(), dim, norms })
    }

    /// Evaluates every fold model on the same bags.
    pub fn evaluate(&self, bags: &[Bag]) -> Result<ClassificationReport> {
        if bags.iter().flat_map(|b| &b.embeddings).any(|e| e.dim() != self.dim) {
            return Err(Error::invalid(format!("MIL expects {}-d embeddings", self.dim)));
        }
        let labels: Vec<usize> = bags.iter().map(|b| b.label.index()).collect();
        let mut aucs = Vec::new();
        let mut accs = Vec::new();
        for m in &self.models {
            let scores = m.predict(bags)?;
            aucs.push(macro_auc(&scores, &labels, ClassLabel::ALL.len())?);
            accs.push(accuracy(&scores, &labels)?);
        }
        Ok(ClassificationReport::new(aucs, accs))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        crate::io::ensure_dir(dir)?;
        self.store.save(&dir.join("mil.safetensors"))?;
        let meta = EnsembleMeta {
            config: self.cfg.clone(),
            dim: self.dim,
            norms: self.norms.clone(),
            held_out_auc: self.held_out_auc.clone(),
        };
        write_json(&dir.join("mil.json"), &meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: EnsembleMeta = read_json(&dir.join("mil.json"))?;
        let mut store = ParamStore::new(meta.config.seed);
        let models = meta
            .norms
            .iter()
            .enumerate()
            .map(|(f, n)| MilModel::new(&store.scope(&format!("fold{f}")), meta.dim, meta.config.hidden, n))
            .collect::<Result<Vec<_>>>()?;
        store.load(&dir.join("mil.safetensors"))?;
        Ok(Self { store, models, held_out_auc: meta.held_out_auc, cfg: meta.config, dim: meta.dim, norms: meta.norms })
    }
}
