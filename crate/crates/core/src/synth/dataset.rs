use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{apply_fs_artifacts, render_tissue, CaseStyle, FsArtifactConfig};
use crate::error::{Error, Result};
use crate::io::{ensure_dir, fnv1a, load_png, save_png};
use crate::types::{ClassLabel, Domain, ImagePatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub image_size: usize,
    pub cases_per_class: usize,
    /// Patches per case and domain.
    pub patches_per_case: usize,
    /// Train and validation fractions; the rest is test.
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub artifacts: FsArtifactConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            cases_per_class: 20,
            patches_per_case: 32,
            train_fraction: 0.7,
            val_fraction: 0.15,
            artifacts: FsArtifactConfig::default(),
            seed: 0,
        }
    }
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub case_id: String,
    pub class: ClassLabel,
    pub domain: Domain,
    pub split: Split,
    pub path: String,
    pub seed: u64,
    pub patch_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub entries: Vec<ManifestEntry>,
    pub patches: Vec<ImagePatch>,
}

/// Stable seed derived from a global seed and string parts.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    for p in parts {
        bytes.push(0x1f);
        bytes.extend_from_slice(p.as_bytes());
    }
    fnv1a(&bytes)
}

fn split_counts(n: usize, cfg: &SynthConfig) -> Result<(usize, usize)> {
    let f = (cfg.train_fraction, cfg.val_fraction);
    if !(f.0 > 0.0 && f.1 >= 0.0 && f.0 + f.1 < 1.0) {
        return Err(Error::config(format!("invalid split fractions {f:?}")));
    }
    let train = ((n as f64) * f.0).round() as usize;
    let val = ((n as f64) * f.1).round() as usize;
    if train == 0 || train + val >= n {
        return Err(Error::config(format!("{n} cases per class cannot fill train/val/test")));
    }
    Ok((train, val))
}

/// Generates all cases: every case gets patches in both domains, drawn independently.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.image_size < 8 || cfg.patches_per_case == 0 {
        return Err(Error::config("image_size must be >= 8 and patches_per_case >= 1"));
    }
    let (n_train, n_val) = split_counts(cfg.cases_per_class, cfg)?;
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &["split"]));
    let mut entries = Vec::new();
    let mut patches = Vec::new();
    for (ci, label) in ClassLabel::ALL.iter().enumerate() {
        let mut order: Vec<usize> = (0..cfg.cases_per_class).collect();
        order.shuffle(&mut split_rng);
        for (rank, &k) in order.iter().enumerate() {
            let split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            let case_id = format!("case{:03}", ci * cfg.cases_per_class + k);
            let mut style_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[&case_id, "style"]));
            let style = CaseStyle::sample(&mut style_rng);
            for domain in [Domain::Ffpe, Domain::Fs] {
                for i in 0..cfg.patches_per_case {
                    let patch_id = format!("{case_id}-{}-{i:03}", domain.as_str());
                    let seed = derive_seed(cfg.seed, &[&patch_id]);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut px = render_tissue(*label, &style, cfg.image_size, &mut rng);
                    if domain == Domain::Fs {
                        px = apply_fs_artifacts(&px, cfg.image_size, &cfg.artifacts, &mut rng).0;
                    }
                    let path = format!("{}/{}/{case_id}/{patch_id}.png", split.as_str(), domain.as_str());
                    patches.push(ImagePatch::new(px, cfg.image_size, cfg.image_size, domain, *label, &case_id, &patch_id)?);
                    entries.push(ManifestEntry { case_id: case_id.clone(), class: *label, domain, split, path, seed, patch_id });
                }
            }
        }
    }
    Ok(Dataset { entries, patches })
}

impl Dataset {
    /// Writes PNGs under `<root>/<split>/<domain>/<case_id>/` and `manifest.jsonl`.
    pub fn write(&self, root: &Path) -> Result<()> {
        ensure_dir(root)?;
        for (e, p) in self.entries.iter().zip(&self.patches) {
            save_png(&root.join(&e.path), &p.pixels, p.height, p.width)?;
        }
        let path = root.join("manifest.jsonl");
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for e in &self.entries {
            writeln!(f, "{}", serde_json::to_string(e)?).map_err(|err| Error::io(&path, err))?;
        }
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join("manifest.jsonl");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = Vec::new();
        let mut patches = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let e: ManifestEntry = serde_json::from_str(line)?;
            let (px, h, w) = load_png(&root.join(&e.path))?;
            patches.push(ImagePatch::new(px, h, w, e.domain, e.class, &e.case_id, &e.patch_id)?);
            entries.push(e);
        }
        Ok(Self { entries, patches })
    }

    /// Patches matching a split and domain, in manifest order.
    pub fn select(&self, split: Split, domain: Domain) -> Vec<ImagePatch> {
        self.entries
            .iter()
            .zip(&self.patches)
            .filter(|(e, _)| e.split == split && e.domain == domain)
            .map(|(_, p)| p.clone())
            .collect()
    }

    pub fn split_of(&self) -> BTreeMap<String, Split> {
        self.entries.iter().map(|e| (e.case_id.clone(), e.split)).collect()
    }

    pub fn image_path(&self, root: &Path, patch_id: &str) -> Option<PathBuf> {
        self.entries.iter().find(|e| e.patch_id == patch_id).map(|e| root.join(&e.path))
    }
}
