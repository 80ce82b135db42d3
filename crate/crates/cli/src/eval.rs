//! Patch-set directories, MIL bags and the metrics table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use f2f_core::embed::FeatureExtractor;
use f2f_core::io::{load_png, save_png, write_json};
use f2f_core::metrics::{case_fd_by_case, Bag, CaseFdSummary, ClassificationReport, MilEnsemble};
use f2f_core::{ClassLabel, Domain, ImagePatch};
use serde::{Deserialize, Serialize};

use crate::config::{Aggregate, RunConfig};

const PATCHES_FILE: &str = "patches.jsonl";

/// One line of a patch-set index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSetEntry {
    pub patch_id: String,
    pub case_id: String,
    pub class: ClassLabel,
    pub domain: Domain,
    pub path: String,
}

/// Writes `images/<case_id>/<patch_id>.png` plus an index.
pub fn write_patch_set(dir: &Path, patches: &[ImagePatch]) -> Result<()> {
    let mut index = String::new();
    for p in patches {
        let rel = format!("images/{}/{}.png", p.case_id, p.patch_id);
        save_png(&dir.join(&rel), &p.pixels, p.height, p.width)?;
        let entry = PatchSetEntry {
            patch_id: p.patch_id.clone(),
            case_id: p.case_id.clone(),
            class: p.class_label,
            domain: p.domain,
            path: rel,
        };
        index.push_str(&serde_json::to_string(&entry)?);
        index.push('\n');
    }
    std::fs::write(dir.join(PATCHES_FILE), index).with_context(|| format!("writing index in {}", dir.display()))
}

pub fn load_patch_set(dir: &Path) -> Result<Vec<ImagePatch>> {
    let path = dir.join(PATCHES_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let e: PatchSetEntry = serde_json::from_str(line).with_context(|| format!("parsing {}", path.display()))?;
        let (px, h, w) = load_png(&dir.join(&e.path))?;
        out.push(ImagePatch::new(px, h, w, e.domain, e.class, e.case_id, e.patch_id)?);
    }
    Ok(out)
}

/// Groups patches by case (patch-id order) and cuts each case into bags of
/// `bag_size`; a trailing partial bag is dropped unless it is the only one.
pub fn make_bags(extractor: &dyn FeatureExtractor, patches: &[ImagePatch], bag_size: usize) -> Result<Vec<Bag>> {
    let embeddings = extractor.extract_batch(patches)?;
    let mut cases: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in patches.iter().enumerate() {
        cases.entry(&p.case_id).or_default().push(i);
    }
    let mut bags = Vec::new();
    for (case, mut idx) in cases {
        idx.sort_by(|a, b| patches[*a].patch_id.cmp(&patches[*b].patch_id));
        let n_full = idx.len() / bag_size;
        let chunks: Vec<&[usize]> = if n_full == 0 { vec![&idx[..]] } else { idx.chunks_exact(bag_size).collect() };
        for chunk in chunks {
            bags.push(Bag {
                case_id: case.to_string(),
                label: patches[chunk[0]].class_label,
                embeddings: chunk.iter().map(|&i| embeddings[i].clone()).collect(),
            });
        }
    }
    Ok(bags)
}

/// Metrics of one patch set against the clean reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub classification: ClassificationReport,
    pub casefd: Option<CaseFdSummary>,
}

impl MethodResult {
    pub fn casefd_value(&self, agg: Aggregate) -> Option<f64> {
        self.casefd.as_ref().map(|s| match agg {
            Aggregate::Mean => s.mean,
            Aggregate::Median => s.median,
        })
    }
}

pub fn evaluate_method(
    method: &str,
    cfg: &RunConfig,
    extractor: &dyn FeatureExtractor,
    mil: &MilEnsemble,
    source: &[ImagePatch],
    reference: Option<&[ImagePatch]>,
) -> Result<MethodResult> {
    if source.is_empty() {
        bail!("{method}: no patches to evaluate");
    }
    let bags = make_bags(extractor, source, cfg.eval.bag_size)?;
    let classification = mil.evaluate(&bags).with_context(|| format!("{method}: classification"))?;
    let casefd = match reference {
        Some(r) => Some(case_fd_by_case(extractor, source, r).with_context(|| format!("{method}: CaseFD"))?),
        None => None,
    };
    Ok(MethodResult { method: method.to_string(), classification, casefd })
}

/// One JSON metric record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub method: String,
    pub metric: String,
    pub extractor: String,
    pub case_id: Option<String>,
    pub value: f64,
}

pub fn metric_records(results: &[MethodResult], extractor: &str, agg: Aggregate) -> Vec<MetricRecord> {
    let mut out = Vec::new();
    let rec = |method: &str, metric: &str, ex: &str, case_id: Option<String>, value: f64| MetricRecord {
        method: method.into(),
        metric: metric.into(),
        extractor: ex.into(),
        case_id,
        value,
    };
    for r in results {
        let c = &r.classification;
        out.push(rec(&r.method, "auc", "mil", None, c.auc_mean));
        out.push(rec(&r.method, "auc_std", "mil", None, c.auc_std));
        out.push(rec(&r.method, "accuracy", "mil", None, c.accuracy_mean));
        out.push(rec(&r.method, "accuracy_std", "mil", None, c.accuracy_std));
        if let Some(s) = &r.casefd {
            for (case, v) in &s.per_case {
                out.push(rec(&r.method, "casefd", extractor, Some(case.clone()), *v));
            }
            out.push(rec(&r.method, "casefd", extractor, None, r.casefd_value(agg).unwrap_or(f64::NAN)));
        }
    }
    out
}

/// Table with one row per method: AUC, Acc and CaseFD under each extractor.
pub fn table_csv(results: &[MethodResult], extractor: &str, agg: Aggregate) -> String {
    let mut s = format!("method,AUC,AUC_std,Acc,Acc_std,CaseFD_{extractor}\n");
    for r in results {
        let c = &r.classification;
        let fd = r.casefd_value(agg).map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{fd}",
            r.method, c.auc_mean, c.auc_std, c.accuracy_mean, c.accuracy_std
        );
    }
    s
}

pub fn write_results(dir: &Path, results: &[MethodResult], extractor: &str, agg: Aggregate) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("metrics.json"), &metric_records(results, extractor, agg))?;
    std::fs::write(dir.join("table.csv"), table_csv(results, extractor, agg))?;
    Ok(())
}
