//! One-axis hyperparameter sweeps: translate + evaluate per value.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::stages::{self, Workspace};
use crate::{evaluate_sources, plots};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "S")]
    Strength,
    #[serde(rename = "GS")]
    GuidanceScale,
    #[serde(rename = "alpha")]
    Alpha,
    #[serde(rename = "lora_rank")]
    LoraRank,
    #[serde(rename = "prox")]
    Prox,
}

impl FromStr for Axis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "S" => Axis::Strength,
            "GS" => Axis::GuidanceScale,
            "alpha" => Axis::Alpha,
            "lora_rank" => Axis::LoraRank,
            "prox" => Axis::Prox,
            other => bail!("unknown sweep axis `{other}` (expected S, GS, alpha, lora_rank or prox)"),
        })
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Strength => "S",
            Axis::GuidanceScale => "GS",
            Axis::Alpha => "alpha",
            Axis::LoraRank => "lora_rank",
            Axis::Prox => "prox",
        }
    }

    /// Config key the axis overrides.
    pub fn key(self) -> &'static str {
        match self {
            Axis::Strength => "guidance.S",
            Axis::GuidanceScale => "guidance.GS",
            Axis::Alpha => "alpha",
            Axis::LoraRank => "ldm.lora.rank",
            Axis::Prox => "guidance.prox_enabled",
        }
    }

    pub fn default_values(self, cfg: &RunConfig) -> Vec<String> {
        let s = &cfg.sweep;
        match self {
            Axis::Strength => s.strength.iter().map(f64::to_string).collect(),
            Axis::GuidanceScale => s.guidance_scale.iter().map(f64::to_string).collect(),
            Axis::Alpha => s.alpha.iter().map(f64::to_string).collect(),
            Axis::LoraRank => s.lora_rank.iter().map(usize::to_string).collect(),
            Axis::Prox => s.prox.iter().map(bool::to_string).collect(),
        }
    }

    /// Numeric position on the plot's x axis.
    fn plot_x(self, value: &str) -> Option<f64> {
        match self {
            Axis::Prox => value.parse::<bool>().ok().map(|b| if b { 1.0 } else { 0.0 }),
            _ => value.parse().ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: String,
    pub auc: Option<f64>,
    pub auc_std: Option<f64>,
    pub acc: Option<f64>,
    pub acc_std: Option<f64>,
    pub casefd: Option<f64>,
    pub error: Option<String>,
}

fn point_dir(ws: &Workspace, axis: Axis, value: &str) -> std::path::PathBuf {
    ws.sweep(axis.name()).join(format!("{}={value}", axis.name()))
}

fn run_point(cfg: &RunConfig, ws: &Workspace, axis: Axis, value: &str, force: bool) -> Result<SweepRow> {
    let point = cfg.with_overrides(&[(axis.key().to_string(), value.to_string())])?;
    point.validate()?;
    if axis == Axis::LoraRank {
        stages::train_lora(&point, ws, point.ldm.lora.rank, false)?;
    }
    let dir = point_dir(ws, axis, value);
    let tdir = dir.join("translation");
    stages::translate(&point, ws, &tdir, force)?;
    let results = evaluate_sources(&point, ws, &[("Ours".to_string(), tdir)], None, false)?;
    crate::eval::write_results(&dir.join("eval"), &results, "conv", point.eval.casefd_aggregate)?;
    let ours = results.last().ok_or_else(|| anyhow!("no evaluation rows"))?;
    let c = &ours.classification;
    Ok(SweepRow {
        axis_value: value.to_string(),
        auc: Some(c.auc_mean),
        auc_std: Some(c.auc_std),
        acc: Some(c.accuracy_mean),
        acc_std: Some(c.accuracy_std),
        casefd: ours.casefd_value(point.eval.casefd_aggregate),
        error: None,
    })
}

/// Runs every point; a failing point is recorded and the sweep continues.
pub fn run_sweep(cfg: &RunConfig, ws: &Workspace, axis: Axis, values: &[String], force: bool) -> Result<Vec<SweepRow>> {
    let dir = ws.sweep(axis.name());
    stages::write_snapshot(&dir, cfg)?;
    let mut rows = Vec::new();
    for v in values {
        info!("sweep {}={v}", axis.name());
        let row = run_point(cfg, ws, axis, v, force).unwrap_or_else(|e| {
            warn!("sweep point {}={v} failed: {e:#}", axis.name());
            SweepRow {
                axis_value: v.clone(),
                auc: None,
                auc_std: None,
                acc: None,
                acc_std: None,
                casefd: None,
                error: Some(format!("{e:#}")),
            }
        });
        rows.push(row);
    }
    std::fs::write(dir.join("sweep.csv"), sweep_csv(&rows))?;
    write_plots(&dir, axis, &rows)?;
    Ok(rows)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("axis_value,AUC,AUC_std,Acc,Acc_std,CaseFD_conv,error\n");
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace(['\n', ','], ";").replace('"', "'");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{err}",
            r.axis_value,
            cell(r.auc),
            cell(r.auc_std),
            cell(r.acc),
            cell(r.acc_std),
            cell(r.casefd)
        );
    }
    s
}

fn write_plots(dir: &Path, axis: Axis, rows: &[SweepRow]) -> Result<()> {
    let metrics: [(&str, fn(&SweepRow) -> Option<f64>); 3] =
        [("AUC", |r| r.auc), ("Acc", |r| r.acc), ("CaseFD_conv", |r| r.casefd)];
    for (name, get) in metrics {
        let pts: Vec<(f64, f64)> =
            rows.iter().filter_map(|r| Some((axis.plot_x(&r.axis_value)?, get(r)?))).collect();
        plots::line_plot(&dir.join(format!("{name}.svg")), axis.name(), name, &pts)?;
    }
    Ok(())
}
