//! Declarative run configuration with dotted-path overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use f2f_core::embed::{ExtractorConfig, TranslatorConfig};
use f2f_core::ldm::LdmConfig;
use f2f_core::metrics::MilConfig;
use f2f_core::scheduler::GuidanceConfig;
use f2f_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

/// Environment variable that replaces `paths.output_root`.
pub const OUTPUT_ROOT_ENV: &str = "F2F_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub output_root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSection {
    /// Registered extractor name; only `conv` is built in.
    pub name: String,
    #[serde(flatten)]
    pub config: ExtractorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateConfig {
    pub batch_size: usize,
    /// When false the embedding translator is skipped entirely (the no-translator baseline).
    pub use_translator: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Patches per MIL bag; each test case yields several bags.
    pub bag_size: usize,
    pub casefd_aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(rename = "S")]
    pub strength: Vec<f64>,
    #[serde(rename = "GS")]
    pub guidance_scale: Vec<f64>,
    pub alpha: Vec<f64>,
    pub lora_rank: Vec<usize>,
    pub prox: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub data: SynthConfig,
    pub extractor: ExtractorSection,
    pub ldm: LdmConfig,
    pub translator: TranslatorConfig,
    pub guidance: GuidanceConfig,
    pub alpha: f64,
    pub translate: TranslateConfig,
    pub mil: MilConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let translator = TranslatorConfig { steps: 3000, ..Default::default() };
        Self {
            seed: 0,
            paths: PathsConfig { output_root: PathBuf::from("runs/default") },
            data: SynthConfig::default(),
            extractor: ExtractorSection { name: "conv".into(), config: ExtractorConfig::default() },
            ldm: LdmConfig::default(),
            translator,
            guidance: GuidanceConfig::default(),
            alpha: 1.0,
            translate: TranslateConfig { batch_size: 32, use_translator: true },
            mil: MilConfig::default(),
            eval: EvalConfig { bag_size: 2, casefd_aggregate: Aggregate::Mean },
            sweep: SweepConfig {
                strength: vec![0.1, 0.3, 0.5, 0.7, 0.9],
                guidance_scale: vec![1.0, 2.0, 4.0, 8.0, 12.0],
                alpha: vec![0.0, 0.25, 0.5, 0.75, 1.0],
                lora_rank: vec![4, 8, 16],
                prox: vec![false, true],
            },
        }
    }
}

impl RunConfig {
    /// Reads a TOML file; missing keys fall back to defaults, unknown keys are errors.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut base = toml::Value::try_from(Self::default())?;
        let user: toml::Value = toml::from_str(text)?;
        merge(&mut base, user, "")?;
        Ok(base.try_into()?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Applies `key.path = value` overrides; values are parsed as TOML
    /// literals, falling back to strings.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = toml::Value::try_from(self)?;
        for (key, raw) in overrides {
            let parsed = parse_literal(raw);
            set_path(&mut value, key, parsed)?;
        }
        value.try_into().map_err(|e| anyhow!("invalid override: {e}"))
    }

    /// Honours the output-root environment override.
    pub fn apply_env(mut self) -> Self {
        if let Some(root) = std::env::var_os(OUTPUT_ROOT_ENV) {
            self.paths.output_root = PathBuf::from(root);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.guidance.validate().context("guidance")?;
        if !(0.0..=1.0).contains(&self.alpha) {
            bail!("alpha: must lie in [0,1], got {}", self.alpha);
        }
        if self.extractor.name != "conv" {
            bail!("extractor.name: unknown extractor `{}` (available: conv)", self.extractor.name);
        }
        if self.extractor.config.dim != self.ldm.denoiser.embedding_dim || self.extractor.config.dim != self.translator.dim {
            bail!(
                "extractor.dim ({}) must equal ldm.denoiser.embedding_dim ({}) and translator.dim ({})",
                self.extractor.config.dim,
                self.ldm.denoiser.embedding_dim,
                self.translator.dim
            );
        }
        if !self.data.image_size.is_multiple_of(self.ldm.vae.downsample) {
            bail!("data.image_size must be a multiple of ldm.vae.downsample");
        }
        if self.eval.bag_size == 0 || self.translate.batch_size == 0 {
            bail!("eval.bag_size and translate.batch_size must be positive");
        }
        Ok(())
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| anyhow!("`{}` is not a table", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            let slot = table.get_mut(*part).ok_or_else(|| anyhow!("unknown config key `{key}`"))?;
            *slot = coerce(slot, value).with_context(|| format!("override `{key}`"))?;
            return Ok(());
        }
        node = table.get_mut(*part).ok_or_else(|| anyhow!("unknown config key `{}`", parts[..=i].join(".")))?;
    }
    bail!("empty override key")
}

/// Lets `--x 12` set a float field.
fn coerce(old: &toml::Value, new: toml::Value) -> Result<toml::Value> {
    Ok(match (old, new) {
        (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (toml::Value::Array(_), toml::Value::String(s)) => bail!("expected a list, got `{s}`"),
        (_, v) => v,
    })
}

fn merge(base: &mut toml::Value, user: toml::Value, path: &str) -> Result<()> {
    match (base, user) {
        (toml::Value::Table(b), toml::Value::Table(u)) => {
            for (k, v) in u {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &key)?,
                    None => bail!("unknown config key `{key}`"),
                }
            }
        }
        (slot, v) => *slot = coerce(slot, v)?,
    }
    Ok(())
}

/// Splits trailing `--a.b value` / `--a.b=value` arguments into pairs.
pub fn parse_override_args(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let key = arg.strip_prefix("--").ok_or_else(|| anyhow!("unexpected argument `{arg}`"))?;
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().ok_or_else(|| anyhow!("override `--{key}` needs a value"))?;
                out.push((key.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}
