//! Command-line orchestration: dataset synthesis, training, translation,
//! evaluation and sweeps over a single declarative run configuration.

pub mod config;
pub mod eval;
mod plots;
pub mod stages;
pub mod sweep;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use f2f_core::synth::Split;
use f2f_core::Domain;
use log::info;

pub use config::RunConfig;
use eval::{evaluate_method, load_patch_set, write_results, MethodResult};
use stages::Workspace;
pub use sweep::{run_sweep, Axis, SweepRow};

/// Tag of the main translation run.
pub const MAIN_TAG: &str = "main";
/// Tag of the run without the embedding translator.
pub const BASELINE_TAG: &str = "no_translator";

#[derive(Debug, Parser)]
#[command(name = "f2f", version, about = "FS to FFPE translation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Redo stages whose outputs already exist.
    #[arg(long)]
    pub force: bool,
    /// Config overrides as dotted keys, e.g. `--guidance.GS 12.0`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic two-domain corpus.
    Synth(Common),
    /// Train the toy feature extractor.
    TrainExtractor(Common),
    /// Train the autoencoder, base denoiser and LoRA adapters.
    TrainLdm(Common),
    /// Train the FS/FFPE embedding translator.
    TrainTranslator(Common),
    /// Train the MIL classifier ensemble on clean cases.
    TrainMil(Common),
    /// Translate the test-split FS patches.
    Translate {
        #[arg(long, default_value = MAIN_TAG)]
        tag: String,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate translated patch sets against the clean reference.
    Eval {
        #[arg(long, default_value = MAIN_TAG)]
        tag: String,
        /// Patch-set directories to score (default: the main and no-translator runs).
        #[arg(long = "source")]
        sources: Vec<PathBuf>,
        /// Reference patch-set directory (default: clean test patches).
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Translate and evaluate over one hyperparameter axis.
    Sweep {
        /// One of S, GS, alpha, lora_rank, prox.
        #[arg(long)]
        axis: Axis,
        /// Comma-separated values (default: the config's sweep list).
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// All stages from synthesis to evaluation.
    Run(Common),
    /// Print the resolved configuration.
    ShowConfig(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth(c)
            | Command::TrainExtractor(c)
            | Command::TrainLdm(c)
            | Command::TrainTranslator(c)
            | Command::TrainMil(c)
            | Command::Run(c)
            | Command::ShowConfig(c) => c,
            Command::Translate { common, .. } | Command::Eval { common, .. } | Command::Sweep { common, .. } => common,
        }
    }
}

/// File (or defaults), then environment, then command-line overrides.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let base = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let overrides = config::parse_override_args(&common.overrides)?;
    let cfg = base.apply_env().with_overrides(&overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: Cli) -> Result<()> {
    let cfg = resolve_config(cli.command.common())?;
    let force = cli.command.common().force;
    if let Command::ShowConfig(_) = cli.command {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let ws = Workspace::new(&cfg.paths.output_root);
    stages::write_snapshot(&ws.root, &cfg)?;
    match cli.command {
        Command::Synth(_) => stages::synth(&cfg, &ws, force),
        Command::TrainExtractor(_) => stages::train_extractor(&cfg, &ws, force),
        Command::TrainLdm(_) => stages::train_ldm(&cfg, &ws, force),
        Command::TrainTranslator(_) => stages::train_translator(&cfg, &ws, force),
        Command::TrainMil(_) => stages::train_mil(&cfg, &ws, force),
        Command::Translate { tag, .. } => stages::translate(&cfg, &ws, &ws.translations(&tag), force),
        Command::Eval { tag, sources, reference, .. } => {
            let sources = if sources.is_empty() {
                default_sources(&ws)
            } else {
                sources.iter().map(|p| (p.display().to_string(), p.clone())).collect()
            };
            run_eval(&cfg, &ws, &tag, &sources, reference.as_deref(), force).map(|_| ())
        }
        Command::Sweep { axis, values, .. } => {
            let values = if values.is_empty() { axis.default_values(&cfg) } else { values };
            run_sweep(&cfg, &ws, axis, &values, force).map(|_| ())
        }
        Command::Run(_) => run_all(&cfg, &ws, force).map(|_| ()),
        Command::ShowConfig(_) => unreachable!(),
    }
}

fn default_sources(ws: &Workspace) -> Vec<(String, PathBuf)> {
    let mut out = vec![("Ours".to_string(), ws.translations(MAIN_TAG))];
    if stages::is_complete(&ws.translations(BASELINE_TAG)) {
        out.push(("No translator".to_string(), ws.translations(BASELINE_TAG)));
    }
    out
}

/// Scores each source directory; with `baselines`, clean and raw FS rows come first.
pub fn evaluate_sources(
    cfg: &RunConfig,
    ws: &Workspace,
    sources: &[(String, PathBuf)],
    reference: Option<&Path>,
    baselines: bool,
) -> Result<Vec<MethodResult>> {
    let extractor = stages::load_extractor(ws)?;
    let mil = stages::load_mil(ws)?;
    let ds = if reference.is_none() || baselines { Some(stages::load_dataset(ws)?) } else { None };
    let reference = match reference {
        Some(dir) => load_patch_set(dir).with_context(|| format!("reference {}", dir.display()))?,
        None => ds.as_ref().map(|d| d.select(Split::Test, Domain::Ffpe)).unwrap_or_default(),
    };
    let mut results = Vec::new();
    if baselines {
        let raw_fs = ds.as_ref().map(|d| d.select(Split::Test, Domain::Fs)).unwrap_or_default();
        results.push(evaluate_method("FFPE", cfg, &extractor, &mil, &reference, None)?);
        results.push(evaluate_method("Frozen Section", cfg, &extractor, &mil, &raw_fs, Some(&reference))?);
    }
    for (name, dir) in sources {
        let patches = load_patch_set(dir).with_context(|| format!("source {}", dir.display()))?;
        results.push(evaluate_method(name, cfg, &extractor, &mil, &patches, Some(&reference))?);
    }
    Ok(results)
}

/// Evaluates into `eval/<tag>`, writing JSON records and the summary table.
pub fn run_eval(
    cfg: &RunConfig,
    ws: &Workspace,
    tag: &str,
    sources: &[(String, PathBuf)],
    reference: Option<&Path>,
    force: bool,
) -> Result<Option<Vec<MethodResult>>> {
    let dir = ws.eval(tag);
    if !stages::begin(&dir, cfg, force)? {
        return Ok(None);
    }
    let results = evaluate_sources(cfg, ws, sources, reference, true)?;
    write_results(&dir, &results, &cfg.extractor.name, cfg.eval.casefd_aggregate)?;
    for r in &results {
        info!(
            "{}: AUC {:.4} ± {:.4}, Acc {:.4}, CaseFD {:?}",
            r.method,
            r.classification.auc_mean,
            r.classification.auc_std,
            r.classification.accuracy_mean,
            r.casefd_value(cfg.eval.casefd_aggregate)
        );
    }
    stages::finish(&dir)?;
    Ok(Some(results))
}

/// Synthesis through evaluation, including the no-translator baseline.
pub fn run_all(cfg: &RunConfig, ws: &Workspace, force: bool) -> Result<Option<Vec<MethodResult>>> {
    stages::synth(cfg, ws, force)?;
    stages::train_extractor(cfg, ws, force)?;
    stages::train_ldm(cfg, ws, force)?;
    stages::train_translator(cfg, ws, force)?;
    stages::train_mil(cfg, ws, force)?;
    stages::translate(cfg, ws, &ws.translations(MAIN_TAG), force)?;
    let mut base = cfg.clone();
    base.translate.use_translator = false;
    stages::translate(&base, ws, &ws.translations(BASELINE_TAG), force)?;
    run_eval(cfg, ws, MAIN_TAG, &default_sources(ws), None, force)
}
