use std::path::Path;

use clap::Parser;
use f2f_cli::config::{parse_override_args, RunConfig};
use f2f_cli::eval::load_patch_set;
use f2f_cli::stages::{self, Workspace};
use f2f_cli::{evaluate_sources, run_all, run_sweep, Axis, Cli, BASELINE_TAG, MAIN_TAG};
use f2f_core::synth::Split;
use f2f_core::Domain;

const TINY: &str = r#"
[data]
cases_per_class = 6
patches_per_case = 8
[extractor]
epochs = 2
[ldm.vae]
epochs = 1
[ldm.base]
steps = 10
[ldm.lora.stage]
steps = 5
[translator]
steps = 10
[mil]
folds = 3
epochs = 3
[guidance]
T_inference = 6
"#;

fn tiny(root: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml(TINY).unwrap();
    cfg.paths.output_root = root.to_path_buf();
    cfg
}

#[test]
fn config_rejects_unknown_keys_and_applies_overrides() {
    assert!(RunConfig::from_toml("[guidance]\nbogus = 1\n").is_err());
    assert!(RunConfig::from_toml("nonsense = true\n").is_err());
    let cfg = RunConfig::from_toml("[guidance]\nGS = 2.0\n").unwrap();
    assert_eq!(cfg.guidance.guidance_scale, 2.0);

    let args: Vec<String> = ["--guidance.GS", "12", "--alpha=0.25", "--sweep.S", "[0.3, 0.5]"].map(String::from).into();
    let pairs = parse_override_args(&args).unwrap();
    let cfg = cfg.with_overrides(&pairs).unwrap();
    assert_eq!(cfg.guidance.guidance_scale, 12.0);
    assert_eq!(cfg.alpha, 0.25);
    assert_eq!(cfg.sweep.strength, vec![0.3, 0.5]);
    assert!(cfg.with_overrides(&[("guidance.nope".into(), "1".into())]).is_err());
    assert!(cfg.with_overrides(&[("alpha".into(), "\"text\"".into())]).is_err());
    assert!(cfg.with_overrides(&[("alpha".into(), "1.5".into())]).unwrap().validate().is_err());

    let snapshot = cfg.to_toml().unwrap();
    assert_eq!(RunConfig::from_toml(&snapshot).unwrap(), cfg);
}

#[test]
fn command_line_parses_trailing_overrides() {
    let cli = Cli::try_parse_from(["f2f", "sweep", "--axis", "S", "--values", "0.3,0.5", "--force", "--guidance.GS", "2"]).unwrap();
    match cli.command {
        f2f_cli::Command::Sweep { axis, values, common, .. } => {
            assert_eq!(axis, Axis::Strength);
            assert_eq!(values, vec!["0.3", "0.5"]);
            assert!(common.force);
            assert_eq!(common.overrides, vec!["--guidance.GS", "2"]);
        }
        other => panic!("parsed {other:?}"),
    }
    assert!(Cli::try_parse_from(["f2f", "sweep", "--axis", "Q"]).is_err());
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn smoke_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    let ws = Workspace::new(tmp.path());
    let results = run_all(&cfg, &ws, false).unwrap().expect("fresh run evaluates");
    let names: Vec<&str> = results.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(names, ["FFPE", "Frozen Section", "Ours", "No translator"]);
    let table = std::fs::read_to_string(ws.eval(MAIN_TAG).join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.starts_with("method,AUC,AUC_std,Acc,Acc_std,CaseFD_conv\n"));
    let records: serde_json::Value = serde_json::from_slice(&read(&ws.eval(MAIN_TAG).join("metrics.json"))).unwrap();
    let first = &records.as_array().unwrap()[0];
    for key in ["metric", "extractor", "case_id", "value"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert!(ws.root.join(stages::SNAPSHOT).exists() || ws.data().join(stages::SNAPSHOT).exists());

    // Completed stages are skipped unless forced.
    let before = read(&ws.translations(MAIN_TAG).join("records.jsonl"));
    let stamp = std::fs::metadata(ws.extractor().join("extractor.safetensors")).unwrap().modified().unwrap();
    assert!(run_all(&cfg, &ws, false).unwrap().is_none());
    assert_eq!(std::fs::metadata(ws.extractor().join("extractor.safetensors")).unwrap().modified().unwrap(), stamp);
    assert_eq!(read(&ws.translations(MAIN_TAG).join("records.jsonl")), before);

    // Zero strength is a pure autoencoder round trip.
    let mut zero = cfg.clone();
    zero.guidance.strength = 0.0;
    let zdir = ws.translations("s0");
    stages::translate(&zero, &ws, &zdir, false).unwrap();
    let ds = stages::load_dataset(&ws).unwrap();
    let fs = ds.select(Split::Test, Domain::Fs);
    let ldm = stages::load_ldm(&ws, cfg.ldm.lora.rank).unwrap();
    let round_trip = ldm.decode(&ldm.encode(&fs).unwrap()).unwrap();
    let translated = load_patch_set(&zdir).unwrap();
    for (t, r) in translated.iter().zip(&round_trip) {
        let q: Vec<u8> = r.iter().map(|v| f2f_core::io::quantize(*v)).collect();
        let got: Vec<u8> = t.pixels.iter().map(|v| f2f_core::io::quantize(*v)).collect();
        assert_eq!(got, q, "{}", t.patch_id);
    }

    // Identical source and reference directories give zero CaseFD.
    let same = evaluate_sources(&cfg, &ws, &[("self".into(), zdir.clone())], Some(&zdir), false).unwrap();
    let fd = same[0].casefd.as_ref().unwrap();
    assert!(fd.per_case.values().all(|v| v.abs() <= 1e-6), "{:?}", fd.per_case);

    // Sweep: failing points are recorded, alpha = 0 equals the no-translator run.
    let rows = run_sweep(&cfg, &ws, Axis::Alpha, &["0".into(), "1.5".into(), "1".into()], false).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].error.is_none() && rows[2].error.is_none());
    assert!(rows[1].error.is_some() && rows[1].auc.is_none());
    let sdir = ws.sweep("alpha");
    let csv = std::fs::read_to_string(sdir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    for metric in ["AUC", "Acc", "CaseFD_conv"] {
        assert!(sdir.join(format!("{metric}.svg")).exists(), "{metric}");
    }
    let a0 = load_patch_set(&sdir.join("alpha=0").join("translation")).unwrap();
    let base = load_patch_set(&ws.translations(BASELINE_TAG)).unwrap();
    assert_eq!(a0, base);
}
