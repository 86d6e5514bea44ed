use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use vqprofile::cli::manifest::RunManifest;

const SMALL: &[&str] = &[
    "--set",
    "synth.n_patients=6",
    "--set",
    "synth.min_length=90",
    "--set",
    "synth.max_length=90",
    "--set",
    "synth.label_sparsity=0.5",
    "--set",
    "train_vq.model.codebook_size=16",
    "--set",
    "train_vq.model.embedding_dim=16",
    "--set",
    "train_vq.train.epochs=2",
    "--set",
    "emotion.classifier.max_epochs=3",
];

fn cli(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vqprofile"))
        .args(["--seed", "3", "--out"])
        .arg(root)
        .args(SMALL)
        .args(args)
        .output()
        .expect("spawn vqprofile")
}

fn scratch(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&p);
    p
}

fn stderr_record(o: &Output) -> Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().rev().find(|l| l.starts_with('{')).expect("json record on stderr");
    serde_json::from_str(line).unwrap()
}

fn pipeline() -> &'static Path {
    static ROOT: OnceLock<PathBuf> = OnceLock::new();
    ROOT.get_or_init(|| {
        let root = scratch("pipeline");
        let o = cli(&["all"], &root);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        root
    })
}

#[test]
fn all_writes_every_stage_and_an_auc_file() {
    let root = pipeline();
    for s in ["cohort", "prepared", "model", "profiles", "cpd", "events", "emotion", "report"] {
        let m = RunManifest::read(&root.join(s)).unwrap();
        assert_eq!(m.seed, 3);
        assert!(!m.outputs.is_empty(), "{s}");
    }
    let auc: Value = serde_json::from_str(&std::fs::read_to_string(root.join("events/auc.json")).unwrap()).unwrap();
    let per = auc["per_lambda"].as_array().unwrap();
    assert!(!per.is_empty());
    assert!(root.join("report/roc_points.csv").exists());
}

#[test]
fn same_seed_reproduces_outputs() {
    let a = pipeline();
    let b = scratch("repeat");
    let o = cli(&["all"], &b);
    assert!(o.status.success());
    for s in ["cohort", "model", "profiles", "cpd", "events", "emotion"] {
        let (x, y) = (RunManifest::read(&a.join(s)).unwrap(), RunManifest::read(&b.join(s)).unwrap());
        assert_eq!(x.metrics, y.metrics, "{s}");
        for (k, h) in &x.outputs {
            if !k.ends_with("config.toml") {
                assert_eq!(y.outputs.get(k), Some(h), "{k}");
            }
        }
    }
}

#[test]
fn replay_matches_recorded_runs() {
    let o = Command::new(env!("CARGO_BIN_EXE_vqprofile"))
        .args(["verify", "--replay"])
        .arg(pipeline())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<Value> =
        String::from_utf8_lossy(&o.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(lines.len() >= 7);
    assert!(lines.iter().all(|l| l["pass"] == true));
}

#[test]
fn unknown_key_exits_two_with_its_path() {
    let o = cli(&["--set", "train_vq.train.epochz=3", "config"], &scratch("unknown"));
    assert_eq!(o.status.code(), Some(2));
    let rec = stderr_record(&o);
    assert_eq!(rec["error"], "config");
    assert!(rec["diagnostics"][0]["key"].as_str().unwrap().starts_with("train_vq.train"));
}

#[test]
fn invalid_value_exits_two() {
    let o = cli(&["--set", "cpd.lambdas=[0.5]", "config"], &scratch("invalid"));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_record(&o)["diagnostics"][0]["key"], "cpd");
}

#[test]
fn missing_input_exits_one() {
    let o = cli(&["profile"], &scratch("missing"));
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_record(&o)["error"], "runtime");
}

#[test]
fn report_lists_missing_sources() {
    let root = scratch("partial");
    for stage in ["synth", "preprocess", "train-vq"] {
        assert!(cli(&[stage], &root).status.success(), "{stage}");
    }
    let o = cli(&["report"], &root);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = RunManifest::read(&root.join("report")).unwrap();
    let missing: Vec<&str> = m.metrics["missing"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(missing.contains(&"events/roc.json"));
    assert!(missing.contains(&"emotion/metrics.json"));
    assert!(!missing.contains(&"model/training.csv"));
}

#[test]
fn config_prints_effective_values() {
    let o = cli(&["--set", "cpd.alpha=0.5", "config"], &scratch("config"));
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().any(|l| l == "seed = 3"), "{text}");
    assert!(text.lines().any(|l| l == "alpha = 0.5"), "{text}");
}
