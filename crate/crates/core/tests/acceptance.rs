//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use vqprofile::cli::manifest::RunManifest;
use vqprofile::cpd::{AlarmConfig, AlarmMethod};
use vqprofile::datagen::{
    corrupt_mcar, generate_cohort, prepare, Catalog, CohortConfig, CohortTruth, McarConfig, PrepareConfig, Prepared,
};
use vqprofile::downstream::{
    accuracy, emotion_windows, evaluate_emotion, event_roc, profile_samples, run_ablation, train_emotion_cnn,
    write_ablation_csv, AblationGrid, ClassifierSpec, DayEmbedding, EmotionWindow, EvalSplit, EventConfig,
    ProfileModel, N_CLASSES, WINDOW_DAYS,
};
use vqprofile::numkernel::AdamConfig;
use vqprofile::seed::rng_for;
use vqprofile::verify;
use vqprofile::vqmodel::{reconstruction_metrics, train, TrainConfig, Variant, VqConfig, VqModel};

const SEED: u64 = 42;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

struct Bench {
    catalog: Catalog,
    truth: CohortTruth,
    prepared: Prepared,
    model: VqModel,
}

fn cohort_config() -> CohortConfig {
    CohortConfig {
        n_patients: 20,
        min_length: 200,
        max_length: 200,
        n_regimes: 2,
        effect_size: 3.0,
        ..CohortConfig::default()
    }
}

fn bench() -> Bench {
    let catalog = Catalog::default_catalog();
    let (raw, truth) = generate_cohort(SEED, &cohort_config(), &catalog).expect("cohort");
    let prepared = prepare(&raw, &catalog, &PrepareConfig::default(), SEED).expect("prepare");
    let cfg = VqConfig {
        variant: Variant::Implicit,
        embedding_dim: 80,
        codebook_size: 32,
        ..VqConfig::default()
    };
    let mut model = VqModel::new(cfg, catalog.binary_flags(), &mut rng_for(SEED, "vq/init")).expect("model");
    let tc = TrainConfig {
        epochs: 100,
        ..TrainConfig::default()
    };
    train(&mut model, &prepared.train, &prepared.validation, &tc, SEED).expect("training");
    Bench {
        catalog,
        truth,
        prepared,
        model,
    }
}

fn suite(r: verify::SuiteReport, limit: Option<Duration>) -> (bool, String) {
    let within = limit.is_none_or(|l| r.seconds < l.as_secs_f64());
    let detail = match limit {
        Some(l) if !within => format!("{}; exceeded {}s", r.detail, l.as_secs()),
        _ => r.detail,
    };
    (r.pass && within, detail)
}

fn event_config(alpha: f64) -> EventConfig {
    EventConfig {
        profiles: 20,
        model: ProfileModel::Hierarchical,
        alpha,
        lambdas: vec![1e3],
        alarm: AlarmConfig {
            method: AlarmMethod::MapRatio,
            window: 7,
            ..AlarmConfig::default()
        },
        ..EventConfig::default()
    }
}

fn end_to_end(b: &Bench, started: Instant) -> (bool, String) {
    let all: Vec<_> = b.prepared.all().cloned().collect();
    let profiled = profile_samples(&b.model, &all, Some(&b.truth), 20).expect("profiles");
    let (_, auc) = event_roc(&profiled, &event_config(0.1), SEED).expect("roc");
    let (_, auc_alpha1) = event_roc(&profiled, &event_config(1.0), SEED).expect("roc");
    let secs = started.elapsed().as_secs_f64();
    (
        auc >= 0.90 && secs < 900.0,
        format!(
            "event AUC {auc:.3} at w=32, m=20, alpha=0.1, lambda=1e3, W=7 (alpha=1 gives {auc_alpha1:.3}); {secs:.0}s including training"
        ),
    )
}

fn dictionary_trend(b: &Bench, out: &Path) -> (bool, String) {
    let grid = AblationGrid {
        embedding_dims: vec![80],
        codebook_sizes: vec![256, 1024],
        seeds: vec![0, 1, 2],
        train: TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        },
        event: EventConfig {
            alpha: 0.1,
            ..EventConfig::default()
        },
        event_split: EvalSplit::All,
        threads: 3,
        ..AblationGrid::default()
    };
    let cells = run_ablation(&grid, &b.prepared, &b.truth, &b.catalog.binary_flags(), "acceptance").expect("ablation");
    let path = out.join("dictionary_trend.csv");
    write_ablation_csv(&path, &cells).expect("csv");
    let stats = |w: usize| {
        let v: Vec<f64> = cells.iter().filter(|c| c.codebook_size == w).map(|c| c.event_auc).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        (mean, sd)
    };
    let ((m256, s256), (m1024, s1024)) = (stats(256), stats(1024));
    let noise = 2.0 * ((s256 * s256 + s1024 * s1024) / 3.0).sqrt();
    let echoed = m1024 <= m256 + noise;
    (
        cells.len() == 6 && path.is_file(),
        format!(
            "mean AUC over lambda: w=256 {m256:.3} (sd {s256:.3}), w=1024 {m1024:.3} (sd {s1024:.3}); w=1024 {} w=256 + noise {noise:.3}; data in {}",
            if echoed { "within" } else { "exceeds" },
            path.display()
        ),
    )
}

fn imputation(b: &Bench) -> (bool, String) {
    let held: Vec<_> = b
        .prepared
        .validation
        .iter()
        .chain(&b.prepared.test)
        .map(|s| corrupt_mcar(s, &b.catalog, &McarConfig::default(), SEED).expect("corrupt"))
        .collect();
    let m = reconstruction_metrics(&b.model, &held, &b.prepared.scaler, &b.catalog).expect("metrics");
    let continuous: Vec<_> = m.iter().filter(|v| v.f1.is_none()).collect();
    let wins: Vec<&str> = continuous
        .iter()
        .filter(|v| matches!((v.mae_mcar, v.baseline_mcar), (Some(a), Some(b)) if a < b))
        .map(|v| v.name.as_str())
        .collect();
    (
        wins.len() >= 7 && continuous.len() == 8,
        format!("model MAE below median baseline on {}/{} non-binary variables", wins.len(), continuous.len()),
    )
}

fn toy_windows(n: usize, d: usize) -> Vec<EmotionWindow> {
    let mut rng = rng_for(SEED, "acceptance/toy");
    (0..n)
        .map(|i| EmotionWindow {
            patient_id: format!("toy{i}"),
            day: i as u32,
            rows: (0..WINDOW_DAYS).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            label: (i % N_CLASSES) as u8,
        })
        .collect()
}

fn emotion(b: &Bench) -> (bool, String) {
    let toy = toy_windows(50, 16);
    let spec = ClassifierSpec {
        conv_dropout: 0.0,
        linear_dropout: 0.0,
        validation_fraction: 0.0,
        weight_decay: 0.0,
        max_epochs: 300,
        patience: 300,
        batch_size: 10,
        ..ClassifierSpec::default()
    };
    let (m, _) = train_emotion_cnn(&toy, &spec, SEED).expect("toy training");
    let labels: Vec<usize> = toy.iter().map(|w| w.label as usize).collect();
    let toy_acc = accuracy(&m.predict(&toy).expect("predict"), &labels);

    let tr = profile_samples(&b.model, &b.prepared.train, Some(&b.truth), 20).expect("profiles");
    let te = profile_samples(&b.model, &b.prepared.test, Some(&b.truth), 20).expect("profiles");
    let train_w = emotion_windows(&tr, &b.truth, &b.model.codebook, DayEmbedding::Hard).expect("windows");
    let test_w = emotion_windows(&te, &b.truth, &b.model.codebook, DayEmbedding::Hard).expect("windows");
    let out = evaluate_emotion(&train_w, &test_w, &ClassifierSpec::default(), SEED).expect("emotion");
    (
        toy_acc == 1.0 && out.weighted_auc >= 0.85,
        format!(
            "toy train accuracy {toy_acc:.2}; cohort weighted AUC {:.3} ({} train / {} test windows)",
            out.weighted_auc,
            train_w.len(),
            test_w.len()
        ),
    )
}

fn run_cli(root: &Path) -> Vec<RunManifest> {
    let status = Command::new(env!("CARGO_BIN_EXE_vqprofile"))
        .args(["--seed", "7", "--out"])
        .arg(root)
        .args([
            "--set",
            "synth.n_patients=8",
            "--set",
            "synth.label_sparsity=0.5",
            "--set",
            "train_vq.model.codebook_size=32",
            "--set",
            "train_vq.train.epochs=4",
            "--set",
            "emotion.classifier.max_epochs=5",
            "all",
        ])
        .output()
        .expect("spawn cli");
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    ["cohort", "prepared", "model", "profiles", "cpd", "events", "emotion", "report"]
        .iter()
        .map(|s| RunManifest::read(&root.join(s)).expect("manifest"))
        .collect()
}

fn determinism(out: &Path) -> (bool, String) {
    let (a, b) = (out.join("run_a"), out.join("run_b"));
    for d in [&a, &b] {
        let _ = std::fs::remove_dir_all(d);
    }
    let (ma, mb) = (run_cli(&a), run_cli(&b));
    let mut differing = Vec::new();
    let mut files = 0;
    for (x, y) in ma.iter().zip(&mb) {
        if x.metrics != y.metrics {
            differing.push(format!("{} metrics", x.command));
        }
        for (k, h) in &x.outputs {
            if k.ends_with("config.toml") {
                continue;
            }
            files += 1;
            if y.outputs.get(k) != Some(h) {
                differing.push(k.clone());
            }
        }
    }
    (
        differing.is_empty(),
        if differing.is_empty() {
            format!("8 stages, {files} artifacts and all metrics identical across two runs")
        } else {
            format!("differences: {}", differing.join(", "))
        },
    )
}

fn hyperparameters() -> (bool, String) {
    let vq = VqConfig::default();
    let tc = TrainConfig::default();
    let c = ClassifierSpec::default();
    let adam = AdamConfig::default();
    let checks = [
        ("beta 0.25", vq.beta == 0.25),
        ("restart threshold 0.1", vq.restart_threshold == 0.1),
        ("gradient clip 2.0", tc.clip_norm == 2.0),
        ("lr 1e-3", tc.lr == 1e-3 && adam.lr == 1e-3),
        ("plateau 0.1 / 10", tc.plateau_factor == 0.1 && tc.plateau_patience == 10),
        ("classifier channels 32, 64", c.conv_channels == [32, 64]),
        ("classifier hidden 128", c.hidden == 128),
        ("classifier dropout 0.25 / 0.1", c.conv_dropout == 0.25 && c.linear_dropout == 0.1),
        ("classifier batch 64, 100 epochs, patience 10", c.batch_size == 64 && c.max_epochs == 100 && c.patience == 10),
        ("classifier lr 1e-3, decay 1e-3", c.lr == 1e-3 && c.weight_decay == 1e-3),
        ("classifier validation 0.3", c.validation_fraction == 0.3),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    (
        failed.is_empty(),
        if failed.is_empty() { format!("{} defaults checked", checks.len()) } else { format!("mismatched: {}", failed.join(", ")) },
    )
}

fn main() {
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&out).expect("output dir");
    let mut outcomes = Vec::new();
    let mut record = |id: usize, name: &'static str, f: &mut dyn FnMut() -> (bool, String)| {
        let t = Instant::now();
        let (pass, detail) = f();
        let o = Outcome {
            id,
            name,
            pass,
            detail,
            elapsed: t.elapsed(),
        };
        println!(
            "{} [{}] {}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail,
            o.elapsed.as_secs_f64()
        );
        outcomes.push(o);
    };

    record(1, "CPD oracle equivalence", &mut || {
        suite(verify::bocpd_oracle_suite(50, 8, &[10.0, 1e3], SEED), Some(Duration::from_secs(60)))
    });
    record(2, "gradient fidelity", &mut || suite(verify::gradient_suite(0..20, 1e-4), Some(Duration::from_secs(120))));
    record(3, "quantizer correctness", &mut || {
        suite(verify::quantizer_suite(100_000, &[256, 512, 1024], 16, SEED), None)
    });
    record(4, "zero-imputation invariance", &mut || suite(verify::zero_imputation_suite(SEED), None));
    let started = Instant::now();
    let b = bench();
    record(5, "synthetic end-to-end detection", &mut || end_to_end(&b, started));
    record(6, "dictionary-size trend probe", &mut || dictionary_trend(&b, &out));
    record(7, "imputation sanity", &mut || imputation(&b));
    record(8, "emotion classifier", &mut || emotion(&b));
    record(9, "CLI determinism", &mut || determinism(&out));
    record(10, "hyperparameter fidelity", &mut hyperparameters);

    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
