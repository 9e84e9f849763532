use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use benefit_uq::formats::ModelFile;
use benefit_uq::pipeline::{self, RunDir};
use benefit_uq_core::advisor::{EstimatorKind, TuningRun};
use benefit_uq_core::uq::FilterMode;
use tempfile::TempDir;

const SMALL: &str = r#"
seed = 5
ensemble_size = 2

[workload]
templates = 8
queries_per_template = 8

[configs]
count = 12

[model]
hidden = 8
encoder_hidden = [16]
predictor_hidden = [16, 16]

[training.phase1]
epochs = 8

[training.phase2]
epochs = 8
"#;

fn cli(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_benefit-uq"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = cli(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn small_config(dir: &TempDir) -> String {
    let path = dir.path().join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_with_defaults_creates_missing_dir_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("nested/run_a");
    let b = tmp.path().join("run_b");
    ok(&a, &["gen"]);
    ok(&b, &["gen"]);
    for f in [pipeline::SCHEMA, pipeline::WORKLOAD, pipeline::DATASET] {
        assert!(fs::metadata(a.join(f)).unwrap().len() > 0, "{f} empty");
    }
    assert_eq!(
        fs::read(a.join(pipeline::DATASET)).unwrap(),
        fs::read(b.join(pipeline::DATASET)).unwrap()
    );
}

#[test]
fn train_round_trips_and_honours_u1_only() {
    let tmp = TempDir::new().unwrap();
    let config = small_config(&tmp);
    let out = tmp.path().join("run");
    ok(&out, &["gen", "--config", &config]);
    ok(&out, &["train", "--u1-only"]);

    let dir = RunDir::open(&out).unwrap();
    let spec = dir.spec().unwrap();
    assert_eq!(spec.uq.alpha, 1.3);
    let g = dir.generated().unwrap();
    let splits = dir.splits(g.samples.len()).unwrap();
    let in_memory = spec.train(&g, &splits).unwrap();
    let loaded = ModelFile::load(&dir.path(pipeline::MODEL)).unwrap();
    assert_eq!(loaded.model, in_memory.model);
    assert_eq!(loaded.filter.mode, FilterMode::U1Only);
    assert!(loaded.filter.theta1().is_some());

    ok(&out, &["eval-uq"]);
    let csv = fs::read_to_string(out.join(pipeline::UNCERTAINTIES)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sample_id,yhat,u1,u2,flag_u1,flag_u2,source"
    );
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[3], "", "u2 must be unset in u1-only mode: {line}");
        assert_eq!(cols[5], "false");
    }

    ok(&out, &["calibrate", "--hybrid", "--alpha", "1.1"]);
    let recal = ModelFile::load(&dir.path(pipeline::MODEL)).unwrap();
    assert_eq!(recal.filter.mode, FilterMode::Hybrid);
    assert_eq!(recal.filter.alpha, 1.1);
    assert!(recal.filter.theta2().is_some());
    assert_eq!(recal.model, loaded.model);
}

#[test]
fn tune_writes_one_trace_per_port_and_budget() {
    let tmp = TempDir::new().unwrap();
    let config = small_config(&tmp);
    let out = tmp.path().join("run");
    ok(&out, &["gen", "--config", &config]);
    ok(&out, &["train"]);
    ok(&out, &["tune", "--budgets", "5,10,20"]);
    let dir = RunDir::open(&out).unwrap();
    let total = dir.generated().unwrap().schema.total_bytes() as f64;
    let runs: Vec<TuningRun> = pipeline::tuning_runs(&dir).unwrap();
    assert_eq!(runs.len(), 12);
    for kind in EstimatorKind::ALL {
        let mine: Vec<&TuningRun> = runs.iter().filter(|r| r.estimator == kind).collect();
        assert_eq!(mine.len(), 3, "{kind:?}");
        let budgets: Vec<u64> = mine.iter().map(|r| r.budget_bytes).collect();
        let expected: Vec<u64> = [5.0, 10.0, 20.0]
            .iter()
            .map(|p| (total * p / 100.0).floor() as u64)
            .collect();
        assert_eq!(budgets, expected);
        for r in mine {
            assert!(r.chosen_size_bytes <= r.budget_bytes);
            assert!(r.improvement.is_some());
        }
    }
    assert!(out.join(pipeline::tuning_file(EstimatorKind::ModelFilter, 10.0)).exists());

    ok(&out, &["tune", "--budgets", "7", "--ports", "oracle,model+filter"]);
    assert!(out.join(pipeline::tuning_file(EstimatorKind::Oracle, 7.0)).exists());
    assert!(!out.join(pipeline::tuning_file(EstimatorKind::Model, 7.0)).exists());
}

#[test]
fn validation_failures_exit_nonzero_with_a_message() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[uq]\nalpha = 2.0\n").unwrap();
    let o = cli(&tmp.path().join("run"), &["gen", "--config", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("uq.alpha"), "{err}");

    let typo = tmp.path().join("typo.json");
    fs::write(&typo, r#"{"workload": {"templatez": 3}}"#).unwrap();
    let o = cli(&tmp.path().join("run"), &["gen", "--config", typo.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("templatez"));

    let o = cli(&tmp.path().join("missing"), &["train"]);
    assert!(!o.status.success());
    assert!(!o.stderr.is_empty());

    let o = cli(&tmp.path().join("run"), &["tune", "--ports", "magic"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
}
