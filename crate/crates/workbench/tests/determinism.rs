use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use sha2::{Digest, Sha256};
use tempfile::TempDir;

const SMALL: &str = r#"
seed = 17
ensemble_size = 2

[workload]
queries_per_template = 8

[configs]
count = 12

[model]
hidden = 8
encoder_hidden = [16]
predictor_hidden = [16, 16]

[training.phase1]
epochs = 6

[training.phase2]
epochs = 6

[tuning]
budgets_percent = [5.0, 20.0]
"#;

/// SHA-256 of every output file except wall-clock timings.
fn digests(dir: &Path) -> BTreeMap<String, String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| !e.file_name().to_string_lossy().starts_with("timings_"))
        .map(|e| {
            let bytes = fs::read(e.path()).unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                hex::encode(Sha256::digest(&bytes)),
            )
        })
        .collect()
}

fn stage(out: &Path, args: &[&str]) {
    let o = Command::new(env!("CARGO_BIN_EXE_benefit-uq"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap();
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn every_stage_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("small.toml");
    fs::write(&config, SMALL).unwrap();
    let config = config.to_str().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let stages: [&[&str]; 6] = [
        &["gen", "--config", config],
        &["train", "--dump-features"],
        &["eval-uq"],
        &["eval-be"],
        &["tune"],
        &["report"],
    ];
    let mut seen = 0;
    for args in stages {
        stage(&a, args);
        stage(&b, args);
        let (da, db) = (digests(&a), digests(&b));
        assert_eq!(da, db, "outputs diverge after {}", args[0]);
        assert!(da.len() > seen, "{} wrote nothing", args[0]);
        seen = da.len();
    }

    // A one-shot run reproduces the staged outputs.
    let c = tmp.path().join("c");
    stage(&c, &["run", "--config", config]);
    let staged = digests(&a);
    for (name, digest) in digests(&c) {
        assert_eq!(staged.get(&name), Some(&digest), "{name}");
    }
}

#[test]
fn different_seeds_change_the_dataset() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    stage(&a, &["gen", "--seed", "1"]);
    stage(&b, &["gen", "--seed", "2"]);
    assert_ne!(digests(&a)["dataset.csv"], digests(&b)["dataset.csv"]);
}
