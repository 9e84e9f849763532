//! File-based experiment stages. Every stage reads its inputs from the run
//! directory and writes its own outputs there; timing goes to separate
//! `timings_<stage>.json` files so the other outputs stay reproducible.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use benefit_uq_core::advisor::{Clock, EstimatorKind, TuningRun};
use benefit_uq_core::evalkit::{
    evaluate_be, evaluate_uq, score_all, BeEvaluation, DatasetSplits, ExperimentSpec, Generated,
    MetricsReport, Trained, UqEvaluation,
};
use benefit_uq_core::synthdb::{Query, Schema};
use benefit_uq_core::uq::{self, FilterMode};
use serde::Serialize;

use crate::formats::{self, read_json, write_json, ModelFile};

pub const EXPERIMENT: &str = "experiment.json";
pub const SCHEMA: &str = "schema.json";
pub const WORKLOAD: &str = "workload.json";
pub const DATASET: &str = "dataset.csv";
pub const SPLITS: &str = "splits.json";
pub const MODEL: &str = "model.json";
pub const TRAINING: &str = "training.json";
pub const UNCERTAINTIES: &str = "uncertainties.csv";
pub const UQ_SUMMARY: &str = "uq_summary.json";
pub const ERRORS: &str = "errors.csv";
pub const BE_SUMMARY: &str = "be_summary.json";
pub const METRICS: &str = "metrics.json";
pub const FEATURES_RAW: &str = "features_v1.csv";
pub const FEATURES_EMBEDDED: &str = "features_v2.csv";

/// Samples per timed inference batch.
pub const TIMING_BATCH: usize = 256;

/// Wall clock for the enumerator's time limit.
#[derive(Debug, Clone, Copy)]
pub struct InstantClock(Instant);

impl InstantClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Clock for InstantClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> anyhow::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> anyhow::Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            bail!(
                "run directory {} does not exist; run `gen` first",
                root.display()
            );
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn require(&self, name: &str, producer: &str) -> anyhow::Result<PathBuf> {
        let p = self.path(name);
        if !p.is_file() {
            bail!("missing {}; run `{producer}` first", p.display());
        }
        Ok(p)
    }

    pub fn spec(&self) -> anyhow::Result<ExperimentSpec> {
        let spec: ExperimentSpec = read_json(&self.require(EXPERIMENT, "gen")?)?;
        spec.validate()
            .map_err(|e| anyhow::anyhow!("{}: {e}", EXPERIMENT))?;
        Ok(spec)
    }

    pub fn generated(&self) -> anyhow::Result<Generated> {
        let schema: Schema = read_json(&self.require(SCHEMA, "gen")?)?;
        schema.validate()?;
        let workload: Vec<Query> = read_json(&self.require(WORKLOAD, "gen")?)?;
        for q in &workload {
            q.validate(&schema)?;
        }
        let (samples, configs) = formats::read_dataset(&self.require(DATASET, "gen")?, &schema)?;
        Ok(Generated {
            schema,
            workload,
            base: Default::default(),
            configs,
            samples,
        })
    }

    pub fn splits(&self, n: usize) -> anyhow::Result<DatasetSplits> {
        let splits: DatasetSplits = read_json(&self.require(SPLITS, "gen")?)?;
        splits.labels(n)?;
        Ok(splits)
    }

    pub fn model(&self) -> anyhow::Result<ModelFile> {
        ModelFile::load(&self.require(MODEL, "train")?)
    }

    fn write_timing<T: Serialize>(&self, stage: &str, value: &T) -> anyhow::Result<()> {
        write_json(&self.path(&format!("timings_{stage}.json")), value)
    }
}

#[derive(Debug, Serialize)]
struct StageTiming {
    wall_ms: f64,
}

#[derive(Debug, Serialize)]
struct InferenceTiming {
    wall_ms: f64,
    batch_size: usize,
    batches: usize,
    mean_batch_ms: f64,
    batch_ms: Vec<f64>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// `gen`: experiment copy, schema, workload, dataset and splits.
pub fn gen(dir: &RunDir, spec: &ExperimentSpec) -> anyhow::Result<()> {
    let t = Instant::now();
    spec.validate()?;
    let g = spec.generate()?;
    let splits = spec.split(&g)?;
    write_json(&dir.path(EXPERIMENT), spec)?;
    write_json(&dir.path(SCHEMA), &g.schema)?;
    write_json(&dir.path(WORKLOAD), &g.workload)?;
    formats::write_dataset(&dir.path(DATASET), &g.schema, &g.samples)?;
    write_json(&dir.path(SPLITS), &splits)?;
    dir.write_timing(
        "gen",
        &StageTiming {
            wall_ms: ms(t.elapsed()),
        },
    )
}

#[derive(Debug, Clone, Default)]
pub struct CalibrationOverrides {
    pub alpha: Option<f64>,
    pub mode: Option<FilterMode>,
}

impl CalibrationOverrides {
    fn apply(&self, spec: &mut ExperimentSpec) -> anyhow::Result<()> {
        if let Some(a) = self.alpha {
            spec.uq.alpha = a;
        }
        if let Some(m) = self.mode {
            spec.uq.mode = m;
        }
        spec.validate()?;
        Ok(())
    }
}

/// `train`: two-phase training and calibration into `model.json`.
pub fn train(
    dir: &RunDir,
    overrides: &CalibrationOverrides,
    dump_features: bool,
) -> anyhow::Result<()> {
    let t = Instant::now();
    let mut spec = dir.spec()?;
    overrides.apply(&mut spec)?;
    let g = dir.generated()?;
    let splits = dir.splits(g.samples.len())?;
    let trained = spec.train(&g, &splits)?;
    ModelFile::new(trained.model.clone(), trained.filter.clone()).save(&dir.path(MODEL))?;
    write_json(&dir.path(TRAINING), &trained.diagnostics)?;
    if dump_features {
        let features = g
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| Ok((i, g.features(&trained.model.featurizer, s)?)))
            .collect::<anyhow::Result<Vec<_>>>()?;
        formats::write_features(&dir.path(FEATURES_RAW), &features, false)?;
        formats::write_features(&dir.path(FEATURES_EMBEDDED), &features, true)?;
    }
    dir.write_timing(
        "train",
        &StageTiming {
            wall_ms: ms(t.elapsed()),
        },
    )
}

/// `calibrate`: recomputes the thresholds of an existing model.
pub fn calibrate(dir: &RunDir, overrides: &CalibrationOverrides) -> anyhow::Result<()> {
    let mut spec = dir.spec()?;
    let file = dir.model()?;
    spec.uq.alpha = file.filter.alpha;
    spec.uq.mode = file.filter.mode;
    overrides.apply(&mut spec)?;
    let g = dir.generated()?;
    let splits = dir.splits(g.samples.len())?;
    let filter = spec.calibrate(&file.model, &g, &splits)?;
    ModelFile::new(file.model, filter).save(&dir.path(MODEL))
}

struct Loaded {
    spec: ExperimentSpec,
    g: Generated,
    splits: DatasetSplits,
    trained: Trained,
}

fn load(dir: &RunDir) -> anyhow::Result<Loaded> {
    let spec = dir.spec()?;
    let g = dir.generated()?;
    let splits = dir.splits(g.samples.len())?;
    let file = dir.model()?;
    let diagnostics = read_json(&dir.require(TRAINING, "train")?)?;
    let trained = Trained {
        model: file.model,
        filter: file.filter,
        diagnostics,
    };
    Ok(Loaded {
        spec,
        g,
        splits,
        trained,
    })
}

/// Times the configured filter's inference path in fixed-size batches.
fn time_inference(l: &Loaded) -> anyhow::Result<InferenceTiming> {
    let weights = l.spec.uq.u1_weights.as_deref();
    let with_u2 = l.trained.filter.mode == FilterMode::Hybrid;
    let total = Instant::now();
    let mut batch_ms = Vec::new();
    for chunk in l.g.samples.chunks(TIMING_BATCH) {
        let t = Instant::now();
        for s in chunk {
            let fs = l.g.features(&l.trained.model.featurizer, s)?;
            std::hint::black_box(uq::assess(&l.trained.model, &fs, weights, with_u2)?);
        }
        batch_ms.push(ms(t.elapsed()));
    }
    let mean_batch_ms = batch_ms.iter().sum::<f64>() / batch_ms.len().max(1) as f64;
    Ok(InferenceTiming {
        wall_ms: ms(total.elapsed()),
        batch_size: TIMING_BATCH,
        batches: batch_ms.len(),
        mean_batch_ms,
        batch_ms,
    })
}

fn without_rows_uq(mut e: UqEvaluation) -> UqEvaluation {
    e.rows.clear();
    e
}

fn without_rows_be(mut e: BeEvaluation) -> BeEvaluation {
    e.rows.clear();
    e
}

/// `eval-uq`: per-sample uncertainties and recall of every quantifier.
pub fn eval_uq(dir: &RunDir) -> anyhow::Result<()> {
    let t = Instant::now();
    let l = load(dir)?;
    let scores = score_all(&l.trained.model, &l.g, l.spec.uq.u1_weights.as_deref())?;
    let ensemble = l
        .spec
        .train_ensemble(&l.g, &l.splits, &l.trained.model.featurizer)?;
    let eval = evaluate_uq(
        &l.spec,
        &l.g,
        &l.splits,
        &l.trained,
        &scores,
        Some(&ensemble),
    )?;
    formats::write_uncertainties(&dir.path(UNCERTAINTIES), &eval.rows)?;
    write_json(&dir.path(UQ_SUMMARY), &without_rows_uq(eval))?;
    let inference = time_inference(&l)?;
    #[derive(Serialize)]
    struct T {
        wall_ms: f64,
        inference: InferenceTiming,
    }
    dir.write_timing(
        "eval_uq",
        &T {
            wall_ms: ms(t.elapsed()),
            inference,
        },
    )
}

/// `eval-be`: relative benefit-estimation error of each port.
pub fn eval_be(dir: &RunDir) -> anyhow::Result<()> {
    let t = Instant::now();
    let l = load(dir)?;
    let scores = score_all(&l.trained.model, &l.g, l.spec.uq.u1_weights.as_deref())?;
    let eval = evaluate_be(&l.spec, &l.g, &l.splits, &l.trained, &scores)?;
    formats::write_errors(&dir.path(ERRORS), &eval.rows)?;
    write_json(&dir.path(BE_SUMMARY), &without_rows_be(eval))?;
    dir.write_timing(
        "eval_be",
        &StageTiming {
            wall_ms: ms(t.elapsed()),
        },
    )
}

#[derive(Debug, Clone, Default)]
pub struct TuneOverrides {
    pub budgets_percent: Option<Vec<f64>>,
    pub ports: Option<Vec<EstimatorKind>>,
    pub time_limit_ms: Option<u64>,
}

/// File name of one tuning run, e.g. `tuning_model+filter_5.json`.
pub fn tuning_file(kind: EstimatorKind, budget_percent: f64) -> String {
    format!("tuning_{}_{}.json", kind.name(), budget_percent)
}

/// `tune`: one greedy run per (port, budget).
pub fn tune(dir: &RunDir, overrides: &TuneOverrides) -> anyhow::Result<()> {
    let l = load(dir)?;
    let mut spec = l.spec.clone();
    if let Some(b) = &overrides.budgets_percent {
        spec.tuning.budgets_percent = b.clone();
    }
    if let Some(p) = &overrides.ports {
        spec.tuning.ports = p.clone();
    }
    if overrides.time_limit_ms.is_some() {
        spec.tuning.time_limit_ms = overrides.time_limit_ms;
    }
    spec.validate()?;
    let runs = spec.tune(&l.g, &l.trained, &InstantClock::start())?;
    let labels: Vec<(EstimatorKind, f64)> = spec
        .tuning
        .ports
        .iter()
        .flat_map(|&k| spec.tuning.budgets_percent.iter().map(move |&b| (k, b)))
        .collect();
    let mut timings = BTreeMap::new();
    for ((kind, pct), run) in labels.into_iter().zip(&runs) {
        let name = tuning_file(kind, pct);
        write_json(&dir.path(&name), run)?;
        timings.insert(name, ms(run.wall_time));
    }
    dir.write_timing("tune", &timings)
}

/// Tuning runs present in the directory, ordered by port then budget.
pub fn tuning_runs(dir: &RunDir) -> anyhow::Result<Vec<TuningRun>> {
    let mut runs: Vec<TuningRun> = Vec::new();
    for entry in fs::read_dir(dir.root())? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.starts_with("tuning_") && name.ends_with(".json") {
            runs.push(read_json(&dir.path(&name))?);
        }
    }
    runs.sort_by(|a, b| (a.estimator, a.budget_bytes).cmp(&(b.estimator, b.budget_bytes)));
    Ok(runs)
}

/// `report`: merges the stage summaries into `metrics.json`.
pub fn report(dir: &RunDir) -> anyhow::Result<MetricsReport> {
    let l = load(dir)?;
    let uq: UqEvaluation = read_json(&dir.require(UQ_SUMMARY, "eval-uq")?)?;
    let be: BeEvaluation = read_json(&dir.require(BE_SUMMARY, "eval-be")?)?;
    let runs = tuning_runs(dir)?;
    if runs.is_empty() {
        bail!(
            "no tuning runs in {}; run `tune` first",
            dir.root().display()
        );
    }
    let report = MetricsReport::assemble(&l.g, &l.splits, &l.trained, &uq, &be, &runs)?;
    write_json(&dir.path(METRICS), &report)?;
    Ok(report)
}

/// Every stage in order.
pub fn run_all(dir: &RunDir, spec: &ExperimentSpec) -> anyhow::Result<MetricsReport> {
    gen(dir, spec)?;
    train(dir, &CalibrationOverrides::default(), false)?;
    eval_uq(dir)?;
    eval_be(dir)?;
    tune(dir, &TuneOverrides::default())?;
    report(dir)
}
