//! End-to-end experiment stages over in-memory data.
//!
//! Each stage is a pure function of the experiment description and the
//! outputs of earlier stages; the workbench crate persists them.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use super::baselines::{Ensemble, Method, DEFAULT_ENSEMBLE_SIZE};
use super::dataset::{
    build_dataset, generate_configs, split_ood, trainable, ConfigSpec, DatasetSplits, Sample,
    Split, SplitSpec,
};
use super::metrics::{
    be_error, gather, unreliable_recall, unreliable_threshold, ErrorSummary, Recall,
};
use crate::advisor::{
    candidate_indexes, enumerate_greedy, improvement, Clock, EstimatorKind, GreedyParams,
    ModelPort, OraclePort, TuningRun, WhatIfPort,
};
use crate::estimator::{
    EstimatorConfig, EstimatorModel, Example, TrainingDiagnostics, TwoPhaseConfig,
};
use crate::featurize::{vocabulary_of, FeatureSet, Featurizer};
use crate::hashing::hash_words;
use crate::stats;
use crate::synthdb::{
    generate_schema, generate_workload, ColumnRef, CostOracle, CostOracleParams, IndexConfig,
    Query, Schema, SchemaSpec, WhatIf, WhatIfParams, WorkloadSpec,
};
use crate::uq::{
    self, calibrate, Assessment, Calibration, FilterConfig, FilterMode, Source, DEFAULT_ALPHA,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UqSpec {
    pub alpha: f64,
    pub mode: FilterMode,
    /// Per-coordinate weights for `U1`; uniform when absent.
    pub u1_weights: Option<Vec<f64>>,
}

impl Default for UqSpec {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            mode: FilterMode::Hybrid,
            u1_weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningSpec {
    /// Budgets as percentages of the total table bytes.
    pub budgets_percent: Vec<f64>,
    pub ports: Vec<EstimatorKind>,
    pub candidate_width: usize,
    pub time_limit_ms: Option<u64>,
}

impl Default for TuningSpec {
    fn default() -> Self {
        Self {
            budgets_percent: alloc::vec![5.0, 10.0, 20.0],
            ports: EstimatorKind::ALL.to_vec(),
            candidate_width: 2,
            time_limit_ms: None,
        }
    }
}

/// Complete description of one seeded experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub schema: SchemaSpec,
    pub workload: WorkloadSpec,
    pub oracle: CostOracleParams,
    pub whatif: WhatIfParams,
    pub configs: ConfigSpec,
    pub split: SplitSpec,
    pub model: EstimatorConfig,
    pub training: TwoPhaseConfig,
    pub uq: UqSpec,
    pub ensemble_size: usize,
    pub tuning: TuningSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            schema: SchemaSpec::default(),
            workload: WorkloadSpec::default(),
            oracle: CostOracleParams::default(),
            whatif: WhatIfParams::default(),
            configs: ConfigSpec::default(),
            split: SplitSpec::default(),
            model: EstimatorConfig::default(),
            training: TwoPhaseConfig::default(),
            uq: UqSpec::default(),
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            tuning: TuningSpec::default(),
        }
    }
}

mod tag {
    pub const SCHEMA: u64 = 1;
    pub const WORKLOAD: u64 = 2;
    pub const CONFIGS: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const MODEL: u64 = 6;
    pub const ENSEMBLE: u64 = 7;
    pub const ORACLE: u64 = 8;
    pub const WHATIF: u64 = 9;
    pub const TRAIN: u64 = 10;
}

/// Checks that would otherwise surface deep inside a stage. Field names in
/// messages follow the serialized layout.
impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::InvalidArgument(format!("{field}: {msg}")));
        if !(1.0..=1.5).contains(&self.uq.alpha) {
            return bad("uq.alpha", "must lie in [1, 1.5]");
        }
        if self.ensemble_size < 2 {
            return bad("ensemble_size", "must be at least 2");
        }
        if self.tuning.budgets_percent.is_empty() {
            return bad("tuning.budgets_percent", "must not be empty");
        }
        if self
            .tuning
            .budgets_percent
            .iter()
            .any(|b| !(*b > 0.0 && *b <= 100.0))
        {
            return bad("tuning.budgets_percent", "each budget must lie in (0, 100]");
        }
        if self.tuning.ports.is_empty() {
            return bad("tuning.ports", "must not be empty");
        }
        if !(1..=2).contains(&self.tuning.candidate_width) {
            return bad("tuning.candidate_width", "must be 1 or 2");
        }
        if !(1..=2).contains(&self.configs.max_width) {
            return bad("configs.max_width", "must be 1 or 2");
        }
        if self.oracle.noise_sigma < 0.0 || self.oracle.noise_sigma.is_nan() {
            return bad("oracle.noise_sigma", "must be nonnegative");
        }
        if self.whatif.error_sigma < 0.0 || self.whatif.error_sigma.is_nan() {
            return bad("whatif.error_sigma", "must be nonnegative");
        }
        if let Some(w) = &self.uq.u1_weights {
            if w.len() != crate::featurize::RAW_DIM || w.iter().any(|x| !(*x >= 0.0)) {
                return bad(
                    "uq.u1_weights",
                    "needs one nonnegative weight per raw feature",
                );
            }
        }
        self.split
            .validate()
            .or_else(|e| bad("split", &e.to_string()))?;
        self.training
            .phase1
            .validate()
            .or_else(|e| bad("training.phase1", &e.to_string()))?;
        self.training
            .phase2
            .validate()
            .or_else(|e| bad("training.phase2", &e.to_string()))?;
        Ok(())
    }

    pub fn derived_seed(&self, tag: u64) -> u64 {
        hash_words(&[self.seed, tag])
    }

    pub fn oracle_params(&self) -> CostOracleParams {
        CostOracleParams {
            seed: hash_words(&[self.seed, tag::ORACLE, self.oracle.seed]),
            ..self.oracle
        }
    }

    pub fn whatif_params(&self) -> WhatIfParams {
        WhatIfParams {
            seed: hash_words(&[self.seed, tag::WHATIF, self.whatif.seed]),
            ..self.whatif
        }
    }

    pub fn generate(&self) -> Result<Generated> {
        self.validate()?;
        let schema = generate_schema(&self.schema, self.derived_seed(tag::SCHEMA))?;
        let workload =
            generate_workload(&schema, &self.workload, self.derived_seed(tag::WORKLOAD))?;
        let configs = generate_configs(
            &workload,
            &schema,
            &self.configs,
            self.derived_seed(tag::CONFIGS),
        )?;
        let base = IndexConfig::empty();
        let oracle = CostOracle::new(&schema, self.oracle_params())?;
        let samples = build_dataset(
            &oracle,
            &workload,
            &base,
            &configs,
            self.derived_seed(tag::NOISE),
        )?;
        Ok(Generated {
            schema,
            workload,
            base,
            configs,
            samples,
        })
    }

    pub fn split(&self, g: &Generated) -> Result<DatasetSplits> {
        split_ood(
            &g.samples,
            &g.workload,
            &self.split,
            self.derived_seed(tag::SPLIT),
        )
    }

    /// Featurizer whose column vocabulary comes from the training records.
    pub fn featurizer(&self, g: &Generated, splits: &DatasetSplits) -> Result<Featurizer> {
        let train_queries = splits
            .d_train
            .iter()
            .map(|&i| g.query(g.samples[i].query_id))
            .collect::<Result<Vec<_>>>()?;
        let vocabulary = vocabulary_of(train_queries, &g.schema)?;
        let slots = g
            .workload
            .iter()
            .map(|q| q.predicates.len())
            .max()
            .ok_or(Error::Empty("workload"))?;
        Featurizer::new(slots, vocabulary)
    }

    fn train_configs(&self) -> TwoPhaseConfig {
        let mut cfg = self.training.clone();
        cfg.phase1.seed = hash_words(&[self.seed, tag::TRAIN, cfg.phase1.seed]);
        cfg.phase2.seed = hash_words(&[self.seed, tag::TRAIN, cfg.phase2.seed]);
        cfg
    }

    /// Two-phase training on nonnegative-benefit training records, then
    /// calibration on all training records.
    pub fn train(&self, g: &Generated, splits: &DatasetSplits) -> Result<Trained> {
        let featurizer = self.featurizer(g, splits)?;
        let ids = trainable(&g.samples, &splits.d_train);
        let data = examples(&featurizer, g, &ids)?;
        let mut model =
            EstimatorModel::new(featurizer, &self.model, self.derived_seed(tag::MODEL))?;
        let diagnostics = model.train_two_phase(&data, &self.train_configs())?;
        let filter = self.calibrate(&model, g, splits)?;
        Ok(Trained {
            model,
            filter,
            diagnostics,
        })
    }

    /// Thresholds from the training-set uncertainties. `U2` is always
    /// calibrated so the same model can be evaluated in either mode.
    pub fn calibrate(
        &self,
        model: &EstimatorModel,
        g: &Generated,
        splits: &DatasetSplits,
    ) -> Result<FilterConfig> {
        let scores = score(
            model,
            g,
            &splits.d_train,
            self.uq.u1_weights.as_deref(),
            true,
        )?;
        let u1: Vec<f64> = scores.iter().map(|a| a.u1).collect();
        let u2: Vec<f64> = scores.iter().map(|a| a.u2.unwrap_or(0.0)).collect();
        FilterConfig::calibrated(self.uq.alpha, self.uq.mode, &u1, Some(&u2))
    }

    pub fn train_ensemble(
        &self,
        g: &Generated,
        splits: &DatasetSplits,
        featurizer: &Featurizer,
    ) -> Result<Ensemble> {
        let ids = trainable(&g.samples, &splits.d_train);
        let data = examples(featurizer, g, &ids)?;
        Ensemble::train(
            featurizer,
            &self.model,
            &self.train_configs().phase1,
            &data,
            self.ensemble_size,
            self.derived_seed(tag::ENSEMBLE),
        )
    }

    pub fn budgets(&self, schema: &Schema) -> Vec<(f64, u64)> {
        let total = schema.total_bytes() as f64;
        self.tuning
            .budgets_percent
            .iter()
            .map(|&p| (p, libm::floor(total * p / 100.0) as u64))
            .collect()
    }

    /// One greedy run per `(port, budget)`, port-major.
    pub fn tune(
        &self,
        g: &Generated,
        trained: &Trained,
        clock: &dyn Clock,
    ) -> Result<Vec<TuningRun>> {
        let oracle = CostOracle::new(&g.schema, self.oracle_params())?;
        let whatif = WhatIf::new(oracle, self.whatif_params())?;
        let candidates = candidate_indexes(&g.workload, &g.schema, self.tuning.candidate_width)?;
        let time_limit = self.tuning.time_limit_ms.map(Duration::from_millis);
        let weights = self.uq.u1_weights.as_deref();
        let mut runs = Vec::new();
        for &kind in &self.tuning.ports {
            for (pct, bytes) in self.budgets(&g.schema) {
                let params = GreedyParams {
                    budget_bytes: bytes,
                    time_limit,
                };
                let mut run = match kind {
                    EstimatorKind::Oracle => {
                        let port = OraclePort { oracle };
                        enumerate_greedy(
                            &g.schema,
                            &g.workload,
                            &g.base,
                            &candidates,
                            params,
                            &port,
                            clock,
                        )?
                    }
                    EstimatorKind::Whatif => {
                        let port = WhatIfPort { whatif };
                        enumerate_greedy(
                            &g.schema,
                            &g.workload,
                            &g.base,
                            &candidates,
                            params,
                            &port,
                            clock,
                        )?
                    }
                    EstimatorKind::Model => {
                        let port = ModelPort {
                            u1_weights: weights,
                            ..ModelPort::plain(&trained.model, oracle)
                        };
                        enumerate_greedy(
                            &g.schema,
                            &g.workload,
                            &g.base,
                            &candidates,
                            params,
                            &port,
                            clock,
                        )?
                    }
                    EstimatorKind::ModelFilter => {
                        let port = ModelPort {
                            u1_weights: weights,
                            ..ModelPort::filtered(&trained.model, oracle, &trained.filter, whatif)
                        };
                        enumerate_greedy(
                            &g.schema,
                            &g.workload,
                            &g.base,
                            &candidates,
                            params,
                            &port,
                            clock,
                        )?
                    }
                };
                run.improvement = Some(improvement(&g.workload, &g.base, &run.chosen, &oracle)?);
                run.budget_percent = Some(pct);
                runs.push(run);
            }
        }
        Ok(runs)
    }
}

/// Output of the generation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub schema: Schema,
    pub workload: Vec<Query>,
    pub base: IndexConfig,
    pub configs: Vec<IndexConfig>,
    pub samples: Vec<Sample>,
}

impl Generated {
    pub fn query(&self, id: u32) -> Result<&Query> {
        self.workload
            .get(id as usize)
            .filter(|q| q.id == id)
            .or_else(|| self.workload.iter().find(|q| q.id == id))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown query {id}")))
    }

    pub fn features(&self, featurizer: &Featurizer, sample: &Sample) -> Result<FeatureSet> {
        featurizer.extract(
            self.query(sample.query_id)?,
            &self.base,
            &sample.config,
            &self.schema,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trained {
    pub model: EstimatorModel,
    pub filter: FilterConfig,
    pub diagnostics: TrainingDiagnostics,
}

pub fn examples(featurizer: &Featurizer, g: &Generated, ids: &[usize]) -> Result<Vec<Example>> {
    ids.iter()
        .map(|&i| {
            let s = &g.samples[i];
            Ok(Example {
                features: g.features(featurizer, s)?,
                target: s.relative_benefit,
            })
        })
        .collect()
}

/// Model outputs for the given samples, in order.
pub fn score(
    model: &EstimatorModel,
    g: &Generated,
    ids: &[usize],
    weights: Option<&[f64]>,
    with_u2: bool,
) -> Result<Vec<Assessment>> {
    ids.iter()
        .map(|&i| {
            uq::assess(
                model,
                &g.features(&model.featurizer, &g.samples[i])?,
                weights,
                with_u2,
            )
        })
        .collect()
}

/// `score` over every sample.
pub fn score_all(
    model: &EstimatorModel,
    g: &Generated,
    weights: Option<&[f64]>,
) -> Result<Vec<Assessment>> {
    let ids: Vec<usize> = (0..g.samples.len()).collect();
    score(model, g, &ids, weights, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqRow {
    pub sample_id: usize,
    pub split: Split,
    pub prediction: f64,
    pub u1: f64,
    pub u2: Option<f64>,
    pub flag_u1: bool,
    pub flag_u2: bool,
    pub source: Source,
    pub ensemble_variance: Option<f64>,
    /// `|y_hat - B / c(q, I0)|` with noiseless truth.
    pub model_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqEvaluation {
    pub rows: Vec<UqRow>,
    pub unreliable_error: f64,
    pub ensemble_threshold: Option<Calibration>,
    pub recall: BTreeMap<String, BTreeMap<String, Recall>>,
    pub flagged_fraction: BTreeMap<String, BTreeMap<String, f64>>,
}

impl UqEvaluation {
    pub fn method_flags(&self, method: Method, filter: &FilterConfig) -> Result<Vec<bool>> {
        let hybrid = filter.in_mode(FilterMode::Hybrid);
        self.rows
            .iter()
            .map(|r| {
                Ok(match method {
                    Method::AeOnly => hybrid.flags(r.u1, Some(r.u2.unwrap_or(0.0)))?.0,
                    Method::McdOnly => hybrid.flags(r.u1, Some(r.u2.unwrap_or(0.0)))?.1,
                    Method::Hybrid => {
                        let (a, b) = hybrid.flags(r.u1, Some(r.u2.unwrap_or(0.0)))?;
                        a || b
                    }
                    Method::Ensemble => match (r.ensemble_variance, self.ensemble_threshold) {
                        (Some(v), Some(c)) => v > c.threshold,
                        _ => {
                            return Err(Error::InvalidArgument("ensemble was not evaluated".into()))
                        }
                    },
                })
            })
            .collect()
    }
}

/// Uncertainties, flags and unreliable-sample recall of every method.
pub fn evaluate_uq(
    spec: &ExperimentSpec,
    g: &Generated,
    splits: &DatasetSplits,
    trained: &Trained,
    scores: &[Assessment],
    ensemble: Option<&Ensemble>,
) -> Result<UqEvaluation> {
    let n = g.samples.len();
    if scores.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: scores.len(),
        });
    }
    let labels = splits.labels(n)?;
    let ensemble_variance: Option<Vec<f64>> = ensemble
        .map(|e| {
            g.samples
                .iter()
                .map(|s| {
                    Ok(e.predict(&g.features(&e.members[0].featurizer, s)?)?
                        .variance)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .transpose()?;
    let ensemble_threshold = ensemble_variance
        .as_ref()
        .map(|v| calibrate(&gather(v, &splits.d_train), spec.uq.alpha))
        .transpose()?;

    let mut rows = Vec::with_capacity(n);
    for (i, (a, s)) in scores.iter().zip(&g.samples).enumerate() {
        let (flag_u1, flag_u2) = trained.filter.flags(a.u1, a.u2)?;
        let u2 = match trained.filter.mode {
            FilterMode::Hybrid => a.u2,
            FilterMode::U1Only => None,
        };
        rows.push(UqRow {
            sample_id: i,
            split: labels[i],
            prediction: a.prediction,
            u1: a.u1,
            u2,
            flag_u1,
            flag_u2,
            source: if flag_u1 || flag_u2 {
                Source::Whatif
            } else {
                Source::Model
            },
            ensemble_variance: ensemble_variance.as_ref().map(|v| v[i]),
            model_error: be_error(a.prediction * s.cost_i0, s.true_benefit(), s.cost_i0)?,
        });
    }
    // Baseline flags need U2 even when the configured mode skips it.
    let mut eval = UqEvaluation {
        rows,
        unreliable_error: 0.0,
        ensemble_threshold,
        recall: BTreeMap::new(),
        flagged_fraction: BTreeMap::new(),
    };
    let full_u2: Vec<Option<f64>> = scores.iter().map(|a| a.u2).collect();
    let errors: Vec<f64> = eval.rows.iter().map(|r| r.model_error).collect();
    eval.unreliable_error = unreliable_threshold(&gather(&errors, &splits.d_train))?;

    let mut shadow = eval.clone();
    for (r, u2) in shadow.rows.iter_mut().zip(&full_u2) {
        r.u2 = *u2;
    }
    for method in Method::ALL {
        if method == Method::Ensemble && ensemble.is_none() {
            continue;
        }
        let flags = shadow.method_flags(method, &trained.filter)?;
        let mut recall = BTreeMap::new();
        let mut fraction = BTreeMap::new();
        for split in Split::ALL {
            let ids = splits.part(split);
            if ids.is_empty() {
                continue;
            }
            let f = gather(&flags, ids);
            recall.insert(
                split.name().to_string(),
                unreliable_recall(eval.unreliable_error, &gather(&errors, ids), &f)?,
            );
            fraction.insert(
                split.name().to_string(),
                f.iter().filter(|x| **x).count() as f64 / ids.len() as f64,
            );
        }
        eval.recall.insert(method.name().to_string(), recall);
        eval.flagged_fraction
            .insert(method.name().to_string(), fraction);
    }
    Ok(eval)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeRow {
    pub sample_id: usize,
    pub split: Split,
    pub true_relative_benefit: f64,
    pub model_error: f64,
    pub whatif_error: f64,
    pub filtered_error: f64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeEvaluation {
    pub rows: Vec<BeRow>,
    /// port name -> split name -> summary
    pub summary: BTreeMap<String, BTreeMap<String, ErrorSummary>>,
    /// Share of samples where the filtered port called the what-if tool.
    pub whatif_fraction: BTreeMap<String, f64>,
}

/// Relative benefit-estimation error of the model, what-if and filtered ports.
pub fn evaluate_be(
    spec: &ExperimentSpec,
    g: &Generated,
    splits: &DatasetSplits,
    trained: &Trained,
    scores: &[Assessment],
) -> Result<BeEvaluation> {
    let n = g.samples.len();
    if scores.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: scores.len(),
        });
    }
    let labels = splits.labels(n)?;
    let oracle = CostOracle::new(&g.schema, spec.oracle_params())?;
    let whatif = WhatIf::new(oracle, spec.whatif_params())?;
    let mut rows = Vec::with_capacity(n);
    for (i, (a, s)) in scores.iter().zip(&g.samples).enumerate() {
        let q = g.query(s.query_id)?;
        let truth = s.true_benefit();
        let model = a.prediction * s.cost_i0;
        let wi = whatif.benefit(q, &g.base, &s.config)?;
        let filtered = uq::filter(model, a.u1, a.u2, &trained.filter, || Ok(wi))?;
        rows.push(BeRow {
            sample_id: i,
            split: labels[i],
            true_relative_benefit: s.true_relative_benefit(),
            model_error: be_error(model, truth, s.cost_i0)?,
            whatif_error: be_error(wi, truth, s.cost_i0)?,
            filtered_error: be_error(filtered.value, truth, s.cost_i0)?,
            source: filtered.report.source,
        });
    }
    let mut summary: BTreeMap<String, BTreeMap<String, ErrorSummary>> = BTreeMap::new();
    let mut whatif_fraction = BTreeMap::new();
    for split in Split::ALL {
        let part: Vec<&BeRow> = splits.part(split).iter().map(|&i| &rows[i]).collect();
        if part.is_empty() {
            continue;
        }
        let columns: [(EstimatorKind, fn(&BeRow) -> f64); 3] = [
            (EstimatorKind::Model, |r| r.model_error),
            (EstimatorKind::Whatif, |r| r.whatif_error),
            (EstimatorKind::ModelFilter, |r| r.filtered_error),
        ];
        for (kind, pick) in columns {
            let errs: Vec<f64> = part.iter().map(|r| pick(r)).collect();
            summary
                .entry(kind.name().to_string())
                .or_default()
                .insert(split.name().to_string(), ErrorSummary::of(&errs)?);
        }
        let fallbacks = part.iter().filter(|r| r.source == Source::Whatif).count();
        whatif_fraction.insert(
            split.name().to_string(),
            fallbacks as f64 / part.len() as f64,
        );
    }
    Ok(BeEvaluation {
        rows,
        summary,
        whatif_fraction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetImprovement {
    pub budget_percent: f64,
    pub budget_bytes: u64,
    pub improvement: f64,
    pub chosen_indexes: usize,
    pub estimator_calls: u64,
    pub whatif_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementStats {
    pub per_budget: Vec<BudgetImprovement>,
    pub mean: f64,
    pub variance: f64,
    /// Budgets whose chosen configuration did not improve the workload.
    pub clamped_to_zero: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub alpha: f64,
    pub mode: FilterMode,
    pub theta1: f64,
    pub theta2: Option<f64>,
    pub ensemble: Option<f64>,
    pub unreliable_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub split_sizes: BTreeMap<String, usize>,
    pub held_out_templates: Vec<u32>,
    pub held_out_columns: Vec<ColumnRef>,
    pub thresholds: Thresholds,
    /// method -> split -> recall
    pub unreliable_recall: BTreeMap<String, BTreeMap<String, Recall>>,
    pub flagged_fraction: BTreeMap<String, BTreeMap<String, f64>>,
    /// port -> split -> summary
    pub be_error: BTreeMap<String, BTreeMap<String, ErrorSummary>>,
    pub whatif_call_fraction: BTreeMap<String, f64>,
    /// port -> improvement per budget
    pub improvement: BTreeMap<String, ImprovementStats>,
}

impl MetricsReport {
    pub fn assemble(
        g: &Generated,
        splits: &DatasetSplits,
        trained: &Trained,
        uq: &UqEvaluation,
        be: &BeEvaluation,
        runs: &[TuningRun],
    ) -> Result<Self> {
        let mut improvement: BTreeMap<String, ImprovementStats> = BTreeMap::new();
        let total = g.schema.total_bytes() as f64;
        for run in runs {
            let value = run
                .improvement
                .ok_or_else(|| Error::InvalidArgument("tuning run lacks its improvement".into()))?;
            let entry = improvement
                .entry(run.estimator.name().to_string())
                .or_insert_with(|| ImprovementStats {
                    per_budget: Vec::new(),
                    mean: 0.0,
                    variance: 0.0,
                    clamped_to_zero: 0,
                });
            entry.per_budget.push(BudgetImprovement {
                budget_percent: run
                    .budget_percent
                    .unwrap_or(100.0 * run.budget_bytes as f64 / total),
                budget_bytes: run.budget_bytes,
                improvement: value,
                chosen_indexes: run.chosen.len(),
                estimator_calls: run.estimator_calls,
                whatif_calls: run.whatif_calls,
            });
        }
        for stats_entry in improvement.values_mut() {
            let values: Vec<f64> = stats_entry
                .per_budget
                .iter()
                .map(|b| b.improvement)
                .collect();
            stats_entry.mean = stats::mean(&values)?;
            stats_entry.variance = stats::population_variance(&values)?;
            stats_entry.clamped_to_zero = values.iter().filter(|v| **v <= 0.0).count();
        }
        Ok(Self {
            samples: g.samples.len(),
            split_sizes: Split::ALL
                .iter()
                .map(|s| (s.name().to_string(), splits.part(*s).len()))
                .collect(),
            held_out_templates: splits.held_out_templates.iter().copied().collect(),
            held_out_columns: splits.held_out_columns.iter().copied().collect(),
            thresholds: Thresholds {
                alpha: trained.filter.alpha,
                mode: trained.filter.mode,
                theta1: trained.filter.theta1().ok_or(Error::Uncalibrated)?,
                theta2: trained.filter.theta2(),
                ensemble: uq.ensemble_threshold.map(|c| c.threshold),
                unreliable_error: uq.unreliable_error,
            },
            unreliable_recall: uq.recall.clone(),
            flagged_fraction: uq.flagged_fraction.clone(),
            be_error: be.summary.clone(),
            whatif_call_fraction: be.whatif_fraction.clone(),
            improvement,
        })
    }
}

/// Every stage output of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutputs {
    pub generated: Generated,
    pub splits: DatasetSplits,
    pub trained: Trained,
    pub ensemble: Ensemble,
    pub scores: Vec<Assessment>,
    pub uq: UqEvaluation,
    pub be: BeEvaluation,
    pub runs: Vec<TuningRun>,
    pub report: MetricsReport,
}

pub fn run_experiment(spec: &ExperimentSpec, clock: &dyn Clock) -> Result<ExperimentOutputs> {
    let generated = spec.generate()?;
    let splits = spec.split(&generated)?;
    let trained = spec.train(&generated, &splits)?;
    let ensemble = spec.train_ensemble(&generated, &splits, &trained.model.featurizer)?;
    let scores = score_all(&trained.model, &generated, spec.uq.u1_weights.as_deref())?;
    let uq = evaluate_uq(
        spec,
        &generated,
        &splits,
        &trained,
        &scores,
        Some(&ensemble),
    )?;
    let be = evaluate_be(spec, &generated, &splits, &trained, &scores)?;
    let runs = spec.tune(&generated, &trained, clock)?;
    let report = MetricsReport::assemble(&generated, &splits, &trained, &uq, &be, &runs)?;
    Ok(ExperimentOutputs {
        generated,
        splits,
        trained,
        ensemble,
        scores,
        uq,
        be,
        runs,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_names_fields() {
        let spec = ExperimentSpec {
            ensemble_size: 1,
            ..ExperimentSpec::default()
        };
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("ensemble_size"), "{err}");
        let mut spec = ExperimentSpec::default();
        spec.uq.alpha = 2.0;
        assert!(spec
            .validate()
            .unwrap_err()
            .to_string()
            .contains("uq.alpha"));
        ExperimentSpec::default().validate().unwrap();
    }

    #[test]
    fn budgets_are_percentages_of_table_bytes() {
        let spec = ExperimentSpec::default();
        let g = spec.generate().unwrap();
        let total = g.schema.total_bytes() as f64;
        let b = spec.budgets(&g.schema);
        assert_eq!(b.len(), 3);
        assert_eq!(b[1].1, (total * 0.10).floor() as u64);
    }
}
