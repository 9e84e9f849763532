//! Dataset construction, out-of-distribution splits, uncertainty and
//! benefit-estimation metrics, baseline quantifiers and the experiment stages.

mod baselines;
mod dataset;
mod experiment;
mod metrics;

pub use baselines::{Ensemble, Method, DEFAULT_ENSEMBLE_SIZE};
pub use dataset::{
    build_dataset, generate_configs, split_ood, trainable, ConfigSpec, DatasetSplits, Sample,
    Split, SplitSpec,
};
pub use experiment::{
    evaluate_be, evaluate_uq, examples, run_experiment, score, score_all, BeEvaluation, BeRow,
    BudgetImprovement, ExperimentOutputs, ExperimentSpec, Generated, ImprovementStats,
    MetricsReport, Thresholds, Trained, TuningSpec, UqEvaluation, UqRow, UqSpec,
};
pub use metrics::{
    be_error, unreliable_recall, unreliable_threshold, ErrorSummary, Recall, UNRELIABLE_QUANTILE,
};
