//! Command-line interface.

use std::path::PathBuf;

use benefit_uq_core::advisor::EstimatorKind;
use benefit_uq_core::evalkit::{ExperimentSpec, MetricsReport};
use benefit_uq_core::uq::FilterMode;
use clap::{Args, Parser, Subcommand};

use crate::config::load_spec;
use crate::pipeline::{self, CalibrationOverrides, RunDir, TuneOverrides};

pub const OUT_ENV: &str = "BENEFIT_UQ_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "benefit-uq",
    version,
    about = "Uncertainty-aware index benefit estimation workbench"
)]
pub struct Cli {
    /// Run directory for all inputs and outputs.
    #[arg(long, global = true, env = OUT_ENV, default_value = "benefit-uq-run")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate schema, workload, dataset and splits.
    Gen(GenArgs),
    /// Train the estimator and calibrate its thresholds.
    Train(TrainArgs),
    /// Recalibrate the thresholds of a trained model.
    Calibrate(CalibrateArgs),
    /// Per-sample uncertainties and unreliable-sample recall.
    EvalUq,
    /// Benefit-estimation error of the model, what-if and filtered ports.
    EvalBe,
    /// Greedy index tuning with every estimator port and budget.
    Tune(TuneArgs),
    /// Merge stage outputs into metrics.json.
    Report,
    /// All stages in order.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Experiment file (.json or .toml); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct ModeArgs {
    /// IQR multiplier for the thresholds.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Skip Monte-Carlo passes and filter on U1 alone.
    #[arg(long, conflicts_with = "hybrid")]
    pub u1_only: bool,
    /// Filter on both U1 and U2.
    #[arg(long)]
    pub hybrid: bool,
}

impl ModeArgs {
    fn overrides(&self) -> CalibrationOverrides {
        let mode = if self.u1_only {
            Some(FilterMode::U1Only)
        } else if self.hybrid {
            Some(FilterMode::Hybrid)
        } else {
            None
        };
        CalibrationOverrides {
            alpha: self.alpha,
            mode,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub mode: ModeArgs,
    /// Also write raw and embedded feature vectors as CSV.
    #[arg(long)]
    pub dump_features: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub mode: ModeArgs,
}

#[derive(Debug, Args, Clone)]
pub struct TuneArgs {
    /// Budgets as percentages of the total table bytes, e.g. `5,10,20`.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<f64>>,
    /// Estimator ports: oracle, whatif, model, model+filter.
    #[arg(long, value_delimiter = ',', value_parser = parse_port)]
    pub ports: Option<Vec<EstimatorKind>>,
    /// Enumerator time limit per run.
    #[arg(long)]
    pub time_limit_ms: Option<u64>,
}

impl TuneArgs {
    fn overrides(&self) -> TuneOverrides {
        TuneOverrides {
            budgets_percent: self.budgets.clone(),
            ports: self.ports.clone(),
            time_limit_ms: self.time_limit_ms,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub gen: GenArgs,
    #[command(flatten)]
    pub mode: ModeArgs,
    #[command(flatten)]
    pub tune: TuneArgs,
}

fn parse_port(s: &str) -> Result<EstimatorKind, String> {
    EstimatorKind::parse(s).ok_or_else(|| {
        format!("unknown port {s:?} (expected oracle, whatif, model or model+filter)")
    })
}

fn spec_from(args: &GenArgs) -> anyhow::Result<ExperimentSpec> {
    let mut spec = match &args.config {
        Some(p) => load_spec(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn summarize(report: &MetricsReport) -> String {
    let mut lines = vec![format!(
        "samples: {} {:?}",
        report.samples, report.split_sizes
    )];
    if let Some(r) = report.unreliable_recall.get("hybrid") {
        let fmt = |k: &str| {
            r.get(k)
                .and_then(|x| x.recall)
                .map_or("n/a".into(), |v| format!("{v:.3}"))
        };
        lines.push(format!(
            "hybrid recall: train {} eval {}",
            fmt("d_train"),
            fmt("d_eval")
        ));
    }
    for (port, stats) in &report.improvement {
        lines.push(format!("improvement {port}: mean {:.4}", stats.mean));
    }
    lines.join("\n")
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Gen(args) => {
            let spec = spec_from(args)?;
            pipeline::gen(&RunDir::create(&cli.out)?, &spec)
        }
        Command::Train(args) => pipeline::train(
            &RunDir::open(&cli.out)?,
            &args.mode.overrides(),
            args.dump_features,
        ),
        Command::Calibrate(args) => {
            pipeline::calibrate(&RunDir::open(&cli.out)?, &args.mode.overrides())
        }
        Command::EvalUq => pipeline::eval_uq(&RunDir::open(&cli.out)?),
        Command::EvalBe => pipeline::eval_be(&RunDir::open(&cli.out)?),
        Command::Tune(args) => pipeline::tune(&RunDir::open(&cli.out)?, &args.overrides()),
        Command::Report => {
            let report = pipeline::report(&RunDir::open(&cli.out)?)?;
            println!("{}", summarize(&report));
            Ok(())
        }
        Command::Run(args) => {
            let mut spec = spec_from(&args.gen)?;
            if let Some(a) = args.mode.alpha {
                spec.uq.alpha = a;
            }
            if args.mode.u1_only {
                spec.uq.mode = FilterMode::U1Only;
            }
            if let Some(b) = &args.tune.budgets {
                spec.tuning.budgets_percent = b.clone();
            }
            if let Some(p) = &args.tune.ports {
                spec.tuning.ports = p.clone();
            }
            if args.tune.time_limit_ms.is_some() {
                spec.tuning.time_limit_ms = args.tune.time_limit_ms;
            }
            let report = pipeline::run_all(&RunDir::create(&cli.out)?, &spec)?;
            println!("{}", summarize(&report));
            Ok(())
        }
    }
}
