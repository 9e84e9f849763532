//! Budget-constrained index selection driven by pluggable benefit estimators.
//!
//! A port answers `B_hat(q, I0, I)`, the estimated benefit of moving query
//! `q` from the baseline configuration `I0` to `I`. The greedy enumerator
//! starts from `I0` and repeatedly adds the candidate with the highest
//! estimated marginal workload benefit
//! `sum_q w_q (B_hat(q, I0, I_cur + idx) - B_hat(q, I0, I_cur))`
//! until nothing fits, nothing helps, or time runs out.
//!
//! Ports must ignore indexes on tables a query does not touch; the enumerator
//! relies on this to skip unaffected queries.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::estimator::EstimatorModel;
use crate::synthdb::{CostOracle, Draw, Index, IndexConfig, Query, Schema, WhatIf};
use crate::uq::{self, FilterConfig, FilterMode, UncertaintyReport};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Oracle,
    Whatif,
    Model,
    #[serde(rename = "model+filter", alias = "model_filter")]
    ModelFilter,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] =
        [Self::Oracle, Self::Whatif, Self::Model, Self::ModelFilter];

    pub fn name(self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::Whatif => "whatif",
            Self::Model => "model",
            Self::ModelFilter => "model+filter",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s || (s == "model_filter" && *k == Self::ModelFilter))
    }
}

/// One port answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub benefit: f64,
    pub whatif_calls: u32,
    pub report: Option<UncertaintyReport>,
}

impl Estimate {
    fn plain(benefit: f64) -> Self {
        Self {
            benefit,
            whatif_calls: 0,
            report: None,
        }
    }
}

pub trait BenefitEstimator {
    fn kind(&self) -> EstimatorKind;

    fn estimate(&self, q: &Query, base: &IndexConfig, config: &IndexConfig) -> Result<Estimate>;
}

/// Noiseless ground truth.
#[derive(Debug, Clone, Copy)]
pub struct OraclePort<'a> {
    pub oracle: CostOracle<'a>,
}

impl BenefitEstimator for OraclePort<'_> {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Oracle
    }

    fn estimate(&self, q: &Query, base: &IndexConfig, config: &IndexConfig) -> Result<Estimate> {
        Ok(Estimate::plain(self.oracle.true_benefit(q, base, config)?))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WhatIfPort<'a> {
    pub whatif: WhatIf<'a>,
}

impl BenefitEstimator for WhatIfPort<'_> {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Whatif
    }

    fn estimate(&self, q: &Query, base: &IndexConfig, config: &IndexConfig) -> Result<Estimate> {
        Ok(Estimate {
            benefit: self.whatif.benefit(q, base, config)?,
            whatif_calls: 1,
            report: None,
        })
    }
}

/// The learned estimator, optionally behind the result filter.
///
/// The model predicts a relative benefit; it is scaled by the measured
/// (noiseless) cost of the query under the materialized baseline.
#[derive(Debug, Clone)]
pub struct ModelPort<'a> {
    pub model: &'a EstimatorModel,
    pub oracle: CostOracle<'a>,
    pub filter: Option<(&'a FilterConfig, WhatIf<'a>)>,
    pub u1_weights: Option<&'a [f64]>,
}

impl<'a> ModelPort<'a> {
    pub fn plain(model: &'a EstimatorModel, oracle: CostOracle<'a>) -> Self {
        Self {
            model,
            oracle,
            filter: None,
            u1_weights: None,
        }
    }

    pub fn filtered(
        model: &'a EstimatorModel,
        oracle: CostOracle<'a>,
        filter: &'a FilterConfig,
        whatif: WhatIf<'a>,
    ) -> Self {
        Self {
            model,
            oracle,
            filter: Some((filter, whatif)),
            u1_weights: None,
        }
    }
}

impl BenefitEstimator for ModelPort<'_> {
    fn kind(&self) -> EstimatorKind {
        if self.filter.is_some() {
            EstimatorKind::ModelFilter
        } else {
            EstimatorKind::Model
        }
    }

    fn estimate(&self, q: &Query, base: &IndexConfig, config: &IndexConfig) -> Result<Estimate> {
        let fs = self
            .model
            .featurizer
            .extract(q, base, config, self.oracle.schema())?;
        let base_cost = self.oracle.cost(q, base, Draw::Off)?;
        match self.filter {
            None => {
                let a = uq::assess(self.model, &fs, self.u1_weights, false)?;
                Ok(Estimate::plain(a.prediction * base_cost))
            }
            Some((cfg, whatif)) => {
                let a = uq::assess(
                    self.model,
                    &fs,
                    self.u1_weights,
                    cfg.mode == FilterMode::Hybrid,
                )?;
                let mut calls = 0;
                let out = uq::filter(a.prediction * base_cost, a.u1, a.u2, cfg, || {
                    calls += 1;
                    whatif.benefit(q, base, config)
                })?;
                Ok(Estimate {
                    benefit: out.value,
                    whatif_calls: calls,
                    report: Some(out.report),
                })
            }
        }
    }
}

/// Monotonic time source for the enumerator's time limit.
pub trait Clock {
    fn now(&self) -> Duration;
}

/// A clock that never advances.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now(&self) -> Duration {
        Duration::ZERO
    }
}

/// `sum_i w_i B_hat(q_i, I0, I)`.
pub fn workload_benefit<E: BenefitEstimator + ?Sized>(
    workload: &[Query],
    base: &IndexConfig,
    config: &IndexConfig,
    estimator: &E,
) -> Result<f64> {
    workload
        .iter()
        .map(|q| Ok(q.weight * estimator.estimate(q, base, config)?.benefit))
        .sum()
}

/// `max(0, 1 - c(W, I) / c(W, I0))` with noiseless weighted costs.
pub fn improvement(
    workload: &[Query],
    base: &IndexConfig,
    chosen: &IndexConfig,
    oracle: &CostOracle<'_>,
) -> Result<f64> {
    let before = oracle.workload_cost(workload, base)?;
    if !(before > 0.0) {
        return Err(Error::NonPositiveBaseCost(before));
    }
    let after = oracle.workload_cost(workload, chosen)?;
    Ok((1.0 - after / before).max(0.0))
}

/// Single-column indexes on every touched column and, for `max_width == 2`,
/// every ordered pair of distinct touched columns of one table. Sorted and
/// deduplicated.
pub fn candidate_indexes(
    workload: &[Query],
    schema: &Schema,
    max_width: usize,
) -> Result<Vec<Index>> {
    if !(1..=2).contains(&max_width) {
        return Err(Error::InvalidArgument(format!(
            "max_width must be 1 or 2, got {max_width}"
        )));
    }
    let mut touched = BTreeSet::new();
    for q in workload {
        q.validate(schema)?;
        touched.extend(q.touched_columns());
    }
    let mut out: BTreeSet<Index> = touched.iter().map(|&c| Index::single(c)).collect();
    if max_width == 2 {
        for a in &touched {
            for b in touched
                .iter()
                .filter(|b| b.table == a.table && b.column != a.column)
            {
                out.insert(Index::new(a.table, alloc::vec![a.column, b.column]));
            }
        }
    }
    Ok(out.into_iter().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoCandidateFits,
    NoPositiveBenefit,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEstimate {
    pub index: Index,
    pub size_bytes: u64,
    pub marginal_benefit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub evaluated: Vec<CandidateEstimate>,
    pub accepted: Option<Index>,
    pub marginal_benefit: Option<f64>,
    pub config_size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRun {
    pub estimator: EstimatorKind,
    pub budget_bytes: u64,
    pub base: IndexConfig,
    pub chosen: IndexConfig,
    pub chosen_size_bytes: u64,
    pub rounds: Vec<Round>,
    pub stop_reason: StopReason,
    /// Estimated workload benefit of `chosen` at the end of the run.
    pub estimated_benefit: f64,
    /// Filled in by the caller with the oracle-side improvement.
    pub improvement: Option<f64>,
    /// Budget as configured by the caller, when given as a share of the data.
    pub budget_percent: Option<f64>,
    pub estimator_calls: u64,
    pub whatif_calls: u64,
    /// Not serialized so run files stay reproducible.
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyParams {
    pub budget_bytes: u64,
    /// `None` runs until the other stop conditions hold.
    pub time_limit: Option<Duration>,
}

pub fn enumerate_greedy<E, C>(
    schema: &Schema,
    workload: &[Query],
    base: &IndexConfig,
    candidates: &[Index],
    params: GreedyParams,
    estimator: &E,
    clock: &C,
) -> Result<TuningRun>
where
    E: BenefitEstimator + ?Sized,
    C: Clock + ?Sized,
{
    let start = clock.now();
    if params.budget_bytes == 0 {
        return Err(Error::InvalidArgument("budget must be positive".into()));
    }
    let base_size = base.size_bytes(schema)?;
    if base_size > params.budget_bytes {
        return Err(Error::InvalidArgument(format!(
            "baseline configuration ({base_size} bytes) exceeds the budget ({} bytes)",
            params.budget_bytes
        )));
    }
    let mut pool: Vec<(u64, Index)> = candidates
        .iter()
        .filter(|i| !base.contains(i))
        .map(|i| {
            i.validate(schema)?;
            Ok((i.size_bytes(schema)?, i.clone()))
        })
        .collect::<Result<_>>()?;
    pool.sort();
    pool.dedup();

    let mut calls = 0u64;
    let mut whatif_calls = 0u64;
    let mut ask = |q: &Query, cfg: &IndexConfig| -> Result<f64> {
        let e = estimator.estimate(q, base, cfg)?;
        calls += 1;
        whatif_calls += u64::from(e.whatif_calls);
        Ok(e.benefit)
    };

    let mut current = base.clone();
    let mut size = base_size;
    let mut current_est: Vec<f64> = Vec::with_capacity(workload.len());
    let mut rounds = Vec::new();
    let stop;
    let out_of_time = |clock: &C| {
        params
            .time_limit
            .is_some_and(|limit| clock.now().saturating_sub(start) >= limit)
    };

    if out_of_time(clock) {
        stop = StopReason::TimeLimit;
    } else {
        for q in workload {
            current_est.push(ask(q, &current)?);
        }
        loop {
            if out_of_time(clock) {
                stop = StopReason::TimeLimit;
                break;
            }
            let fitting: Vec<&(u64, Index)> = pool
                .iter()
                .filter(|(s, i)| !current.contains(i) && size + s <= params.budget_bytes)
                .collect();
            if fitting.is_empty() {
                stop = StopReason::NoCandidateFits;
                break;
            }
            let mut evaluated = Vec::with_capacity(fitting.len());
            // (marginal, per-query estimates for the affected queries)
            let mut best: Option<(usize, f64, Vec<(usize, f64)>)> = None;
            for (slot, (s, idx)) in fitting.iter().enumerate() {
                let next = current.with(idx.clone());
                let mut marginal = 0.0;
                let mut updated = Vec::new();
                for (qi, q) in workload.iter().enumerate() {
                    if !q.touches_table(idx.table) {
                        continue;
                    }
                    let b = ask(q, &next)?;
                    marginal += q.weight * (b - current_est[qi]);
                    updated.push((qi, b));
                }
                evaluated.push(CandidateEstimate {
                    index: idx.clone(),
                    size_bytes: *s,
                    marginal_benefit: marginal,
                });
                // Candidates are ordered by (size, index), so the first maximum wins ties.
                if best.as_ref().map_or(true, |(_, m, _)| marginal > *m) {
                    best = Some((slot, marginal, updated));
                }
            }
            let (slot, marginal, updated) = best.expect("fitting is nonempty");
            if !(marginal > 0.0) {
                rounds.push(Round {
                    evaluated,
                    accepted: None,
                    marginal_benefit: None,
                    config_size_bytes: size,
                });
                stop = StopReason::NoPositiveBenefit;
                break;
            }
            let (s, idx) = fitting[slot].clone();
            current = current.with(idx.clone());
            size += s;
            for (qi, b) in updated {
                current_est[qi] = b;
            }
            rounds.push(Round {
                evaluated,
                accepted: Some(idx),
                marginal_benefit: Some(marginal),
                config_size_bytes: size,
            });
        }
    }
    let estimated_benefit = workload
        .iter()
        .zip(&current_est)
        .map(|(q, b)| q.weight * b)
        .sum();
    Ok(TuningRun {
        estimator: estimator.kind(),
        budget_bytes: params.budget_bytes,
        base: base.clone(),
        chosen_size_bytes: current.size_bytes(schema)?,
        chosen: current,
        rounds,
        stop_reason: stop,
        estimated_benefit,
        improvement: None,
        budget_percent: None,
        estimator_calls: calls,
        whatif_calls,
        wall_time: clock.now().saturating_sub(start),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdb::{generate_schema, ColumnRef, CostOracleParams, Predicate, SchemaSpec};
    use alloc::vec;

    fn schema() -> Schema {
        generate_schema(
            &SchemaSpec {
                tables: 1,
                columns_per_table: 3,
                min_rows: 1000,
                max_rows: 1000,
                min_width_bytes: 4,
                max_width_bytes: 4,
            },
            1,
        )
        .unwrap()
    }

    fn q(id: u32, cols: &[(usize, f64)], weight: f64) -> Query {
        Query {
            id,
            template_id: 0,
            predicates: cols
                .iter()
                .map(|&(c, s)| Predicate {
                    column: ColumnRef::new(0, c),
                    selectivity: s,
                })
                .collect(),
            join_edges: vec![],
            weight,
        }
    }

    struct Fixed(Vec<f64>);

    impl BenefitEstimator for Fixed {
        fn kind(&self) -> EstimatorKind {
            EstimatorKind::Oracle
        }
        fn estimate(&self, q: &Query, _: &IndexConfig, _: &IndexConfig) -> Result<Estimate> {
            Ok(Estimate::plain(self.0[q.id as usize]))
        }
    }

    fn oracle(s: &Schema) -> CostOracle<'_> {
        CostOracle::new(
            s,
            CostOracleParams {
                noise_sigma: 0.0,
                ..CostOracleParams::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn weighted_workload_benefit() {
        let s = schema();
        let w = vec![q(0, &[(0, 0.1)], 2.0), q(1, &[(1, 0.1)], 1.0)];
        let b = workload_benefit(
            &w,
            &IndexConfig::empty(),
            &IndexConfig::empty(),
            &Fixed(vec![3.0, -1.0]),
        )
        .unwrap();
        assert_eq!(b, 5.0);
        let o = OraclePort { oracle: oracle(&s) };
        assert_eq!(
            workload_benefit(&w, &IndexConfig::empty(), &IndexConfig::empty(), &o).unwrap(),
            0.0
        );
        let cfg = IndexConfig::from_indexes([Index::new(0, vec![0])]);
        let single = workload_benefit(&w[..1], &IndexConfig::empty(), &cfg, &o).unwrap();
        assert!((single - 2.0 * 900.0).abs() < 1e-9);
    }

    #[test]
    fn improvement_is_clamped() {
        let s = schema();
        let w = vec![q(0, &[(0, 0.8)], 1.0)];
        let o = oracle(&s);
        let cfg = IndexConfig::from_indexes([Index::new(0, vec![0])]);
        assert!((improvement(&w, &IndexConfig::empty(), &cfg, &o).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(
            improvement(&w, &IndexConfig::empty(), &IndexConfig::empty(), &o).unwrap(),
            0.0
        );
        // Going from the indexed configuration back to none is a regression.
        assert_eq!(
            improvement(&w, &cfg, &IndexConfig::empty(), &o).unwrap(),
            0.0
        );
    }

    #[test]
    fn candidates_by_width() {
        let s = schema();
        let w = vec![q(0, &[(0, 0.1), (1, 0.2)], 1.0), q(1, &[(0, 0.3)], 1.0)];
        let c1 = candidate_indexes(&w, &s, 1).unwrap();
        assert_eq!(c1, vec![Index::new(0, vec![0]), Index::new(0, vec![1])]);
        let c2 = candidate_indexes(&w, &s, 2).unwrap();
        assert_eq!(c2.len(), 4);
        assert!(c2.contains(&Index::new(0, vec![0, 1])) && c2.contains(&Index::new(0, vec![1, 0])));
        assert!(candidate_indexes(&w, &s, 3).is_err());
    }

    #[test]
    fn only_fitting_candidate_is_chosen() {
        let mut s = schema();
        s.tables[0].columns[1].width_bytes = 40;
        let w = vec![q(0, &[(0, 0.5), (1, 0.01)], 1.0)];
        let cands = candidate_indexes(&w, &s, 1).unwrap();
        let o = OraclePort { oracle: oracle(&s) };
        let params = GreedyParams {
            budget_bytes: 4 * 1000,
            time_limit: None,
        };
        let run = enumerate_greedy(
            &s,
            &w,
            &IndexConfig::empty(),
            &cands,
            params,
            &o,
            &FrozenClock,
        )
        .unwrap();
        assert_eq!(
            run.chosen,
            IndexConfig::from_indexes([Index::new(0, vec![0])])
        );
        assert!(run.chosen_size_bytes <= run.budget_bytes);
        assert_eq!(run.stop_reason, StopReason::NoCandidateFits);
    }

    #[test]
    fn zero_time_limit_returns_base_and_empty_candidates_too() {
        let s = schema();
        let w = vec![q(0, &[(0, 0.5)], 1.0)];
        let cands = candidate_indexes(&w, &s, 1).unwrap();
        let o = OraclePort { oracle: oracle(&s) };
        let params = GreedyParams {
            budget_bytes: 1 << 30,
            time_limit: Some(Duration::ZERO),
        };
        let run = enumerate_greedy(
            &s,
            &w,
            &IndexConfig::empty(),
            &cands,
            params,
            &o,
            &FrozenClock,
        )
        .unwrap();
        assert_eq!(run.chosen, IndexConfig::empty());
        assert_eq!(run.stop_reason, StopReason::TimeLimit);
        assert_eq!(run.estimator_calls, 0);

        let params = GreedyParams {
            time_limit: None,
            ..params
        };
        let run =
            enumerate_greedy(&s, &w, &IndexConfig::empty(), &[], params, &o, &FrozenClock).unwrap();
        assert_eq!(run.chosen, IndexConfig::empty());
    }

    #[test]
    fn useless_candidates_are_not_taken() {
        let s = schema();
        let w = vec![q(0, &[(0, 1.0)], 1.0)];
        let cands = candidate_indexes(&w, &s, 1).unwrap();
        let o = OraclePort { oracle: oracle(&s) };
        let params = GreedyParams {
            budget_bytes: 1 << 30,
            time_limit: None,
        };
        let run = enumerate_greedy(
            &s,
            &w,
            &IndexConfig::empty(),
            &cands,
            params,
            &o,
            &FrozenClock,
        )
        .unwrap();
        assert!(run.chosen.is_empty());
        assert_eq!(run.stop_reason, StopReason::NoPositiveBenefit);
    }

    #[test]
    fn equal_benefits_break_ties_by_size_then_columns() {
        let mut s = schema();
        s.tables[0].columns[0].width_bytes = 8;
        let w = vec![
            q(0, &[(0, 0.5)], 1.0),
            q(1, &[(1, 0.5)], 1.0),
            q(2, &[(2, 0.5)], 1.0),
        ];
        let cands = candidate_indexes(&w, &s, 1).unwrap();
        let o = OraclePort { oracle: oracle(&s) };
        let params = GreedyParams {
            budget_bytes: 4000,
            time_limit: None,
        };
        let run = enumerate_greedy(
            &s,
            &w,
            &IndexConfig::empty(),
            &cands,
            params,
            &o,
            &FrozenClock,
        )
        .unwrap();
        assert_eq!(
            run.chosen,
            IndexConfig::from_indexes([Index::new(0, vec![1])])
        );
    }

    #[test]
    fn base_over_budget_is_rejected() {
        let s = schema();
        let base = IndexConfig::from_indexes([Index::new(0, vec![0])]);
        let o = OraclePort { oracle: oracle(&s) };
        let params = GreedyParams {
            budget_bytes: 10,
            time_limit: None,
        };
        assert!(enumerate_greedy(&s, &[], &base, &[], params, &o, &FrozenClock).is_err());
    }
}
