use std::collections::BTreeSet;

use benefit_uq_core::advisor::{
    candidate_indexes, enumerate_greedy, improvement, FrozenClock, GreedyParams, OraclePort,
};
use benefit_uq_core::estimator::{EstimatorConfig, EstimatorModel};
use benefit_uq_core::evalkit::{
    build_dataset, generate_configs, split_ood, ConfigSpec, Ensemble, SplitSpec,
};
use benefit_uq_core::featurize::{vocabulary_of, Featurizer};
use benefit_uq_core::stats;
use benefit_uq_core::synthdb::{
    generate_schema, generate_workload, CostOracle, CostOracleParams, Draw, IndexConfig,
    SchemaSpec, WorkloadSpec,
};
use benefit_uq_core::uq::{calibrate, filter, u1_of, u2_of, FilterConfig, FilterMode};
use proptest::prelude::*;
use proptest::sample::subsequence;

fn finite_values(min_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3..1e3f64, min_len..64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn percentiles_are_monotone(values in finite_values(1), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p_lo = stats::percentile(&values, lo).unwrap();
        let p_hi = stats::percentile(&values, hi).unwrap();
        prop_assert!(p_lo <= p_hi);
        let s = stats::sorted(&values);
        prop_assert!(s[0] <= p_lo && p_hi <= s[s.len() - 1]);
    }

    #[test]
    fn calibrated_threshold_is_capped_by_max(values in finite_values(4), alpha in 1.0..=1.5f64) {
        let c = calibrate(&values, alpha).unwrap();
        prop_assert!(c.threshold <= c.max);
        prop_assert!(c.threshold >= c.p75.min(c.max));
        prop_assert!(c.p25 <= c.p75);
    }

    #[test]
    fn u2_scales_quadratically(values in prop::collection::vec(-10.0..10.0f64, 1..40), c in -5.0..5.0f64) {
        let base = u2_of(&values).unwrap();
        let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
        let got = u2_of(&scaled).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!((got - c * c * base).abs() <= 1e-9 * (1.0 + c * c * base));
    }

    #[test]
    fn uniform_u1_weights_do_not_change_flags(
        pairs in prop::collection::vec(prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 6), 8..30),
        scale in 0.5..4.0f64,
    ) {
        let dim = 3;
        let u1 = |w: &[f64]| -> Vec<f64> {
            pairs
                .iter()
                .map(|p| {
                    let (v, v_hat): (Vec<f64>, Vec<f64>) = p.iter().copied().unzip();
                    u1_of(&v, &v_hat, dim, Some(w)).unwrap()
                })
                .collect()
        };
        let plain = u1(&[1.0; 3]);
        let scaled = u1(&[scale; 3]);
        let t_plain = calibrate(&plain, 1.3).unwrap().threshold;
        let t_scaled = calibrate(&scaled, 1.3).unwrap().threshold;
        for (a, b) in plain.iter().zip(&scaled) {
            prop_assert!((b - scale * a).abs() <= 1e-9 * (1.0 + b.abs()));
            // Compare with a relative margin so rounding at the threshold cannot flip a decision.
            let margin = 1e-9 * t_plain.abs().max(1e-12);
            if (a - t_plain).abs() > margin {
                prop_assert_eq!(*a > t_plain, *b > t_scaled);
            }
        }
    }

    #[test]
    fn u1_only_flags_are_a_subset_of_hybrid_flags(
        u1 in 0.0..1.0f64, u2 in 0.0..1.0f64, theta1 in 0.0..1.0f64, theta2 in 0.0..1.0f64,
    ) {
        let hybrid = FilterConfig::with_thresholds(FilterMode::Hybrid, theta1, Some(theta2)).unwrap();
        let u1_only = hybrid.in_mode(FilterMode::U1Only);
        let h = filter(0.5, u1, Some(u2), &hybrid, || Ok(0.0)).unwrap();
        let o = filter(0.5, u1, None, &u1_only, || Ok(0.0)).unwrap();
        prop_assert!(o.report.u2.is_none());
        prop_assert!(!o.report.flagged() || h.report.flagged());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adding_an_index_never_raises_cost(seed in 0u64..1000, pick in prop::collection::vec(any::<prop::sample::Index>(), 1..5)) {
        let schema = generate_schema(&SchemaSpec::default(), seed).unwrap();
        let workload = generate_workload(&schema, &WorkloadSpec { templates: 4, queries_per_template: 3, ..Default::default() }, seed).unwrap();
        let oracle = CostOracle::new(&schema, CostOracleParams::default()).unwrap();
        let candidates = candidate_indexes(&workload, &schema, 2).unwrap();
        let mut config = IndexConfig::empty();
        for p in &pick {
            let next = config.with(p.get(&candidates).clone());
            for q in &workload {
                prop_assert!(oracle.cost(q, &next, Draw::Off).unwrap() <= oracle.cost(q, &config, Draw::Off).unwrap());
            }
            config = next;
        }
    }

    #[test]
    fn greedy_respects_budget_and_beats_every_single_index(seed in 0u64..1000, share in 0.01..0.5f64) {
        let schema = generate_schema(&SchemaSpec { tables: 2, ..Default::default() }, seed).unwrap();
        let workload = generate_workload(&schema, &WorkloadSpec { templates: 3, queries_per_template: 3, ..Default::default() }, seed + 1).unwrap();
        let oracle = CostOracle::new(&schema, CostOracleParams { noise_sigma: 0.0, ..Default::default() }).unwrap();
        let candidates = candidate_indexes(&workload, &schema, 2).unwrap();
        let budget = (schema.total_bytes() as f64 * share) as u64;
        let base = IndexConfig::empty();
        let params = GreedyParams { budget_bytes: budget, time_limit: None };
        let run = enumerate_greedy(&schema, &workload, &base, &candidates, params, &OraclePort { oracle }, &FrozenClock).unwrap();
        prop_assert!(run.chosen_size_bytes <= budget);
        prop_assert_eq!(run.chosen.size_bytes(&schema).unwrap(), run.chosen_size_bytes);
        let greedy = improvement(&workload, &base, &run.chosen, &oracle).unwrap();
        for c in candidates.iter().filter(|c| c.size_bytes(&schema).unwrap() <= budget) {
            let single = improvement(&workload, &base, &IndexConfig::from_indexes([c.clone()]), &oracle).unwrap();
            prop_assert!(greedy >= single - 1e-12, "greedy {greedy} < single {single} for {c:?}");
        }
    }

    #[test]
    fn ood_split_partitions_the_dataset(seed in 0u64..1000) {
        let schema = generate_schema(&SchemaSpec::default(), seed).unwrap();
        let workload = generate_workload(&schema, &WorkloadSpec { templates: 8, queries_per_template: 6, ..Default::default() }, seed).unwrap();
        let oracle = CostOracle::new(&schema, CostOracleParams::default()).unwrap();
        let configs = generate_configs(&workload, &schema, &ConfigSpec { count: 10, ..Default::default() }, seed).unwrap();
        let samples = build_dataset(&oracle, &workload, &IndexConfig::empty(), &configs, seed).unwrap();
        // Some random workloads cannot be split within tolerance; those must error, not mis-split.
        let Ok(s) = split_ood(&samples, &workload, &SplitSpec::default(), seed) else { return Ok(()); };
        let parts = [&s.d_train, &s.d_test, &s.d_eval];
        let mut all = BTreeSet::new();
        for p in parts {
            for &i in p.iter() {
                prop_assert!(all.insert(i), "sample {i} in two parts");
            }
        }
        prop_assert_eq!(all.len(), samples.len());
        for &i in s.d_train.iter().chain(&s.d_test) {
            prop_assert!(!s.is_held_out(&workload[samples[i].query_id as usize]));
        }
        for &i in &s.d_eval {
            prop_assert!(s.is_held_out(&workload[samples[i].query_id as usize]));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ensemble_statistics_ignore_member_order(order in Just((0..4).collect::<Vec<usize>>()).prop_shuffle(), query in 0usize..12, keep in subsequence(vec![0u64, 1, 2], 1..=3)) {
        let schema = generate_schema(&SchemaSpec::default(), 9).unwrap();
        let workload = generate_workload(&schema, &WorkloadSpec { templates: 4, queries_per_template: 3, ..Default::default() }, 9).unwrap();
        let featurizer = Featurizer::new(4, vocabulary_of(&workload, &schema).unwrap()).unwrap();
        let cfg = EstimatorConfig { hidden: 4, encoder_hidden: vec![8], predictor_hidden: vec![8], ..Default::default() };
        let members: Vec<EstimatorModel> = (0..4).map(|s| EstimatorModel::new(featurizer.clone(), &cfg, s).unwrap()).collect();
        let candidates = candidate_indexes(&workload, &schema, 1).unwrap();
        let config = IndexConfig::from_indexes(keep.iter().map(|&k| candidates[k as usize].clone()));
        let fs = featurizer.extract(&workload[query], &IndexConfig::empty(), &config, &schema).unwrap();
        let forward = Ensemble::from_members(members.clone()).unwrap().predict(&fs).unwrap();
        let shuffled = Ensemble::from_members(order.iter().map(|&i| members[i].clone()).collect()).unwrap().predict(&fs).unwrap();
        prop_assert_eq!(forward, shuffled);
    }
}
