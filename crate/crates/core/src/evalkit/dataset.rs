//! Benefit records and the out-of-distribution split.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::advisor::candidate_indexes;
use crate::estimator::target_of;
use crate::hashing;
use crate::synthdb::{ColumnRef, CostOracle, Draw, Index, IndexConfig, Query, Schema};
use crate::{Error, Result};

/// One `(q, I, b)` record. Costs are noiseless; `benefit` is observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub query_id: u32,
    pub template_id: u32,
    pub config_id: u32,
    pub config: IndexConfig,
    pub cost_i0: f64,
    pub cost_i: f64,
    pub benefit: f64,
    pub relative_benefit: f64,
}

impl Sample {
    pub fn true_benefit(&self) -> f64 {
        self.cost_i0 - self.cost_i
    }

    pub fn true_relative_benefit(&self) -> f64 {
        self.true_benefit() / self.cost_i0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigSpec {
    /// Number of configurations, the baseline included when `include_base`.
    pub count: usize,
    pub max_indexes: usize,
    pub max_width: usize,
    pub include_base: bool,
    /// Probability that an index is drawn from the anchor template's columns
    /// rather than from all candidates.
    pub focus: f64,
}

impl Default for ConfigSpec {
    fn default() -> Self {
        Self {
            count: 40,
            max_indexes: 3,
            max_width: 2,
            include_base: true,
            focus: 0.7,
        }
    }
}

/// Random index configurations over the workload's candidate indexes. Each
/// configuration is anchored to one template so that most of them matter to
/// some queries.
pub fn generate_configs(
    workload: &[Query],
    schema: &Schema,
    spec: &ConfigSpec,
    seed: u64,
) -> Result<Vec<IndexConfig>> {
    if spec.count == 0 || spec.max_indexes == 0 {
        return Err(Error::InvalidArgument(
            "config count and max_indexes must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.focus) {
        return Err(Error::InvalidArgument(format!(
            "focus {} outside [0, 1]",
            spec.focus
        )));
    }
    if workload.is_empty() {
        return Err(Error::Empty("workload"));
    }
    let candidates = candidate_indexes(workload, schema, spec.max_width)?;
    let mut by_template: BTreeMap<u32, BTreeSet<ColumnRef>> = BTreeMap::new();
    for q in workload {
        by_template
            .entry(q.template_id)
            .or_default()
            .extend(q.touched_columns());
    }
    let anchored: Vec<Vec<&Index>> = by_template
        .values()
        .map(|cols| {
            candidates
                .iter()
                .filter(|i| cols.contains(&i.leading()))
                .collect()
        })
        .collect();

    let mut rng = hashing::stream(seed, 0xC0F6);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(spec.count);
    if spec.include_base {
        seen.insert(IndexConfig::empty());
        out.push(IndexConfig::empty());
    }
    let mut attempts = 0;
    while out.len() < spec.count && attempts < spec.count * 100 {
        attempts += 1;
        let anchor = &anchored[rng.random_range(0..anchored.len())];
        let k = rng.random_range(1..=spec.max_indexes);
        let mut cfg = IndexConfig::empty();
        for _ in 0..k {
            let pick = if !anchor.is_empty() && rng.random_bool(spec.focus) {
                anchor[rng.random_range(0..anchor.len())]
            } else {
                &candidates[rng.random_range(0..candidates.len())]
            };
            cfg = cfg.with(pick.clone());
        }
        if seen.insert(cfg.clone()) {
            out.push(cfg);
        }
    }
    Ok(out)
}

/// One sample per `(query, config)` pair, query-major.
pub fn build_dataset(
    oracle: &CostOracle<'_>,
    workload: &[Query],
    base: &IndexConfig,
    configs: &[IndexConfig],
    seed: u64,
) -> Result<Vec<Sample>> {
    if workload.is_empty() {
        return Err(Error::Empty("workload"));
    }
    if configs.is_empty() {
        return Err(Error::Empty("configurations"));
    }
    let mut out = Vec::with_capacity(workload.len() * configs.len());
    for q in workload {
        let cost_i0 = oracle.cost(q, base, Draw::Off)?;
        for (config_id, cfg) in configs.iter().enumerate() {
            let cost_i = oracle.cost(q, cfg, Draw::Off)?;
            let benefit = oracle.observed_benefit(
                q,
                base,
                cfg,
                hashing::hash_words(&[seed, config_id as u64]),
            )?;
            out.push(Sample {
                query_id: q.id,
                template_id: q.template_id,
                config_id: config_id as u32,
                config: cfg.clone(),
                cost_i0,
                cost_i,
                benefit,
                relative_benefit: target_of(benefit, cost_i0)?,
            });
        }
    }
    Ok(out)
}

/// Records that may be used for training: observed benefit is nonnegative.
pub fn trainable(samples: &[Sample], ids: &[usize]) -> Vec<usize> {
    ids.iter()
        .copied()
        .filter(|&i| samples[i].benefit >= 0.0)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "d_train",
            Split::Test => "d_test",
            Split::Eval => "d_eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train: f64,
    pub test: f64,
    pub eval: f64,
    pub tolerance: f64,
    pub min_held_templates: usize,
    pub min_held_columns: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.50,
            test: 0.15,
            eval: 0.35,
            tolerance: 0.05,
            min_held_templates: 2,
            min_held_columns: 1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.test, self.eval];
        if parts.iter().any(|p| !(*p > 0.0)) || libm::fabs(parts.iter().sum::<f64>() - 1.0) > 1e-9 {
            return Err(Error::InvalidArgument(
                "split targets must be positive and sum to 1".into(),
            ));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidArgument(
                "split tolerance must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Disjoint sample-index partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub d_train: Vec<usize>,
    pub d_test: Vec<usize>,
    pub d_eval: Vec<usize>,
    pub held_out_templates: BTreeSet<u32>,
    pub held_out_columns: BTreeSet<ColumnRef>,
}

impl DatasetSplits {
    pub fn part(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.d_train,
            Split::Test => &self.d_test,
            Split::Eval => &self.d_eval,
        }
    }

    pub fn len(&self) -> usize {
        self.d_train.len() + self.d_test.len() + self.d_eval.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Split label of every sample, or an error if the partition does not
    /// cover `0..n` exactly once.
    pub fn labels(&self, n: usize) -> Result<Vec<Split>> {
        let mut out: Vec<Option<Split>> = alloc::vec![None; n];
        for split in Split::ALL {
            for &i in self.part(split) {
                match out.get_mut(i) {
                    Some(slot @ None) => *slot = Some(split),
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "sample {i} is out of range or assigned twice"
                        )))
                    }
                }
            }
        }
        out.into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| Error::InvalidArgument(format!("sample {i} is unassigned")))
            })
            .collect()
    }

    /// Whether a query falls under a held-out template or column.
    pub fn is_held_out(&self, q: &Query) -> bool {
        self.held_out_templates.contains(&q.template_id)
            || q.touched_columns()
                .any(|c| self.held_out_columns.contains(&c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Holdout {
    Template(u32),
    Column(ColumnRef),
}

/// Grows held-out template and column sets, alternating between the two and
/// taking the option that adds the fewest records (seeded tie-break), until
/// the held-out share reaches the eval target. Remaining records are split
/// at random into train and test.
pub fn split_ood(
    samples: &[Sample],
    workload: &[Query],
    spec: &SplitSpec,
    seed: u64,
) -> Result<DatasetSplits> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let queries: BTreeMap<u32, &Query> = workload.iter().map(|q| (q.id, q)).collect();
    let info: Vec<(u32, Vec<ColumnRef>)> = samples
        .iter()
        .map(|s| {
            let q = queries.get(&s.query_id).ok_or_else(|| {
                Error::InvalidArgument(format!("sample references unknown query {}", s.query_id))
            })?;
            Ok((s.template_id, q.touched_columns().collect()))
        })
        .collect::<Result<_>>()?;
    let templates: BTreeSet<u32> = info.iter().map(|(t, _)| *t).collect();
    let columns: BTreeSet<ColumnRef> = info.iter().flat_map(|(_, c)| c.iter().copied()).collect();
    if templates.len() < 3 || columns.len() < 3 {
        return Err(Error::InfeasibleSplit(format!(
            "need at least 3 templates and 3 columns, found {} and {}",
            templates.len(),
            columns.len()
        )));
    }

    let n = samples.len() as f64;
    let mut ht: BTreeSet<u32> = BTreeSet::new();
    let mut hc: BTreeSet<ColumnRef> = BTreeSet::new();
    let held = |ht: &BTreeSet<u32>, hc: &BTreeSet<ColumnRef>| {
        info.iter()
            .filter(|(t, cs)| ht.contains(t) || cs.iter().any(|c| hc.contains(c)))
            .count()
    };
    let (lo, hi) = (spec.eval - spec.tolerance, spec.eval + spec.tolerance);
    let tie = |h: &Holdout| match *h {
        Holdout::Template(t) => hashing::hash_words(&[seed, 0, u64::from(t)]),
        Holdout::Column(c) => hashing::hash_words(&[seed, 1, c.table as u64, c.column as u64]),
    };

    let mut current = 0usize;
    let mut template_turn = true;
    loop {
        let frac = current as f64 / n;
        let need_templates = ht.len() < spec.min_held_templates;
        let need_columns = hc.len() < spec.min_held_columns;
        if !need_templates && !need_columns && frac >= spec.eval {
            break;
        }
        let options = |kind_template: bool| -> Vec<(usize, u64, Holdout)> {
            let mut opts = Vec::new();
            if kind_template {
                for &t in templates.iter().filter(|t| !ht.contains(t)) {
                    let mut next = ht.clone();
                    next.insert(t);
                    let c = held(&next, &hc);
                    let h = Holdout::Template(t);
                    if c > current && c as f64 / n <= hi {
                        opts.push((c, tie(&h), h));
                    }
                }
            } else {
                for &col in columns.iter().filter(|c| !hc.contains(c)) {
                    let mut next = hc.clone();
                    next.insert(col);
                    let c = held(&ht, &next);
                    let h = Holdout::Column(col);
                    if c > current && c as f64 / n <= hi {
                        opts.push((c, tie(&h), h));
                    }
                }
            }
            opts.sort();
            opts
        };
        let prefer_template = match (need_templates, need_columns) {
            (true, false) => true,
            (false, true) => false,
            _ => template_turn,
        };
        let pick = options(prefer_template)
            .into_iter()
            .next()
            .or_else(|| options(!prefer_template).into_iter().next());
        let Some((count, _, holdout)) = pick else {
            break;
        };
        let next_frac = count as f64 / n;
        if !need_templates
            && !need_columns
            && frac >= lo
            && libm::fabs(next_frac - spec.eval) >= libm::fabs(frac - spec.eval)
        {
            break;
        }
        match holdout {
            Holdout::Template(t) => {
                ht.insert(t);
            }
            Holdout::Column(c) => {
                hc.insert(c);
            }
        }
        current = count;
        template_turn = !matches!(holdout, Holdout::Template(_));
    }

    let frac = current as f64 / n;
    if ht.len() < spec.min_held_templates
        || hc.len() < spec.min_held_columns
        || frac < lo
        || frac > hi
    {
        let mut per_template: BTreeMap<u32, usize> = BTreeMap::new();
        for (t, _) in &info {
            *per_template.entry(*t).or_default() += 1;
        }
        let (blocking, count) = per_template
            .iter()
            .filter(|(t, _)| !ht.contains(t))
            .max_by_key(|(t, c)| (**c, core::cmp::Reverse(**t)))
            .map(|(t, c)| (*t, *c))
            .unwrap_or((0, 0));
        let mut next_step: Option<(usize, String)> = None;
        for &t in templates.iter().filter(|t| !ht.contains(t)) {
            let mut next = ht.clone();
            next.insert(t);
            let c = held(&next, &hc);
            if c > current && next_step.as_ref().is_none_or(|(best, _)| c < *best) {
                next_step = Some((c, format!("template {t}")));
            }
        }
        for &col in columns.iter().filter(|c| !hc.contains(c)) {
            let mut next = hc.clone();
            next.insert(col);
            let c = held(&ht, &next);
            if c > current && next_step.as_ref().is_none_or(|(best, _)| c < *best) {
                next_step = Some((c, format!("column t{}.c{}", col.table, col.column)));
            }
        }
        let step = next_step.map_or(String::new(), |(c, what)| {
            format!("; the smallest further hold-out ({what}) would give {:.3}", c as f64 / n)
        });
        return Err(Error::InfeasibleSplit(format!(
            "held-out share {:.3} outside [{lo:.3}, {hi:.3}] with {} templates and {} columns held out{step}; \
             largest template {blocking} holds {:.1}% of the records",
            frac,
            ht.len(),
            hc.len(),
            100.0 * count as f64 / n
        )));
    }

    let mut d_eval = Vec::new();
    let mut rest = Vec::new();
    for (i, (t, cs)) in info.iter().enumerate() {
        if ht.contains(t) || cs.iter().any(|c| hc.contains(c)) {
            d_eval.push(i);
        } else {
            rest.push(i);
        }
    }
    let mut rng = hashing::stream(seed, 0x5B17);
    rest.shuffle(&mut rng);
    let n_test = libm::round(rest.len() as f64 * spec.test / (spec.train + spec.test)) as usize;
    let mut d_test = rest[..n_test].to_vec();
    let mut d_train = rest[n_test..].to_vec();
    d_test.sort_unstable();
    d_train.sort_unstable();
    for (name, part, target) in [
        ("d_train", &d_train, spec.train),
        ("d_test", &d_test, spec.test),
    ] {
        let share = part.len() as f64 / n;
        if libm::fabs(share - target) > spec.tolerance {
            return Err(Error::InfeasibleSplit(format!(
                "{name} share {share:.3} is not within {} of {target}",
                spec.tolerance
            )));
        }
    }
    Ok(DatasetSplits {
        d_train,
        d_test,
        d_eval,
        held_out_templates: ht,
        held_out_columns: hc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdb::{
        generate_schema, generate_workload, CostOracleParams, SchemaSpec, WorkloadSpec,
    };

    fn setup() -> (Schema, Vec<Query>) {
        let schema = generate_schema(&SchemaSpec::default(), 3).unwrap();
        let workload = generate_workload(
            &schema,
            &WorkloadSpec {
                templates: 10,
                queries_per_template: 10,
                ..WorkloadSpec::default()
            },
            4,
        )
        .unwrap();
        (schema, workload)
    }

    #[test]
    fn cross_product_size() {
        let (schema, workload) = setup();
        let oracle = CostOracle::new(&schema, CostOracleParams::default()).unwrap();
        let configs = generate_configs(
            &workload,
            &schema,
            &ConfigSpec {
                count: 5,
                ..ConfigSpec::default()
            },
            1,
        )
        .unwrap();
        assert_eq!(configs.len(), 5);
        let ds =
            build_dataset(&oracle, &workload[..10], &IndexConfig::empty(), &configs, 9).unwrap();
        assert_eq!(ds.len(), 50);
        assert_eq!(
            ds,
            build_dataset(&oracle, &workload[..10], &IndexConfig::empty(), &configs, 9).unwrap()
        );
    }

    #[test]
    fn base_rows_have_zero_noiseless_benefit() {
        let (schema, workload) = setup();
        let oracle = CostOracle::new(
            &schema,
            CostOracleParams {
                noise_sigma: 0.0,
                ..CostOracleParams::default()
            },
        )
        .unwrap();
        let ds = build_dataset(
            &oracle,
            &workload,
            &IndexConfig::empty(),
            &[IndexConfig::empty()],
            1,
        )
        .unwrap();
        assert!(ds
            .iter()
            .all(|s| s.benefit == 0.0 && s.true_benefit() == 0.0));
    }

    #[test]
    fn empty_inputs_rejected() {
        let (schema, workload) = setup();
        let oracle = CostOracle::new(&schema, CostOracleParams::default()).unwrap();
        assert!(build_dataset(
            &oracle,
            &[],
            &IndexConfig::empty(),
            &[IndexConfig::empty()],
            1
        )
        .is_err());
        assert!(build_dataset(&oracle, &workload, &IndexConfig::empty(), &[], 1).is_err());
    }

    #[test]
    fn split_meets_targets_and_is_reproducible() {
        let (schema, workload) = setup();
        let oracle = CostOracle::new(&schema, CostOracleParams::default()).unwrap();
        let configs = generate_configs(&workload, &schema, &ConfigSpec::default(), 2).unwrap();
        let ds = build_dataset(&oracle, &workload, &IndexConfig::empty(), &configs, 2).unwrap();
        let spec = SplitSpec::default();
        let s = split_ood(&ds, &workload, &spec, 8).unwrap();
        s.labels(ds.len()).unwrap();
        let n = ds.len() as f64;
        assert!((s.d_eval.len() as f64 / n - 0.35).abs() <= 0.05);
        assert!((s.d_train.len() as f64 / n - 0.50).abs() <= 0.05);
        assert!(s.held_out_templates.len() >= 2 && !s.held_out_columns.is_empty());
        for &i in &s.d_eval {
            assert!(s.is_held_out(&workload[ds[i].query_id as usize]));
        }
        assert_eq!(s, split_ood(&ds, &workload, &spec, 8).unwrap());
    }

    #[test]
    fn dominant_template_is_named() {
        let (schema, mut workload) = setup();
        for q in &mut workload {
            q.template_id = if q.id < 90 { 0 } else { 1 + q.id % 3 };
        }
        let oracle = CostOracle::new(&schema, CostOracleParams::default()).unwrap();
        let ds = build_dataset(
            &oracle,
            &workload,
            &IndexConfig::empty(),
            &[IndexConfig::empty()],
            1,
        )
        .unwrap();
        let err = split_ood(&ds, &workload, &SplitSpec::default(), 1).unwrap_err();
        assert!(
            matches!(&err, Error::InfeasibleSplit(m) if m.contains("template 0")),
            "{err}"
        );
    }
}
