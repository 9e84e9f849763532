//! Synthetic database substrate.
//!
//! A [`Schema`] of tables and columns, a [`Query`] workload grouped into
//! templates, index configurations, and two cost sources:
//!
//! - [`CostOracle`]: the ground truth. Each touched table costs
//!   `scan_cost_per_row * row_count`; the term shrinks by
//!   `selectivity ^ index_benefit_exponent` when the configuration holds an
//!   index whose leading column is a column the query filters on (the most
//!   selective such index wins). A noisy draw multiplies the total by
//!   `exp(N(0, noise_sigma))`.
//! - [`WhatIf`]: a deterministic, biased stand-in for an optimizer's
//!   hypothetical-index costing. The error is frozen per query and per plan,
//!   where the plan is the set of indexes the query would actually use.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::hashing::{self, Hasher64};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub distinct_values: u64,
    pub width_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub row_count: u64,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn row_width(&self) -> u64 {
        self.columns.iter().map(|c| u64::from(c.width_bytes)).sum()
    }

    pub fn bytes(&self) -> u64 {
        self.row_count * self.row_width()
    }
}

/// Reference to `schema.tables[table].columns[column]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: usize,
    pub column: usize,
}

impl ColumnRef {
    pub const fn new(table: usize, column: usize) -> Self {
        Self { table, column }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub tables: Vec<Table>,
}

impl Schema {
    /// Checks name uniqueness, positivity and `distinct_values <= row_count`.
    pub fn validate(&self) -> Result<()> {
        if self.tables.is_empty() {
            return Err(Error::InvalidSchema("no tables".into()));
        }
        let mut names = BTreeSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate table {}", t.name)));
            }
            if t.row_count == 0 {
                return Err(Error::InvalidSchema(format!(
                    "table {} has no rows",
                    t.name
                )));
            }
            if t.columns.is_empty() {
                return Err(Error::InvalidSchema(format!(
                    "table {} has no columns",
                    t.name
                )));
            }
            let mut cols = BTreeSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.as_str()) {
                    return Err(Error::InvalidSchema(format!(
                        "duplicate column {}.{}",
                        t.name, c.name
                    )));
                }
                if c.width_bytes == 0 || c.distinct_values == 0 || c.distinct_values > t.row_count {
                    return Err(Error::InvalidSchema(format!(
                        "column {}.{} violates width/distinct bounds",
                        t.name, c.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn table(&self, table: usize) -> Result<&Table> {
        self.tables.get(table).ok_or(Error::UnknownTable(table))
    }

    pub fn column(&self, col: ColumnRef) -> Result<&Column> {
        self.table(col.table)?
            .columns
            .get(col.column)
            .ok_or(Error::UnknownColumn {
                table: col.table,
                column: col.column,
            })
    }

    pub fn column_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    /// Global 1-based column code; 0 is reserved for padding.
    pub fn column_code(&self, col: ColumnRef) -> Result<u32> {
        self.column(col)?;
        let before: usize = self.tables[..col.table]
            .iter()
            .map(|t| t.columns.len())
            .sum();
        Ok((before + col.column + 1) as u32)
    }

    /// Every column in code order.
    pub fn columns(&self) -> impl Iterator<Item = ColumnRef> + '_ {
        self.tables
            .iter()
            .enumerate()
            .flat_map(|(ti, t)| (0..t.columns.len()).map(move |ci| ColumnRef::new(ti, ci)))
    }

    pub fn max_row_count(&self) -> u64 {
        self.tables.iter().map(|t| t.row_count).max().unwrap_or(1)
    }

    pub fn max_row_width(&self) -> u64 {
        self.tables.iter().map(Table::row_width).max().unwrap_or(1)
    }

    pub fn total_bytes(&self) -> u64 {
        self.tables.iter().map(Table::bytes).sum()
    }

    pub fn column_name(&self, col: ColumnRef) -> Result<String> {
        let t = self.table(col.table)?;
        Ok(format!("{}.{}", t.name, self.column(col)?.name))
    }
}

/// Parameters for [`generate_schema`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemaSpec {
    pub tables: usize,
    pub columns_per_table: usize,
    pub min_rows: u64,
    pub max_rows: u64,
    pub min_width_bytes: u32,
    pub max_width_bytes: u32,
}

impl Default for SchemaSpec {
    fn default() -> Self {
        Self {
            tables: 4,
            columns_per_table: 6,
            min_rows: 10_000,
            max_rows: 1_000_000,
            min_width_bytes: 4,
            max_width_bytes: 32,
        }
    }
}

/// Generates a schema with log-uniform row counts and uniform column widths.
pub fn generate_schema(spec: &SchemaSpec, seed: u64) -> Result<Schema> {
    if spec.tables == 0 {
        return Err(Error::InvalidSchemaSpec(
            "at least one table is required".into(),
        ));
    }
    if spec.columns_per_table == 0 {
        return Err(Error::InvalidSchemaSpec(
            "at least one column per table is required".into(),
        ));
    }
    if spec.min_rows == 0 || spec.min_rows > spec.max_rows {
        return Err(Error::InvalidSchemaSpec(
            "row bounds must satisfy 0 < min <= max".into(),
        ));
    }
    if spec.min_width_bytes == 0 || spec.min_width_bytes > spec.max_width_bytes {
        return Err(Error::InvalidSchemaSpec(
            "width bounds must satisfy 0 < min <= max".into(),
        ));
    }
    let mut rng = hashing::stream(seed, 0x5C4E_3A00);
    let (lo, hi) = (
        libm::log(spec.min_rows as f64),
        libm::log(spec.max_rows as f64),
    );
    let tables = (0..spec.tables)
        .map(|ti| {
            let rows = if spec.min_rows == spec.max_rows {
                spec.min_rows
            } else {
                let r = libm::exp(rng.random_range(lo..=hi)) as u64;
                r.clamp(spec.min_rows, spec.max_rows)
            };
            let columns = (0..spec.columns_per_table)
                .map(|ci| {
                    let frac: f64 = rng.random_range(0.0..1.0);
                    let distinct = (libm::pow(rows as f64, frac) as u64).clamp(1, rows);
                    Column {
                        name: format!("c{ci}"),
                        distinct_values: distinct,
                        width_bytes: rng.random_range(spec.min_width_bytes..=spec.max_width_bytes),
                    }
                })
                .collect();
            Table {
                name: format!("t{ti}"),
                row_count: rows,
                columns,
            }
        })
        .collect();
    let schema = Schema { tables };
    schema.validate()?;
    Ok(schema)
}

/// A filter (or a non-filtering reference when `selectivity == 1`) on one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: ColumnRef,
    pub selectivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: u32,
    pub template_id: u32,
    pub predicates: Vec<Predicate>,
    pub join_edges: Vec<(usize, usize)>,
    pub weight: f64,
}

impl Query {
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        let bad = |reason: String| Error::InvalidQuery {
            id: self.id,
            reason,
        };
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(bad(format!("weight {} must be positive", self.weight)));
        }
        if self.predicates.is_empty() {
            return Err(bad("no predicates".into()));
        }
        for p in &self.predicates {
            schema.column(p.column)?;
            if !(p.selectivity > 0.0 && p.selectivity <= 1.0) {
                return Err(bad(format!("selectivity {} outside (0, 1]", p.selectivity)));
            }
        }
        for &(a, b) in &self.join_edges {
            schema.table(a)?;
            schema.table(b)?;
        }
        Ok(())
    }

    /// Distinct tables referenced by predicates or join edges, ascending.
    pub fn touched_tables(&self) -> Vec<usize> {
        let mut set: BTreeSet<usize> = self.predicates.iter().map(|p| p.column.table).collect();
        for &(a, b) in &self.join_edges {
            set.insert(a);
            set.insert(b);
        }
        set.into_iter().collect()
    }

    pub fn touches_table(&self, table: usize) -> bool {
        self.predicates.iter().any(|p| p.column.table == table)
            || self
                .join_edges
                .iter()
                .any(|&(a, b)| a == table || b == table)
    }

    pub fn touched_columns(&self) -> impl Iterator<Item = ColumnRef> + '_ {
        self.predicates.iter().map(|p| p.column)
    }
}

/// Shape of a generated workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSpec {
    pub templates: usize,
    pub queries_per_template: usize,
    pub max_tables_per_template: usize,
    pub max_predicates: usize,
    /// Probability that a template column is referenced without filtering.
    pub unfiltered_probability: f64,
    pub min_selectivity: f64,
    pub max_selectivity: f64,
    /// Half-width of the per-query log-selectivity jitter around the template center.
    pub selectivity_spread: f64,
    pub max_weight: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            templates: 8,
            queries_per_template: 30,
            max_tables_per_template: 2,
            max_predicates: 4,
            unfiltered_probability: 0.2,
            min_selectivity: 0.001,
            max_selectivity: 0.5,
            selectivity_spread: 1.0,
            max_weight: 5.0,
        }
    }
}

/// Generates `templates * queries_per_template` queries. Queries of one
/// template share their columns and join edges and differ in selectivities
/// and weights.
pub fn generate_workload(schema: &Schema, spec: &WorkloadSpec, seed: u64) -> Result<Vec<Query>> {
    if spec.templates == 0 {
        return Err(Error::InvalidArgument(
            "at least one template is required".into(),
        ));
    }
    if spec.max_predicates == 0 || spec.max_tables_per_template == 0 {
        return Err(Error::InvalidArgument(
            "templates need at least one table and predicate".into(),
        ));
    }
    if !(spec.min_selectivity > 0.0
        && spec.min_selectivity <= spec.max_selectivity
        && spec.max_selectivity <= 1.0)
    {
        return Err(Error::InvalidArgument(
            "selectivity bounds must satisfy 0 < min <= max <= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.unfiltered_probability) || spec.max_weight < 1.0 {
        return Err(Error::InvalidArgument(
            "invalid unfiltered probability or weight bound".into(),
        ));
    }
    schema.validate()?;
    let mut rng = hashing::stream(seed, 0x3041_u64);
    let mut queries = Vec::with_capacity(spec.templates * spec.queries_per_template);
    let (slo, shi) = (
        libm::log(spec.min_selectivity),
        libm::log(spec.max_selectivity),
    );

    for template_id in 0..spec.templates {
        let n_tables = rng.random_range(1..=spec.max_tables_per_template.min(schema.tables.len()));
        let mut tables: Vec<usize> = (0..schema.tables.len()).collect();
        tables.shuffle(&mut rng);
        tables.truncate(n_tables);
        tables.sort_unstable();

        let pool: Vec<ColumnRef> = tables
            .iter()
            .flat_map(|&t| (0..schema.tables[t].columns.len()).map(move |c| ColumnRef::new(t, c)))
            .collect();
        let max_preds = spec.max_predicates.min(pool.len()).max(n_tables);
        let n_preds = rng.random_range(n_tables..=max_preds);

        // One column from each table first so every chosen table is filtered on.
        let mut chosen: BTreeSet<ColumnRef> = BTreeSet::new();
        for &t in &tables {
            let c = rng.random_range(0..schema.tables[t].columns.len());
            chosen.insert(ColumnRef::new(t, c));
        }
        let mut rest: Vec<ColumnRef> = pool
            .iter()
            .copied()
            .filter(|c| !chosen.contains(c))
            .collect();
        rest.shuffle(&mut rng);
        chosen.extend(rest.into_iter().take(n_preds - chosen.len()));

        // (column, center log-selectivity or None when unfiltered)
        let mut shape: Vec<(ColumnRef, Option<f64>)> = chosen
            .into_iter()
            .map(|c| {
                let unfiltered = rng.random_bool(spec.unfiltered_probability);
                (c, (!unfiltered).then(|| rng.random_range(slo..=shi)))
            })
            .collect();
        if shape.iter().all(|(_, s)| s.is_none()) {
            shape[0].1 = Some(rng.random_range(slo..=shi));
        }
        let join_edges: Vec<(usize, usize)> = tables.windows(2).map(|w| (w[0], w[1])).collect();

        for _ in 0..spec.queries_per_template {
            let predicates = shape
                .iter()
                .map(|&(column, center)| {
                    let selectivity = match center {
                        None => 1.0,
                        Some(c) => {
                            let jitter = rng.random_range(-1.0..=1.0) * spec.selectivity_spread;
                            libm::exp(c + jitter).clamp(spec.min_selectivity * 0.1, 1.0)
                        }
                    };
                    Predicate {
                        column,
                        selectivity,
                    }
                })
                .collect();
            let weight = rng.random_range(1.0..=spec.max_weight);
            queries.push(Query {
                id: queries.len() as u32,
                template_id: template_id as u32,
                predicates,
                join_edges: join_edges.clone(),
                weight,
            });
        }
    }
    Ok(queries)
}

/// An index on one table over an ordered column list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Index {
    pub table: usize,
    pub columns: Vec<usize>,
}

impl Index {
    pub fn new(table: usize, columns: Vec<usize>) -> Self {
        Self { table, columns }
    }

    pub fn single(col: ColumnRef) -> Self {
        Self::new(col.table, alloc::vec![col.column])
    }

    pub fn leading(&self) -> ColumnRef {
        ColumnRef::new(self.table, self.columns[0])
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        let table = schema.table(self.table)?;
        if self.columns.is_empty() {
            return Err(Error::InvalidIndex("index without columns".into()));
        }
        let mut seen = BTreeSet::new();
        for &c in &self.columns {
            if c >= table.columns.len() {
                return Err(Error::UnknownColumn {
                    table: self.table,
                    column: c,
                });
            }
            if !seen.insert(c) {
                return Err(Error::InvalidIndex(format!("column {c} repeated")));
            }
        }
        Ok(())
    }

    /// Bytes per row summed over the indexed columns.
    pub fn width_bytes(&self, schema: &Schema) -> Result<u64> {
        let table = schema.table(self.table)?;
        self.columns
            .iter()
            .map(|&c| {
                table
                    .columns
                    .get(c)
                    .map(|col| u64::from(col.width_bytes))
                    .ok_or(Error::UnknownColumn {
                        table: self.table,
                        column: c,
                    })
            })
            .sum()
    }

    /// `row_count * sum(width_bytes)` of the indexed columns.
    pub fn size_bytes(&self, schema: &Schema) -> Result<u64> {
        Ok(schema.table(self.table)?.row_count * self.width_bytes(schema)?)
    }

    fn hash_into(&self, h: &mut Hasher64) {
        h.word(self.table as u64).word(self.columns.len() as u64);
        for &c in &self.columns {
            h.word(c as u64);
        }
    }
}

/// A set of indexes; duplicates are impossible by construction.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IndexConfig {
    pub indexes: BTreeSet<Index>,
}

impl IndexConfig {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_indexes(indexes: impl IntoIterator<Item = Index>) -> Self {
        Self {
            indexes: indexes.into_iter().collect(),
        }
    }

    pub fn with(&self, index: Index) -> Self {
        let mut next = self.clone();
        next.indexes.insert(index);
        next
    }

    pub fn contains(&self, index: &Index) -> bool {
        self.indexes.contains(index)
    }

    pub fn len(&self) -> usize {
        self.indexes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indexes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Index> {
        self.indexes.iter()
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        self.indexes.iter().try_for_each(|i| i.validate(schema))
    }

    pub fn size_bytes(&self, schema: &Schema) -> Result<u64> {
        self.indexes.iter().map(|i| i.size_bytes(schema)).sum()
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Hasher64::new();
        h.word(self.indexes.len() as u64);
        for idx in &self.indexes {
            idx.hash_into(&mut h);
        }
        h.finish()
    }

    /// Whether some index in the configuration leads with `col`.
    pub fn has_leading(&self, col: ColumnRef) -> bool {
        self.indexes.iter().any(|i| i.leading() == col)
    }

    /// Whether `col` appears anywhere in some index of the configuration.
    pub fn covers(&self, col: ColumnRef) -> bool {
        self.indexes
            .iter()
            .any(|i| i.table == col.table && i.columns.contains(&col.column))
    }

    /// The narrowest index leading with `col`, if any.
    pub fn leading_index(&self, col: ColumnRef) -> Option<&Index> {
        self.indexes
            .iter()
            .filter(|i| i.leading() == col)
            .min_by_key(|i| i.columns.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostOracleParams {
    pub scan_cost_per_row: f64,
    pub index_benefit_exponent: f64,
    /// Standard deviation of the log-normal multiplicative execution noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for CostOracleParams {
    fn default() -> Self {
        Self {
            scan_cost_per_row: 1.0,
            index_benefit_exponent: 1.0,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

/// Noise switch for [`CostOracle::cost`]. `On(nonce)` selects one reproducible draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Draw {
    Off,
    On(u64),
}

/// Access path chosen for one touched table.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TablePlan<'a> {
    table: usize,
    index: Option<&'a Index>,
    factor: f64,
}

/// Ground-truth cost source.
#[derive(Debug, Clone, Copy)]
pub struct CostOracle<'a> {
    schema: &'a Schema,
    params: CostOracleParams,
}

impl<'a> CostOracle<'a> {
    pub fn new(schema: &'a Schema, params: CostOracleParams) -> Result<Self> {
        if !(params.scan_cost_per_row > 0.0)
            || !(params.index_benefit_exponent >= 0.0)
            || !(params.noise_sigma >= 0.0)
        {
            return Err(Error::InvalidArgument(
                "cost oracle parameters out of range".into(),
            ));
        }
        Ok(Self { schema, params })
    }

    pub fn schema(&self) -> &'a Schema {
        self.schema
    }

    pub fn params(&self) -> &CostOracleParams {
        &self.params
    }

    fn plan<'c>(&self, q: &Query, config: &'c IndexConfig) -> Result<Vec<TablePlan<'c>>> {
        q.validate(self.schema)?;
        config.validate(self.schema)?;
        let exp = self.params.index_benefit_exponent;
        Ok(q.touched_tables()
            .into_iter()
            .map(|table| {
                let mut best = TablePlan {
                    table,
                    index: None,
                    factor: 1.0,
                };
                for p in q.predicates.iter().filter(|p| p.column.table == table) {
                    if let Some(idx) = config.leading_index(p.column) {
                        let factor = libm::pow(p.selectivity, exp);
                        if factor < best.factor {
                            best = TablePlan {
                                table,
                                index: Some(idx),
                                factor,
                            };
                        }
                    }
                }
                best
            })
            .collect())
    }

    /// `c(q, I)`.
    pub fn cost(&self, q: &Query, config: &IndexConfig, draw: Draw) -> Result<f64> {
        let plan = self.plan(q, config)?;
        let base: f64 = plan
            .iter()
            .map(|tp| {
                self.params.scan_cost_per_row
                    * self.schema.tables[tp.table].row_count as f64
                    * tp.factor
            })
            .sum();
        Ok(match draw {
            Draw::Off => base,
            Draw::On(_) if self.params.noise_sigma == 0.0 => base,
            Draw::On(nonce) => {
                let key = hashing::hash_words(&[
                    self.params.seed,
                    u64::from(q.id),
                    config.fingerprint(),
                    nonce,
                ]);
                base * libm::exp(self.params.noise_sigma * hashing::normal_from_key(key))
            }
        })
    }

    /// `c(q, I) - c(q, I')` with one independent noisy draw per side.
    pub fn observed_benefit(
        &self,
        q: &Query,
        base: &IndexConfig,
        config: &IndexConfig,
        nonce: u64,
    ) -> Result<f64> {
        let before = self.cost(q, base, Draw::On(hashing::hash_words(&[nonce, 0])))?;
        let after = self.cost(q, config, Draw::On(hashing::hash_words(&[nonce, 1])))?;
        Ok(before - after)
    }

    /// Noiseless `c(q, I0) - c(q, I)`.
    pub fn true_benefit(&self, q: &Query, base: &IndexConfig, config: &IndexConfig) -> Result<f64> {
        Ok(self.cost(q, base, Draw::Off)? - self.cost(q, config, Draw::Off)?)
    }

    /// Weighted noiseless workload cost.
    pub fn workload_cost(&self, workload: &[Query], config: &IndexConfig) -> Result<f64> {
        workload
            .iter()
            .map(|q| Ok(q.weight * self.cost(q, config, Draw::Off)?))
            .sum()
    }

    /// Hash of the indexes `q` would use under `config`.
    pub fn plan_key(&self, q: &Query, config: &IndexConfig) -> Result<u64> {
        let mut h = Hasher64::new();
        for tp in self.plan(q, config)? {
            h.word(tp.table as u64);
            match tp.index {
                Some(idx) => idx.hash_into(&mut h),
                None => {
                    h.word(u64::MAX);
                }
            }
        }
        Ok(h.finish())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WhatIfParams {
    pub bias_factor: f64,
    /// Standard deviation of the frozen log-error.
    pub error_sigma: f64,
    pub seed: u64,
}

impl Default for WhatIfParams {
    fn default() -> Self {
        Self {
            bias_factor: 1.0,
            error_sigma: 0.1,
            seed: 1,
        }
    }
}

/// Hypothetical-index cost estimator with deterministic per-plan error.
#[derive(Debug, Clone, Copy)]
pub struct WhatIf<'a> {
    oracle: CostOracle<'a>,
    params: WhatIfParams,
}

impl<'a> WhatIf<'a> {
    pub fn new(oracle: CostOracle<'a>, params: WhatIfParams) -> Result<Self> {
        if !(params.bias_factor > 0.0) || !(params.error_sigma >= 0.0) {
            return Err(Error::InvalidArgument(
                "what-if parameters out of range".into(),
            ));
        }
        Ok(Self { oracle, params })
    }

    pub fn params(&self) -> &WhatIfParams {
        &self.params
    }

    /// `bias * c(q, I) * exp(e)` with `e ~ N(0, error_sigma)` frozen per (query, plan).
    pub fn estimate(&self, q: &Query, config: &IndexConfig) -> Result<f64> {
        let cost = self.oracle.cost(q, config, Draw::Off)?;
        let log_error = if self.params.error_sigma == 0.0 {
            0.0
        } else {
            let key = hashing::hash_words(&[
                self.params.seed,
                u64::from(q.id),
                self.oracle.plan_key(q, config)?,
            ]);
            self.params.error_sigma * hashing::normal_from_key(key)
        };
        Ok(self.params.bias_factor * cost * libm::exp(log_error))
    }

    pub fn benefit(&self, q: &Query, base: &IndexConfig, config: &IndexConfig) -> Result<f64> {
        Ok(self.estimate(q, base)? - self.estimate(q, config)?)
    }
}
