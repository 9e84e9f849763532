//! Fixed-length feature sets for `(query, I0, I)` triples.
//!
//! Every predicate of the query occupies one slot; slots are ordered by
//! column and padded with all-zero vectors up to the experiment constant `t`.
//! A raw slot vector (`V1`) has [`RAW_DIM`] coordinates laid out as
//! [`SELECTIVITY`], [`ROWS`], [`COLUMN_CODE`], [`LEADS_IN_BASE`],
//! [`LEADS_IN_CONFIG`], [`COVERED_IN_CONFIG`] and [`INDEX_WIDTH`].
//! The column code is the only categorical coordinate; [`Embedder`] turns it
//! into a one-hot block to build `V2`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::synthdb::{IndexConfig, Query, Schema};
use crate::{Error, Result};

pub const SELECTIVITY: usize = 0;
pub const ROWS: usize = 1;
pub const COLUMN_CODE: usize = 2;
pub const LEADS_IN_BASE: usize = 3;
pub const LEADS_IN_CONFIG: usize = 4;
pub const COVERED_IN_CONFIG: usize = 5;
pub const INDEX_WIDTH: usize = 6;
pub const RAW_DIM: usize = 7;

/// `V1` and `V2` for one sample, stored row-major (`slots x dim`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub slots: usize,
    pub dim1: usize,
    pub dim2: usize,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
}

impl FeatureSet {
    pub fn raw(&self, slot: usize) -> &[f64] {
        &self.v1[slot * self.dim1..(slot + 1) * self.dim1]
    }

    pub fn embedded(&self, slot: usize) -> &[f64] {
        &self.v2[slot * self.dim2..(slot + 1) * self.dim2]
    }
}

/// Raw slot vectors (`V1`) flattened row-major, `slots * RAW_DIM` long.
pub fn extract_raw(
    q: &Query,
    base: &IndexConfig,
    config: &IndexConfig,
    schema: &Schema,
    slots: usize,
) -> Result<Vec<f64>> {
    q.validate(schema)?;
    base.validate(schema)?;
    config.validate(schema)?;
    if q.predicates.len() > slots {
        return Err(Error::TooManySlots {
            id: q.id,
            slots: q.predicates.len(),
            capacity: slots,
        });
    }
    let max_rows = schema.max_row_count() as f64;
    let max_width = schema.max_row_width() as f64;
    let mut preds = q.predicates.clone();
    preds.sort_by(|a, b| a.column.cmp(&b.column));

    let mut v1 = vec![0.0; slots * RAW_DIM];
    for (slot, p) in preds.iter().enumerate() {
        let row = &mut v1[slot * RAW_DIM..(slot + 1) * RAW_DIM];
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        row[SELECTIVITY] = p.selectivity;
        row[ROWS] = schema.tables[p.column.table].row_count as f64 / max_rows;
        row[COLUMN_CODE] = f64::from(schema.column_code(p.column)?);
        row[LEADS_IN_BASE] = flag(base.has_leading(p.column));
        row[LEADS_IN_CONFIG] = flag(config.has_leading(p.column));
        row[COVERED_IN_CONFIG] = flag(config.covers(p.column));
        row[INDEX_WIDTH] = match config.leading_index(p.column) {
            Some(idx) => idx.width_bytes(schema)? as f64 / max_width,
            None => 0.0,
        };
    }
    Ok(v1)
}

/// Known codes of one categorical coordinate plus a trailing unknown slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    known: Vec<u32>,
}

impl Vocabulary {
    pub fn new(codes: impl IntoIterator<Item = u32>) -> Self {
        let mut known: Vec<u32> = codes.into_iter().collect();
        known.sort_unstable();
        known.dedup();
        Self { known }
    }

    /// Block width including the unknown slot.
    pub fn size(&self) -> usize {
        self.known.len() + 1
    }

    pub fn known(&self) -> &[u32] {
        &self.known
    }

    pub fn position(&self, code: u32) -> usize {
        self.known.binary_search(&code).unwrap_or(self.known.len())
    }

    pub fn contains(&self, code: u32) -> bool {
        self.known.binary_search(&code).is_ok()
    }
}

/// One-hot expansion of the categorical coordinates of raw slot vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Embedder {
    dim1: usize,
    /// (coordinate, vocabulary), ascending by coordinate.
    categorical: Vec<(usize, Vocabulary)>,
}

impl Embedder {
    pub fn new(dim1: usize, mut categorical: Vec<(usize, Vocabulary)>) -> Result<Self> {
        categorical.sort_by_key(|(c, _)| *c);
        if categorical.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument(
                "categorical coordinate listed twice".into(),
            ));
        }
        if categorical.iter().any(|(c, _)| *c >= dim1) {
            return Err(Error::DimensionMismatch {
                expected: dim1,
                actual: categorical.last().map_or(0, |(c, _)| c + 1),
            });
        }
        Ok(Self { dim1, categorical })
    }

    /// The embedder used by [`Featurizer`]: one-hot over [`COLUMN_CODE`].
    pub fn for_columns(vocabulary: Vocabulary) -> Self {
        Self {
            dim1: RAW_DIM,
            categorical: vec![(COLUMN_CODE, vocabulary)],
        }
    }

    pub fn dim1(&self) -> usize {
        self.dim1
    }

    /// `dim1 - #categorical + sum of vocabulary sizes`.
    pub fn dim2(&self) -> usize {
        self.dim1 - self.categorical.len()
            + self
                .categorical
                .iter()
                .map(|(_, v)| v.size())
                .sum::<usize>()
    }

    pub fn vocabularies(&self) -> impl Iterator<Item = &Vocabulary> {
        self.categorical.iter().map(|(_, v)| v)
    }

    /// Embeds one raw vector: numeric coordinates first (in order), then one
    /// block per categorical coordinate. An all-zero (padding) vector maps to
    /// an all-zero output.
    pub fn embed_vector(&self, v1: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if v1.len() != self.dim1 {
            return Err(Error::DimensionMismatch {
                expected: self.dim1,
                actual: v1.len(),
            });
        }
        let start = out.len();
        let padding = v1.iter().all(|&x| x == 0.0);
        let mut cat = self.categorical.iter().map(|(c, _)| *c).peekable();
        for (i, &x) in v1.iter().enumerate() {
            if cat.peek() == Some(&i) {
                cat.next();
            } else {
                out.push(x);
            }
        }
        for (coord, vocab) in &self.categorical {
            let block = out.len();
            out.resize(block + vocab.size(), 0.0);
            if !padding {
                let code = v1[*coord];
                let pos = if code >= 0.0 && code == libm::trunc(code) && code <= f64::from(u32::MAX)
                {
                    vocab.position(code as u32)
                } else {
                    vocab.size() - 1
                };
                out[block + pos] = 1.0;
            }
        }
        debug_assert_eq!(out.len() - start, self.dim2());
        Ok(())
    }

    /// Embeds a flattened list of raw vectors.
    pub fn embed(&self, v1: &[f64]) -> Result<Vec<f64>> {
        if v1.len() % self.dim1 != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.dim1 * (v1.len() / self.dim1 + 1),
                actual: v1.len(),
            });
        }
        let mut out = Vec::with_capacity(v1.len() / self.dim1 * self.dim2());
        for chunk in v1.chunks_exact(self.dim1) {
            self.embed_vector(chunk, &mut out)?;
        }
        Ok(out)
    }
}

/// Extraction plus embedding with a fixed slot count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub slots: usize,
    pub embedder: Embedder,
}

impl Featurizer {
    pub fn new(slots: usize, vocabulary: Vocabulary) -> Result<Self> {
        if slots == 0 {
            return Err(Error::InvalidArgument("slot count must be positive".into()));
        }
        Ok(Self {
            slots,
            embedder: Embedder::for_columns(vocabulary),
        })
    }

    pub fn dim1(&self) -> usize {
        self.embedder.dim1()
    }

    pub fn dim2(&self) -> usize {
        self.embedder.dim2()
    }

    pub fn extract(
        &self,
        q: &Query,
        base: &IndexConfig,
        config: &IndexConfig,
        schema: &Schema,
    ) -> Result<FeatureSet> {
        let v1 = extract_raw(q, base, config, schema, self.slots)?;
        let v2 = self.embedder.embed(&v1)?;
        Ok(FeatureSet {
            slots: self.slots,
            dim1: self.dim1(),
            dim2: self.dim2(),
            v1,
            v2,
        })
    }
}

/// Column codes touched by the given queries.
pub fn vocabulary_of<'q>(
    queries: impl IntoIterator<Item = &'q Query>,
    schema: &Schema,
) -> Result<Vocabulary> {
    let mut codes = Vec::new();
    for q in queries {
        for c in q.touched_columns() {
            codes.push(schema.column_code(c)?);
        }
    }
    Ok(Vocabulary::new(codes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdb::{generate_schema, ColumnRef, Index, Predicate, SchemaSpec};

    fn schema() -> Schema {
        generate_schema(
            &SchemaSpec {
                tables: 2,
                columns_per_table: 3,
                ..SchemaSpec::default()
            },
            5,
        )
        .unwrap()
    }

    fn query(preds: &[(usize, usize, f64)]) -> Query {
        Query {
            id: 1,
            template_id: 0,
            predicates: preds
                .iter()
                .map(|&(t, c, s)| Predicate {
                    column: ColumnRef::new(t, c),
                    selectivity: s,
                })
                .collect(),
            join_edges: vec![],
            weight: 1.0,
        }
    }

    #[test]
    fn one_hot_blocks() {
        let vocab = Vocabulary::new([0, 1, 2]);
        assert_eq!(vocab.size(), 4);
        let e = Embedder::new(2, vec![(0, vocab)]).unwrap();
        assert_eq!(e.dim2(), 2 - 1 + 4);
        assert_eq!(
            e.embed(&[2.0, 0.37]).unwrap(),
            vec![0.37, 0.0, 0.0, 1.0, 0.0]
        );
        // unseen code lands in the unknown slot
        assert_eq!(e.embed(&[9.0, 0.5]).unwrap(), vec![0.5, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(e.embed(&[0.0, 0.0]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn padding_and_dims() {
        let s = schema();
        let q = query(&[(1, 2, 0.1)]);
        let f = Featurizer::new(4, vocabulary_of([&q], &s).unwrap()).unwrap();
        let fs = f
            .extract(&q, &IndexConfig::empty(), &IndexConfig::empty(), &s)
            .unwrap();
        assert_eq!(fs.v1.len(), 4 * RAW_DIM);
        assert_eq!(fs.v2.len(), 4 * f.dim2());
        assert!(fs.raw(0).iter().any(|&x| x != 0.0));
        for slot in 1..4 {
            assert!(fs.raw(slot).iter().all(|&x| x == 0.0));
            assert!(fs.embedded(slot).iter().all(|&x| x == 0.0));
        }
        assert_eq!(
            fs,
            f.extract(&q, &IndexConfig::empty(), &IndexConfig::empty(), &s)
                .unwrap()
        );
    }

    #[test]
    fn selectivity_only_changes_its_coordinate() {
        let s = schema();
        let a = query(&[(0, 1, 0.1), (1, 0, 0.4)]);
        let b = query(&[(0, 1, 0.3), (1, 0, 0.4)]);
        let cfg = IndexConfig::from_indexes([Index::new(0, vec![1])]);
        let f = Featurizer::new(3, vocabulary_of([&a], &s).unwrap()).unwrap();
        let fa = f.extract(&a, &IndexConfig::empty(), &cfg, &s).unwrap();
        let fb = f.extract(&b, &IndexConfig::empty(), &cfg, &s).unwrap();
        let diff: Vec<usize> = (0..fa.v1.len()).filter(|&i| fa.v1[i] != fb.v1[i]).collect();
        assert_eq!(diff, vec![SELECTIVITY]);
        assert_eq!(fa.raw(0)[LEADS_IN_CONFIG], 1.0);
        assert!(fa.raw(0)[INDEX_WIDTH] > 0.0);
    }

    #[test]
    fn too_many_slots() {
        let s = schema();
        let q = query(&[(0, 0, 0.1), (0, 1, 0.2), (0, 2, 0.3)]);
        let f = Featurizer::new(2, Vocabulary::new([])).unwrap();
        assert!(matches!(
            f.extract(&q, &IndexConfig::empty(), &IndexConfig::empty(), &s),
            Err(Error::TooManySlots {
                slots: 3,
                capacity: 2,
                ..
            })
        ));
    }
}
