//! On-disk layouts: JSON documents, the dataset and per-sample CSVs, and the
//! versioned model file.

use std::fs;
use std::path::Path;

use anyhow::Context;
use benefit_uq_core::estimator::EstimatorModel;
use benefit_uq_core::evalkit::{BeRow, Sample, Split, UqRow};
use benefit_uq_core::featurize::FeatureSet;
use benefit_uq_core::neural::DenseNet;
use benefit_uq_core::synthdb::{Index, IndexConfig, Schema};
use benefit_uq_core::uq::{FilterConfig, Source};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const DATASET_HEADER: [&str; 8] = [
    "query_id",
    "template_id",
    "config_id",
    "index_columns",
    "cost_i0",
    "cost_i",
    "benefit",
    "relative_benefit",
];
pub const UNCERTAINTY_HEADER: [&str; 7] = [
    "sample_id",
    "yhat",
    "u1",
    "u2",
    "flag_u1",
    "flag_u2",
    "source",
];
pub const ERRORS_HEADER: [&str; 7] = [
    "sample_id",
    "split",
    "true_relative_benefit",
    "model_error",
    "whatif_error",
    "filtered_error",
    "source",
];

pub const MODEL_FORMAT: &str = "benefit-uq-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("unexpected header {found:?}, expected {expected:?}")]
    Header {
        found: Vec<String>,
        expected: Vec<String>,
    },
    #[error("malformed index list {0:?}")]
    IndexList(String),
    #[error("unknown table or column in {0:?}")]
    UnknownName(String),
    #[error("model file format {format:?} version {version} is not supported")]
    ModelVersion { format: String, version: u32 },
    #[error("model header does not match its parameters: {0}")]
    ModelShape(String),
    #[error("config ids in the dataset are not contiguous")]
    ConfigIds,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).with_context(|| format!("parsing {}", path.display()))
}

/// `t0(c1,c2);t2(c3)`; the empty configuration is the empty string.
pub fn format_config(schema: &Schema, config: &IndexConfig) -> anyhow::Result<String> {
    let parts = config
        .iter()
        .map(|idx| {
            let table = schema.table(idx.table)?;
            let cols = idx
                .columns
                .iter()
                .map(|&c| table.columns.get(c).map(|col| col.name.as_str()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| FormatError::UnknownName(format!("{idx:?}")))?;
            Ok(format!("{}({})", table.name, cols.join(",")))
        })
        .collect::<anyhow::Result<Vec<String>>>()?;
    Ok(parts.join(";"))
}

pub fn parse_config(schema: &Schema, text: &str) -> Result<IndexConfig, FormatError> {
    if text.is_empty() {
        return Ok(IndexConfig::empty());
    }
    let mut indexes = Vec::new();
    for part in text.split(';') {
        let (table, rest) = part
            .split_once('(')
            .ok_or_else(|| FormatError::IndexList(part.into()))?;
        let cols = rest
            .strip_suffix(')')
            .ok_or_else(|| FormatError::IndexList(part.into()))?;
        let ti = schema
            .tables
            .iter()
            .position(|t| t.name == table)
            .ok_or_else(|| FormatError::UnknownName(part.into()))?;
        let columns = cols
            .split(',')
            .map(|c| {
                schema.tables[ti]
                    .columns
                    .iter()
                    .position(|col| col.name == c)
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| FormatError::UnknownName(part.into()))?;
        if columns.is_empty() {
            return Err(FormatError::IndexList(part.into()));
        }
        indexes.push(Index::new(ti, columns));
    }
    Ok(IndexConfig::from_indexes(indexes))
}

fn check_header<R: std::io::Read>(
    reader: &mut csv::Reader<R>,
    expected: &[&str],
) -> anyhow::Result<()> {
    let found: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if found != expected {
        return Err(FormatError::Header {
            found,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
        .into());
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRow {
    query_id: u32,
    template_id: u32,
    config_id: u32,
    index_columns: String,
    cost_i0: f64,
    cost_i: f64,
    benefit: f64,
    relative_benefit: f64,
}

pub fn write_dataset(path: &Path, schema: &Schema, samples: &[Sample]) -> anyhow::Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for s in samples {
        w.serialize(DatasetRow {
            query_id: s.query_id,
            template_id: s.template_id,
            config_id: s.config_id,
            index_columns: format_config(schema, &s.config)?,
            cost_i0: s.cost_i0,
            cost_i: s.cost_i,
            benefit: s.benefit,
            relative_benefit: s.relative_benefit,
        })?;
    }
    if samples.is_empty() {
        w.write_record(DATASET_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

/// Samples and the configuration list indexed by `config_id`.
pub fn read_dataset(
    path: &Path,
    schema: &Schema,
) -> anyhow::Result<(Vec<Sample>, Vec<IndexConfig>)> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    check_header(&mut r, &DATASET_HEADER)?;
    let mut samples = Vec::new();
    let mut configs: Vec<Option<IndexConfig>> = Vec::new();
    for (line, row) in r.deserialize::<DatasetRow>().enumerate() {
        let row = row.with_context(|| format!("{} record {}", path.display(), line + 1))?;
        let config = parse_config(schema, &row.index_columns)?;
        let id = row.config_id as usize;
        if configs.len() <= id {
            configs.resize(id + 1, None);
        }
        configs[id].get_or_insert_with(|| config.clone());
        samples.push(Sample {
            query_id: row.query_id,
            template_id: row.template_id,
            config_id: row.config_id,
            config,
            cost_i0: row.cost_i0,
            cost_i: row.cost_i,
            benefit: row.benefit,
            relative_benefit: row.relative_benefit,
        });
    }
    let configs = configs
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or(FormatError::ConfigIds)?;
    Ok((samples, configs))
}

fn source_name(s: Source) -> &'static str {
    match s {
        Source::Model => "model",
        Source::Whatif => "whatif",
    }
}

pub fn write_uncertainties(path: &Path, rows: &[UqRow]) -> anyhow::Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(UNCERTAINTY_HEADER)?;
    for r in rows {
        w.write_record([
            r.sample_id.to_string(),
            r.prediction.to_string(),
            r.u1.to_string(),
            r.u2.map(|v| v.to_string()).unwrap_or_default(),
            r.flag_u1.to_string(),
            r.flag_u2.to_string(),
            source_name(r.source).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_errors(path: &Path, rows: &[BeRow]) -> anyhow::Result<()> {
    let split_name = |s: Split| match s {
        Split::Train => "train",
        Split::Test => "test",
        Split::Eval => "eval",
    };
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(ERRORS_HEADER)?;
    for r in rows {
        w.write_record([
            r.sample_id.to_string(),
            split_name(r.split).to_string(),
            r.true_relative_benefit.to_string(),
            r.model_error.to_string(),
            r.whatif_error.to_string(),
            r.filtered_error.to_string(),
            source_name(r.source).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per vector: `sample_id, slot, x0, x1, ...`.
pub fn write_features(
    path: &Path,
    features: &[(usize, FeatureSet)],
    embedded: bool,
) -> anyhow::Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let dim = features
        .first()
        .map(|(_, f)| if embedded { f.dim2 } else { f.dim1 })
        .unwrap_or(0);
    let mut header = vec!["sample_id".to_string(), "slot".to_string()];
    header.extend((0..dim).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for (id, fs) in features {
        for slot in 0..fs.slots {
            let v = if embedded {
                fs.embedded(slot)
            } else {
                fs.raw(slot)
            };
            let mut rec = vec![id.to_string(), slot.to_string()];
            rec.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    /// `(inputs, outputs)` per layer.
    pub layers: Vec<(usize, usize)>,
}

impl NetShape {
    fn of(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| (l.in_dim(), l.out_dim()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub slots: usize,
    pub dim1: usize,
    pub dim2: usize,
    pub hidden: usize,
    pub mc_passes: usize,
    pub encoder: NetShape,
    pub decoder: NetShape,
    pub predictor: NetShape,
}

impl ModelHeader {
    pub fn of(model: &EstimatorModel) -> Self {
        Self {
            slots: model.slots(),
            dim1: model.dim1(),
            dim2: model.dim2(),
            hidden: model.hidden,
            mc_passes: model.mc_passes,
            encoder: NetShape::of(&model.encoder),
            decoder: NetShape::of(&model.decoder),
            predictor: NetShape::of(&model.predictor),
        }
    }
}

/// Persisted estimator with its calibrated filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub header: ModelHeader,
    pub filter: FilterConfig,
    pub model: EstimatorModel,
}

impl ModelFile {
    pub fn new(model: EstimatorModel, filter: FilterConfig) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            header: ModelHeader::of(&model),
            filter,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let file: Self = read_json(path)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(FormatError::ModelVersion {
                format: file.format,
                version: file.version,
            }
            .into());
        }
        file.model
            .validate()
            .map_err(|e| FormatError::ModelShape(e.to_string()))?;
        let actual = ModelHeader::of(&file.model);
        if actual != file.header {
            return Err(FormatError::ModelShape(format!(
                "header {:?} vs parameters {:?}",
                file.header, actual
            ))
            .into());
        }
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use benefit_uq_core::synthdb::{generate_schema, SchemaSpec};

    #[test]
    fn config_text_round_trip() {
        let schema = generate_schema(&SchemaSpec::default(), 1).unwrap();
        let cfg = IndexConfig::from_indexes([Index::new(0, vec![1, 2]), Index::new(2, vec![3])]);
        let text = format_config(&schema, &cfg).unwrap();
        assert_eq!(text, "t0(c1,c2);t2(c3)");
        assert_eq!(parse_config(&schema, &text).unwrap(), cfg);
        assert_eq!(parse_config(&schema, "").unwrap(), IndexConfig::empty());
        assert!(parse_config(&schema, "t9(c0)").is_err());
        assert!(parse_config(&schema, "t0 c1").is_err());
    }
}
