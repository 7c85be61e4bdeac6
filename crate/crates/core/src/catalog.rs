//! Feature catalog and labeled flow datasets.
//!
//! A catalog file is comma-separated UTF-8 text with one feature per row and
//! no header. Rows have either two columns (`name,description`) or three
//! (`name,unit,description`); the unit column may be empty. Lines starting
//! with `#` are comments. A feature's index is its row position.
//!
//! A flow dataset is a CSV file whose header names catalog features, with an
//! optional `label` column.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the ground-truth column in flow datasets.
pub const LABEL_COLUMN: &str = "label";

/// Number of features in a catalog conforming to the reference DDoS dataset.
pub const REFERENCE_FEATURE_COUNT: usize = 84;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("malformed catalog row at line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("duplicate feature name `{0}`")]
    DuplicateFeature(String),
    #[error("catalog contains no features")]
    EmptyCatalog,
    #[error("unknown feature `{0}` in dataset header")]
    UnknownFeature(String),
    #[error("bad value `{value}` for `{column}` at row {row}")]
    BadValue {
        row: u64,
        column: String,
        value: String,
    },
    #[error("unknown attack type `{0}`")]
    UnknownAttackType(String),
    #[error("malformed dataset: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub index: usize,
    pub name: String,
    pub unit: Option<String>,
    /// Noun phrase explaining the feature, e.g. "duration of the flow".
    pub description: String,
}

/// Indexed registry of flow features. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureCatalog {
    entries: Vec<FeatureEntry>,
    #[serde(skip)]
    by_name: HashMap<String, usize>,
}

impl FeatureCatalog {
    /// Builds a catalog from `(name, unit, description)` triples in index order.
    pub fn from_rows<I, S>(rows: I) -> Result<Self, CatalogError>
    where
        I: IntoIterator<Item = (S, Option<S>, S)>,
        S: Into<String>,
    {
        let mut entries = Vec::new();
        let mut by_name = HashMap::new();
        for (index, (name, unit, description)) in rows.into_iter().enumerate() {
            let name: String = name.into();
            let description: String = description.into();
            let line = index as u64 + 1;
            if name.trim().is_empty() {
                return Err(CatalogError::Parse {
                    line,
                    reason: "empty feature name".into(),
                });
            }
            if description.trim().is_empty() {
                return Err(CatalogError::Parse {
                    line,
                    reason: format!("feature `{name}` has no description"),
                });
            }
            if by_name.insert(name.clone(), index).is_some() {
                return Err(CatalogError::DuplicateFeature(name));
            }
            let unit = unit.map(Into::into).filter(|u: &String| !u.trim().is_empty());
            entries.push(FeatureEntry {
                index,
                name,
                unit,
                description,
            });
        }
        if entries.is_empty() {
            return Err(CatalogError::EmptyCatalog);
        }
        Ok(Self { entries, by_name })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FeatureEntry] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<&FeatureEntry> {
        self.entries.get(index)
    }

    pub fn by_name(&self, name: &str) -> Option<&FeatureEntry> {
        self.by_name.get(name).map(|&i| &self.entries[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }
}

/// Reads a catalog file.
pub fn load_catalog<R: Read>(source: R) -> Result<FeatureCatalog, CatalogError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row = match record.len() {
            2 => (record[0].to_string(), None, record[1].to_string()),
            3 => (
                record[0].to_string(),
                Some(record[1].to_string()),
                record[2].to_string(),
            ),
            n => {
                return Err(CatalogError::Parse {
                    line,
                    reason: format!("expected 2 or 3 columns, found {n}"),
                })
            }
        };
        if row.0.is_empty() || row.2.is_empty() {
            return Err(CatalogError::Parse {
                line,
                reason: "name and description must be non-empty".into(),
            });
        }
        rows.push(row);
    }
    FeatureCatalog::from_rows(rows)
}

/// Indexed listing handed to the model during feature selection, one line per
/// entry: `<index>. <name> — <description>`.
pub fn render_catalog_listing(catalog: &FeatureCatalog) -> String {
    let mut out = String::new();
    for entry in catalog.entries() {
        out.push_str(&format!(
            "{}. {} — {}\n",
            entry.index, entry.name, entry.description
        ));
    }
    out
}

/// A single feature value: numeric, or a categorical string kept verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Text(String),
}

impl Scalar {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Scalar::Number(v) => Some(*v),
            Scalar::Text(_) => None,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Number(v) => write!(f, "{v}"),
            Scalar::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Benign,
    Malicious,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Label {
    kind: LabelKind,
    attack_type: Option<String>,
}

impl Label {
    pub fn benign() -> Self {
        Self {
            kind: LabelKind::Benign,
            attack_type: None,
        }
    }

    pub fn malicious(attack_type: impl Into<String>) -> Self {
        Self {
            kind: LabelKind::Malicious,
            attack_type: Some(attack_type.into()),
        }
    }

    /// `"benign"` in any case is benign; any other non-empty string is the
    /// attack type of a malicious flow.
    pub fn parse(raw: &str) -> Option<Self> {
        let raw = raw.trim();
        if raw.is_empty() {
            None
        } else if raw.eq_ignore_ascii_case("benign") {
            Some(Self::benign())
        } else {
            Some(Self::malicious(raw))
        }
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn is_malicious(&self) -> bool {
        self.kind == LabelKind::Malicious
    }

    pub fn attack_type(&self) -> Option<&str> {
        self.attack_type.as_deref()
    }

    /// The dataset spelling of this label.
    pub fn as_raw(&self) -> &str {
        self.attack_type.as_deref().unwrap_or("BENIGN")
    }
}

/// One traffic flow's feature values plus optional ground truth.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowRecord {
    pub values: BTreeMap<String, Scalar>,
    pub label: Option<Label>,
}

impl FlowRecord {
    pub fn new(values: BTreeMap<String, Scalar>, label: Option<Label>) -> Self {
        Self { values, label }
    }

    pub fn get(&self, feature: &str) -> Option<&Scalar> {
        self.values.get(feature)
    }

    /// Checks that every key names a catalog feature and every number is finite.
    pub fn validate(&self, catalog: &FeatureCatalog) -> Result<(), CatalogError> {
        for (name, value) in &self.values {
            if catalog.index_of(name).is_none() {
                return Err(CatalogError::UnknownFeature(name.clone()));
            }
            if let Scalar::Number(v) = value {
                if !v.is_finite() {
                    return Err(CatalogError::BadValue {
                        row: 0,
                        column: name.clone(),
                        value: v.to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Optional checks applied while loading a dataset.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// When set, malicious labels must name one of these attack types.
    pub attack_types: Option<Vec<String>>,
}

pub fn load_flows<R: Read>(
    source: R,
    catalog: &FeatureCatalog,
) -> Result<Vec<FlowRecord>, CatalogError> {
    load_flows_with(source, catalog, &LoadOptions::default())
}

pub fn load_flows_with<R: Read>(
    source: R,
    catalog: &FeatureCatalog,
    options: &LoadOptions,
) -> Result<Vec<FlowRecord>, CatalogError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let mut label_col = None;
    let mut columns = Vec::with_capacity(headers.len());
    for (i, header) in headers.iter().enumerate() {
        let header = header.trim();
        if header.eq_ignore_ascii_case(LABEL_COLUMN) {
            label_col = Some(i);
            columns.push(None);
        } else if catalog.index_of(header).is_some() {
            columns.push(Some(header.to_string()));
        } else {
            return Err(CatalogError::UnknownFeature(header.to_string()));
        }
    }

    let mut records = Vec::new();
    for (row_idx, row) in reader.records().enumerate() {
        let row = row?;
        let row_no = row_idx as u64 + 1;
        let mut values = BTreeMap::new();
        let mut label = None;
        for (i, cell) in row.iter().enumerate() {
            if Some(i) == label_col {
                label = Label::parse(cell);
                continue;
            }
            let Some(Some(name)) = columns.get(i) else {
                continue;
            };
            if cell.trim().is_empty() {
                continue;
            }
            values.insert(name.clone(), parse_scalar(cell, row_no, name)?);
        }
        if let (Some(allowed), Some(l)) = (&options.attack_types, &label) {
            if let Some(attack) = l.attack_type() {
                if !allowed.iter().any(|a| a == attack) {
                    return Err(CatalogError::UnknownAttackType(attack.to_string()));
                }
            }
        }
        records.push(FlowRecord { values, label });
    }
    Ok(records)
}

fn parse_scalar(cell: &str, row: u64, column: &str) -> Result<Scalar, CatalogError> {
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Scalar::Number(v)),
        Ok(_) => Err(CatalogError::BadValue {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        }),
        Err(_) => Ok(Scalar::Text(cell.to_string())),
    }
}

/// Writes records as a dataset CSV readable by [`load_flows`]. Columns are the
/// union of the records' features in catalog order, followed by `label` when
/// any record is labeled.
pub fn write_flows<W: Write>(
    sink: W,
    records: &[FlowRecord],
    catalog: &FeatureCatalog,
) -> Result<(), CatalogError> {
    let mut names: Vec<&FeatureEntry> = catalog
        .entries()
        .iter()
        .filter(|e| records.iter().any(|r| r.values.contains_key(&e.name)))
        .collect();
    names.sort_by_key(|e| e.index);
    let labeled = records.iter().any(|r| r.label.is_some());

    let mut writer = csv::Writer::from_writer(sink);
    let mut header: Vec<&str> = names.iter().map(|e| e.name.as_str()).collect();
    if labeled {
        header.push(LABEL_COLUMN);
    }
    writer.write_record(&header)?;
    for record in records {
        let mut row: Vec<String> = names
            .iter()
            .map(|e| record.values.get(&e.name).map(Scalar::to_string).unwrap_or_default())
            .collect();
        if labeled {
            row.push(
                record
                    .label
                    .as_ref()
                    .map(|l| l.as_raw().to_string())
                    .unwrap_or_default(),
            );
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
