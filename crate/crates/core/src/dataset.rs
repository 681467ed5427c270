//! Tabular regression datasets: CSV ingestion, validation, group splits.
//!
//! Every column that is neither the target nor the group tag is a numeric
//! feature, in header order. Rows with an empty target cell are kept as
//! unlabeled observations (data of interest without ground truth).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod synth;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("CSV input has no header row")]
    MissingHeader,
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("empty column name at position {0}")]
    EmptyColumnName(usize),
    #[error("target column `{0}` not found in header")]
    MissingTargetColumn(String),
    #[error("group tag column `{0}` not found in header")]
    MissingGroupColumn(String),
    #[error("dataset needs at least one feature column")]
    NoFeatures,
    #[error("dataset needs at least {required} rows, found {found}")]
    TooFewRows { required: usize, found: usize },
    #[error("row {row}: non-numeric value `{value}` in column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: missing value for feature `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("row {row}: non-finite value in column `{column}`")]
    NonFinite { row: usize, column: String },
    #[error("row {row}: expected {expected} cells, found {found}")]
    RowLength {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: missing group tag")]
    MissingGroupTag { row: usize },
    #[error("train and test groups overlap on {0:?}")]
    OverlappingGroups(Vec<String>),
    #[error("train partition is empty")]
    EmptyTrainPartition,
    #[error("feature `{0}` is not present in the dataset")]
    UnknownFeature(String),
    #[error("invalid synthetic scenario config: {0}")]
    InvalidConfig(String),
}

/// One row. `values` follows the parent dataset's feature order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub values: Vec<f64>,
    pub target: Option<f64>,
    pub group_tag: Option<String>,
}

impl Observation {
    pub fn is_labeled(&self) -> bool {
        self.target.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    feature_names: Vec<String>,
    target_name: String,
    group_tag_name: Option<String>,
    rows: Vec<Observation>,
}

impl Dataset {
    /// Builds a dataset after checking names, row widths and finiteness.
    ///
    /// Row-count minimums are enforced where they matter (CSV ingestion,
    /// model fitting), so partitions and single-row data of interest are
    /// representable.
    pub fn new(
        feature_names: Vec<String>,
        target_name: impl Into<String>,
        group_tag_name: Option<String>,
        rows: Vec<Observation>,
    ) -> Result<Self, DatasetError> {
        let target_name = target_name.into();
        if feature_names.is_empty() {
            return Err(DatasetError::NoFeatures);
        }
        let mut seen = HashSet::new();
        for (i, name) in feature_names
            .iter()
            .chain(std::iter::once(&target_name))
            .chain(group_tag_name.iter())
            .enumerate()
        {
            if name.trim().is_empty() {
                return Err(DatasetError::EmptyColumnName(i));
            }
            if !seen.insert(name.as_str()) {
                return Err(DatasetError::DuplicateColumn(name.clone()));
            }
        }
        for (r, row) in rows.iter().enumerate() {
            if row.values.len() != feature_names.len() {
                return Err(DatasetError::RowLength {
                    row: r,
                    expected: feature_names.len(),
                    found: row.values.len(),
                });
            }
            if let Some(j) = row.values.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite {
                    row: r,
                    column: feature_names[j].clone(),
                });
            }
            if matches!(row.target, Some(t) if !t.is_finite()) {
                return Err(DatasetError::NonFinite {
                    row: r,
                    column: target_name.clone(),
                });
            }
        }
        Ok(Self {
            feature_names,
            target_name,
            group_tag_name,
            rows,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn group_tag_name(&self) -> Option<&str> {
        self.group_tag_name.as_deref()
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn labeled_len(&self) -> usize {
        self.rows.iter().filter(|r| r.is_labeled()).count()
    }

    /// A copy holding only the labeled rows.
    pub fn labeled(&self) -> Dataset {
        self.with_rows(
            self.rows
                .iter()
                .filter(|r| r.is_labeled())
                .cloned()
                .collect(),
        )
    }

    /// A copy with the same schema and different rows.
    pub fn with_rows(&self, rows: Vec<Observation>) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            group_tag_name: self.group_tag_name.clone(),
            rows,
        }
    }

    /// Rows sorted by content, so that downstream seeded procedures do not
    /// depend on the order rows arrived in.
    pub fn canonicalized(&self) -> Dataset {
        let mut rows = self.rows.clone();
        rows.sort_by(compare_rows);
        self.with_rows(rows)
    }

    /// Feature rows re-ordered to `names`; fails if any name is absent.
    pub fn matrix_for(&self, names: &[String]) -> Result<Vec<Vec<f64>>, DatasetError> {
        let idx = names
            .iter()
            .map(|n| {
                self.feature_index(n)
                    .ok_or_else(|| DatasetError::UnknownFeature(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self
            .rows
            .iter()
            .map(|r| idx.iter().map(|&j| r.values[j]).collect())
            .collect())
    }

    /// `(features, target)` pairs of the labeled rows, in row order.
    pub fn labeled_xy(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        self.rows
            .iter()
            .filter_map(|r| r.target.map(|t| (r.values.clone(), t)))
            .unzip()
    }

    pub fn groups(&self) -> BTreeSet<String> {
        self.rows
            .iter()
            .filter_map(|r| r.group_tag.clone())
            .collect()
    }

    /// Serializes back to CSV: features, then target, then group tag.
    pub fn to_csv(&self) -> String {
        let mut out = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(&self.target_name);
        if let Some(g) = &self.group_tag_name {
            header.push(g);
        }
        out.write_record(&header).expect("in-memory write");
        for row in &self.rows {
            let mut cells: Vec<String> = row.values.iter().map(|v| v.to_string()).collect();
            cells.push(row.target.map(|t| t.to_string()).unwrap_or_default());
            if self.group_tag_name.is_some() {
                cells.push(row.group_tag.clone().unwrap_or_default());
            }
            out.write_record(&cells).expect("in-memory write");
        }
        String::from_utf8(out.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }
}

fn compare_rows(a: &Observation, b: &Observation) -> Ordering {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then_with(|| match (a.target, b.target) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (x, y) => x.is_some().cmp(&y.is_some()),
        })
        .then_with(|| a.group_tag.cmp(&b.group_tag))
}

/// Parses a UTF-8 CSV with a header row. Requires at least two rows.
pub fn parse_dataset(
    csv_text: &str,
    target_name: &str,
    group_tag_name: Option<&str>,
) -> Result<Dataset, DatasetError> {
    parse_rows(csv_text, target_name, group_tag_name, 2)
}

/// Like [`parse_dataset`] but accepts any row count (data of interest may be
/// a single observation).
pub fn parse_interest_dataset(
    csv_text: &str,
    target_name: &str,
    group_tag_name: Option<&str>,
) -> Result<Dataset, DatasetError> {
    parse_rows(csv_text, target_name, group_tag_name, 0)
}

fn parse_rows(
    csv_text: &str,
    target_name: &str,
    group_tag_name: Option<&str>,
    min_rows: usize,
) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(csv_text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(DatasetError::MissingHeader);
    }
    let mut seen = HashSet::new();
    for (i, h) in header.iter().enumerate() {
        if h.is_empty() {
            return Err(DatasetError::EmptyColumnName(i));
        }
        if !seen.insert(h.as_str()) {
            return Err(DatasetError::DuplicateColumn(h.clone()));
        }
    }
    let target_col = header
        .iter()
        .position(|h| h == target_name)
        .ok_or_else(|| DatasetError::MissingTargetColumn(target_name.to_owned()))?;
    let group_col = group_tag_name
        .map(|g| {
            header
                .iter()
                .position(|h| h == g)
                .ok_or_else(|| DatasetError::MissingGroupColumn(g.to_owned()))
        })
        .transpose()?;
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&c| c != target_col && Some(c) != group_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(DatasetError::NoFeatures);
    }

    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(DatasetError::RowLength {
                row: r,
                expected: header.len(),
                found: record.len(),
            });
        }
        let mut values = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let cell = &record[c];
            if cell.is_empty() {
                return Err(DatasetError::MissingValue {
                    row: r,
                    column: header[c].clone(),
                });
            }
            values.push(parse_cell(cell, r, &header[c])?);
        }
        let target = match &record[target_col] {
            "" => None,
            cell => Some(parse_cell(cell, r, &header[target_col])?),
        };
        let group_tag = group_col
            .map(|c| record[c].to_owned())
            .filter(|g| !g.is_empty());
        rows.push(Observation {
            values,
            target,
            group_tag,
        });
    }
    if rows.len() < min_rows {
        return Err(DatasetError::TooFewRows {
            required: min_rows,
            found: rows.len(),
        });
    }
    Dataset::new(
        feature_cols.iter().map(|&c| header[c].clone()).collect(),
        target_name,
        group_tag_name.map(str::to_owned),
        rows,
    )
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64, DatasetError> {
    let v: f64 = cell.parse().map_err(|_| DatasetError::NonNumeric {
        row,
        column: column.to_owned(),
        value: cell.to_owned(),
    })?;
    if !v.is_finite() {
        return Err(DatasetError::NonFinite {
            row,
            column: column.to_owned(),
        });
    }
    Ok(v)
}

/// Partitions rows by group tag. Rows whose tag is in neither set are
/// dropped; every row must carry a tag.
pub fn split_by_group(
    ds: &Dataset,
    train_groups: &BTreeSet<String>,
    test_groups: &BTreeSet<String>,
) -> Result<(Dataset, Dataset), DatasetError> {
    let overlap: Vec<String> = train_groups.intersection(test_groups).cloned().collect();
    if !overlap.is_empty() {
        return Err(DatasetError::OverlappingGroups(overlap));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (r, row) in ds.rows.iter().enumerate() {
        let tag = row
            .group_tag
            .as_ref()
            .ok_or(DatasetError::MissingGroupTag { row: r })?;
        if train_groups.contains(tag) {
            train.push(row.clone());
        } else if test_groups.contains(tag) {
            test.push(row.clone());
        }
    }
    if train.is_empty() {
        return Err(DatasetError::EmptyTrainPartition);
    }
    Ok((ds.with_rows(train), ds.with_rows(test)))
}

/// Per-feature summary used in project descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

pub fn feature_ranges(ds: &Dataset) -> BTreeMap<String, FeatureRange> {
    ds.feature_names
        .iter()
        .enumerate()
        .filter(|_| !ds.rows.is_empty())
        .map(|(j, name)| {
            let (min, max) = ds
                .rows
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r.values[j]), hi.max(r.values[j]))
                });
            (name.clone(), FeatureRange { min, max })
        })
        .collect()
}
