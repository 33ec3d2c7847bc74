//! Tabular sample × feature data, CSV ingestion, modality alignment and
//! train/test partitioning.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),
    #[error("duplicate feature name `{0}`")]
    DuplicateFeature(String),
    #[error("unknown class label `{0}` (expected benign/0 or malignant/1)")]
    UnknownLabel(String),
    #[error("row {row} has {found} fields, header has {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("sample `{id}` is labelled {a} in one table and {b} in the other")]
    ConflictingLabel { id: String, a: ClassLabel, b: ClassLabel },
    #[error("sample id `{0}` is not present in the table")]
    UnknownSample(String),
    #[error("feature `{0}` is not present in the table")]
    UnknownFeature(String),
    #[error("feature `{feature}` has a missing value at sample `{sample}`")]
    MissingValue { feature: String, sample: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Binary diagnosis. `Malignant` is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Benign,
    Malignant,
}

impl ClassLabel {
    pub fn is_positive(self) -> bool {
        self == ClassLabel::Malignant
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Benign => "benign",
            ClassLabel::Malignant => "malignant",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Case-insensitive; accepts `benign`/`0` and `malignant`/`1`.
impl FromStr for ClassLabel {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benign" | "0" => Ok(ClassLabel::Benign),
            "malignant" | "1" => Ok(ClassLabel::Malignant),
            _ => Err(DataError::UnknownLabel(s.to_string())),
        }
    }
}

/// Which CSV columns carry the sample metadata. Every other column is a
/// numeric feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub id_column: String,
    pub cohort_column: String,
    pub label_column: String,
    #[serde(default)]
    pub patient_column: Option<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            id_column: "id".into(),
            cohort_column: "cohort".into(),
            label_column: "label".into(),
            patient_column: None,
        }
    }
}

/// Cell tokens read as missing in addition to anything non-numeric.
pub const MISSING_TOKENS: &[&str] = &["", "NA"];

/// Dense samples × features matrix with per-sample metadata. Cells are
/// `None` when missing. Immutable once built; every constructor validates
/// the shape and uniqueness invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    sample_ids: Vec<String>,
    cohort: Vec<String>,
    labels: Vec<ClassLabel>,
    patient_ids: Option<Vec<String>>,
    feature_names: Vec<String>,
    // row-major, len = n_samples * n_features
    values: Vec<Option<f64>>,
}

impl FeatureTable {
    pub fn new(
        sample_ids: Vec<String>,
        cohort: Vec<String>,
        labels: Vec<ClassLabel>,
        feature_names: Vec<String>,
        values: Vec<Option<f64>>,
    ) -> Result<Self, DataError> {
        Self::with_patients(sample_ids, cohort, labels, None, feature_names, values)
    }

    pub fn with_patients(
        sample_ids: Vec<String>,
        cohort: Vec<String>,
        labels: Vec<ClassLabel>,
        patient_ids: Option<Vec<String>>,
        feature_names: Vec<String>,
        values: Vec<Option<f64>>,
    ) -> Result<Self, DataError> {
        let n = sample_ids.len();
        if cohort.len() != n || labels.len() != n {
            return Err(DataError::Shape(format!(
                "{} ids, {} cohort tags, {} labels",
                n,
                cohort.len(),
                labels.len()
            )));
        }
        if let Some(p) = &patient_ids {
            if p.len() != n {
                return Err(DataError::Shape(format!("{} ids, {} patient ids", n, p.len())));
            }
        }
        if values.len() != n * feature_names.len() {
            return Err(DataError::Shape(format!(
                "{} values for {} x {} table",
                values.len(),
                n,
                feature_names.len()
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(DataError::DuplicateSample(id.clone()));
            }
        }
        let mut seen = HashSet::with_capacity(feature_names.len());
        for f in &feature_names {
            if !seen.insert(f.as_str()) {
                return Err(DataError::DuplicateFeature(f.clone()));
            }
        }
        Ok(FeatureTable { sample_ids, cohort, labels, patient_ids, feature_names, values })
    }

    /// Builds a complete table from feature columns.
    pub fn from_columns(
        sample_ids: Vec<String>,
        cohort: Vec<String>,
        labels: Vec<ClassLabel>,
        feature_names: Vec<String>,
        columns: &[Vec<f64>],
    ) -> Result<Self, DataError> {
        let n = sample_ids.len();
        if columns.len() != feature_names.len() || columns.iter().any(|c| c.len() != n) {
            return Err(DataError::Shape("column lengths disagree with ids/names".into()));
        }
        let p = columns.len();
        let mut values = vec![None; n * p];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                values[i * p + j] = Some(v);
            }
        }
        Self::new(sample_ids, cohort, labels, feature_names, values)
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn cohort(&self) -> &[String] {
        &self.cohort
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn patient_ids(&self) -> Option<&[String]> {
        self.patient_ids.as_deref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.n_features() + col]
    }

    pub fn row(&self, row: usize) -> &[Option<f64>] {
        let p = self.n_features();
        &self.values[row * p..(row + 1) * p]
    }

    pub fn column(&self, col: usize) -> Vec<Option<f64>> {
        (0..self.n_samples()).map(|i| self.value(i, col)).collect()
    }

    /// Column `col` with missing cells rejected.
    pub fn dense_column(&self, col: usize) -> Result<Vec<f64>, DataError> {
        (0..self.n_samples())
            .map(|i| {
                self.value(i, col).ok_or_else(|| DataError::MissingValue {
                    feature: self.feature_names[col].clone(),
                    sample: self.sample_ids[i].clone(),
                })
            })
            .collect()
    }

    /// Dense columns for the named features, in the order given.
    pub fn dense_columns(&self, names: &[String]) -> Result<Vec<Vec<f64>>, DataError> {
        names
            .iter()
            .map(|n| {
                let j = self
                    .feature_index(n)
                    .ok_or_else(|| DataError::UnknownFeature(n.clone()))?;
                self.dense_column(j)
            })
            .collect()
    }

    pub fn positives(&self) -> Vec<bool> {
        self.labels.iter().map(|l| l.is_positive()).collect()
    }

    pub fn class_count(&self, label: ClassLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn has_both_classes(&self) -> bool {
        self.class_count(ClassLabel::Benign) > 0 && self.class_count(ClassLabel::Malignant) > 0
    }

    /// New table with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureTable {
        let p = self.n_features();
        let mut values = Vec::with_capacity(rows.len() * p);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureTable {
            sample_ids: rows.iter().map(|&r| self.sample_ids[r].clone()).collect(),
            cohort: rows.iter().map(|&r| self.cohort[r].clone()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            patient_ids: self
                .patient_ids
                .as_ref()
                .map(|p| rows.iter().map(|&r| p[r].clone()).collect()),
            feature_names: self.feature_names.clone(),
            values,
        }
    }

    /// New table restricted to the named features, in the order given.
    pub fn select_features(&self, names: &[String]) -> Result<FeatureTable, DataError> {
        let cols = names
            .iter()
            .map(|n| self.feature_index(n).ok_or_else(|| DataError::UnknownFeature(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut values = Vec::with_capacity(self.n_samples() * cols.len());
        for i in 0..self.n_samples() {
            let row = self.row(i);
            values.extend(cols.iter().map(|&j| row[j]));
        }
        FeatureTable::with_patients(
            self.sample_ids.clone(),
            self.cohort.clone(),
            self.labels.clone(),
            self.patient_ids.clone(),
            names.to_vec(),
            values,
        )
    }

    /// Same metadata, replaced feature block.
    pub fn with_values(
        &self,
        feature_names: Vec<String>,
        values: Vec<Option<f64>>,
    ) -> Result<FeatureTable, DataError> {
        FeatureTable::with_patients(
            self.sample_ids.clone(),
            self.cohort.clone(),
            self.labels.clone(),
            self.patient_ids.clone(),
            feature_names,
            values,
        )
    }

    fn row_index(&self) -> HashMap<&str, usize> {
        self.sample_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }
}

/// Reads a CSV feature table. Lines starting with `#` are skipped.
pub fn load_feature_table(path: impl AsRef<Path>, schema: &Schema) -> Result<FeatureTable, DataError> {
    let file = std::fs::File::open(path.as_ref())?;
    read_feature_table(file, schema)
}

pub fn read_feature_table<R: Read>(reader: R, schema: &Schema) -> Result<FeatureTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let id_col = find(&schema.id_column)?;
    let cohort_col = find(&schema.cohort_column)?;
    let label_col = find(&schema.label_column)?;
    let patient_col = schema.patient_column.as_deref().map(find).transpose()?;
    let meta = [Some(id_col), Some(cohort_col), Some(label_col), patient_col];
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|j| !meta.contains(&Some(*j)))
        .collect();
    let feature_names: Vec<String> = feature_cols.iter().map(|&j| header[j].clone()).collect();

    let mut ids = Vec::new();
    let mut cohort = Vec::new();
    let mut labels = Vec::new();
    let mut patients = patient_col.map(|_| Vec::new());
    let mut values = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(DataError::RaggedRow {
                row: row + 1,
                expected: header.len(),
                found: record.len(),
            });
        }
        ids.push(record[id_col].trim().to_string());
        cohort.push(record[cohort_col].trim().to_string());
        labels.push(record[label_col].parse::<ClassLabel>()?);
        if let (Some(p), Some(j)) = (patients.as_mut(), patient_col) {
            p.push(record[j].trim().to_string());
        }
        values.extend(feature_cols.iter().map(|&j| parse_cell(&record[j])));
    }
    FeatureTable::with_patients(ids, cohort, labels, patients, feature_names, values)
}

fn parse_cell(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    if MISSING_TOKENS.contains(&cell) {
        return None;
    }
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Writes the table with the same column order the loader expects:
/// id, cohort, label, [patient], features. Missing cells are written as `NA`.
pub fn write_feature_table<W: Write>(
    table: &FeatureTable,
    schema: &Schema,
    writer: W,
) -> Result<(), DataError> {
    let mut w = report::csv_writer(writer, "feature_table")?;
    let mut header = vec![
        schema.id_column.clone(),
        schema.cohort_column.clone(),
        schema.label_column.clone(),
    ];
    if let (Some(col), Some(_)) = (&schema.patient_column, &table.patient_ids) {
        header.push(col.clone());
    }
    header.extend(table.feature_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..table.n_samples() {
        let mut rec = vec![
            table.sample_ids[i].clone(),
            table.cohort[i].clone(),
            table.labels[i].as_str().to_string(),
        ];
        if let (Some(_), Some(p)) = (&schema.patient_column, &table.patient_ids) {
            rec.push(p[i].clone());
        }
        rec.extend(table.row(i).iter().map(|v| match v {
            Some(x) => format!("{x}"),
            None => "NA".to_string(),
        }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_feature_table(
    table: &FeatureTable,
    schema: &Schema,
    path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let file = std::fs::File::create(path.as_ref())?;
    write_feature_table(table, schema, std::io::BufWriter::new(file))
}

/// Restricts both tables to the samples they share, in `a`'s row order.
pub fn align_common_samples(
    a: &FeatureTable,
    b: &FeatureTable,
) -> Result<(FeatureTable, FeatureTable), DataError> {
    let b_index = b.row_index();
    let mut rows_a = Vec::new();
    let mut rows_b = Vec::new();
    for (i, id) in a.sample_ids.iter().enumerate() {
        if let Some(&j) = b_index.get(id.as_str()) {
            if a.labels[i] != b.labels[j] {
                return Err(DataError::ConflictingLabel {
                    id: id.clone(),
                    a: a.labels[i],
                    b: b.labels[j],
                });
            }
            rows_a.push(i);
            rows_b.push(j);
        }
    }
    Ok((a.select_rows(&rows_a), b.select_rows(&rows_b)))
}

/// Fixed held-out test membership. `seed` travels with the split so that
/// downstream resampling can be keyed to it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_sample_ids: BTreeSet<String>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new<I, S>(ids: I, seed: u64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SplitSpec { test_sample_ids: ids.into_iter().map(Into::into).collect(), seed }
    }
}

/// Splits into (train, test). Both parts keep the original row order.
pub fn partition(
    table: &FeatureTable,
    spec: &SplitSpec,
) -> Result<(FeatureTable, FeatureTable), DataError> {
    let index = table.row_index();
    if let Some(unknown) = spec.test_sample_ids.iter().find(|id| !index.contains_key(id.as_str())) {
        return Err(DataError::UnknownSample(unknown.clone()));
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..table.n_samples())
        .partition(|&i| spec.test_sample_ids.contains(&table.sample_ids[i]));
    Ok((table.select_rows(&train), table.select_rows(&test)))
}

/// One id per line; `#` comments and blank lines ignored.
pub fn load_id_list(path: impl AsRef<Path>) -> Result<Vec<String>, DataError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}
