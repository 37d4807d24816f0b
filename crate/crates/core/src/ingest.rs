//! Loading, cleaning, label encoding and partitioning of flow records.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

/// Marker stored in a feature cell that was empty or unparsable in the CSV.
///
/// It is a quiet NaN with a fixed payload so `clean` can tell missing cells
/// apart from literal `NaN` values.
pub const MISSING: f64 = f64::from_bits(0x7ff8_0000_dead_beef);

pub fn is_missing(v: f64) -> bool {
    v.to_bits() == MISSING.to_bits()
}

/// Trim, collapse internal whitespace runs to `_`, lowercase.
pub fn canonicalize(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
        .to_lowercase()
}

/// Bijection between class names and `0..n_classes`, ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelMap {
    class_names: Vec<String>,
    index_of: BTreeMap<String, usize>,
}

impl LabelMap {
    /// Builds a map from raw class names; names are canonicalized and deduplicated.
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = names.into_iter().map(|n| canonicalize(n.as_ref())).collect();
        let class_names: Vec<String> = set.into_iter().collect();
        let index_of = class_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self {
            class_names,
            index_of,
        }
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn encode(&self, name: &str) -> Option<usize> {
        self.index_of.get(&canonicalize(name)).copied()
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        self.class_names.get(index).map(String::as_str)
    }
}

impl TryFrom<Vec<String>> for LabelMap {
    type Error = String;

    fn try_from(names: Vec<String>) -> std::result::Result<Self, String> {
        let map = LabelMap::from_names(&names);
        if map.class_names != names {
            return Err("label map names must be canonical, unique and sorted".into());
        }
        Ok(map)
    }
}

impl From<LabelMap> for Vec<String> {
    fn from(m: LabelMap) -> Self {
        m.class_names
    }
}

/// Where a row came from: an input record (by its row index in the loaded
/// file) or a synthetic oversampled point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowOrigin {
    Original(usize),
    Synthetic,
}

impl RowOrigin {
    pub fn is_synthetic(self) -> bool {
        matches!(self, RowOrigin::Synthetic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Matrix,
    feature_names: Vec<String>,
    labels: Vec<usize>,
    label_map: LabelMap,
    origins: Vec<RowOrigin>,
}

impl Dataset {
    /// Checks shape and label invariants; finiteness is left to [`clean`].
    pub fn new(
        features: Matrix,
        feature_names: Vec<String>,
        labels: Vec<usize>,
        label_map: LabelMap,
    ) -> Result<Self> {
        let origins = (0..labels.len()).map(RowOrigin::Original).collect();
        Self::with_origins(features, feature_names, labels, label_map, origins)
    }

    pub fn with_origins(
        features: Matrix,
        feature_names: Vec<String>,
        labels: Vec<usize>,
        label_map: LabelMap,
        origins: Vec<RowOrigin>,
    ) -> Result<Self> {
        if features.rows() != labels.len() || origins.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows, {} labels, {} origins",
                features.rows(),
                labels.len(),
                origins.len()
            )));
        }
        if features.cols() != feature_names.len() {
            return Err(Error::shape(format!(
                "{} feature columns but {} names",
                features.cols(),
                feature_names.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for n in &feature_names {
            if !seen.insert(canonicalize(n)) {
                return Err(Error::DuplicateColumn(n.clone()));
            }
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= label_map.len()) {
            return Err(Error::LabelOutOfRange {
                label,
                n_classes: label_map.len(),
            });
        }
        Ok(Self {
            features,
            feature_names,
            labels,
            label_map,
            origins,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_map(&self) -> &LabelMap {
        &self.label_map
    }

    pub fn origins(&self) -> &[RowOrigin] {
        &self.origins
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.label_map.len()
    }

    /// Row count per class index.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Same rows and labels with a replacement feature matrix.
    pub fn with_features(&self, features: Matrix, feature_names: Vec<String>) -> Result<Self> {
        Self::with_origins(
            features,
            feature_names,
            self.labels.clone(),
            self.label_map.clone(),
            self.origins.clone(),
        )
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            feature_names: self.feature_names.clone(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            label_map: self.label_map.clone(),
            origins: idx.iter().map(|&i| self.origins[i]).collect(),
        }
    }

    /// Keeps the named columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.feature_names
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| Error::shape(format!("column `{n}` not present")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.with_features(self.features.select_columns(&idx), names.to_vec())
    }

    /// Writes the dataset as CSV with the label column last.
    pub fn write_csv<W: Write>(&self, writer: W, label_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(label_column);
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for (i, row) in self.features.row_iter().enumerate() {
            record.clear();
            record.extend(row.iter().map(|&v| {
                if is_missing(v) {
                    String::new()
                } else {
                    v.to_string()
                }
            }));
            record.push(self.label_map.decode(self.labels[i]).unwrap_or_default().to_string());
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Reads a CSV file with a header row; see [`read_csv`].
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), label_column)
}

/// Parses header + rows. Non-label cells that are empty or unparsable become
/// [`MISSING`]; `inf`/`Infinity`/`NaN` parse to their IEEE values.
pub fn read_csv<R: Read>(reader: R, label_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(canonicalize).collect();
    let wanted = canonicalize(label_column);
    let label_idx = header
        .iter()
        .position(|h| *h == wanted)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != header.len() {
            return Err(Error::Arity {
                row,
                expected: header.len(),
                found: rec.len(),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            if j == label_idx {
                let name = canonicalize(cell);
                if name.is_empty() {
                    return Err(Error::invalid(format!("row {row}: empty label")));
                }
                raw_labels.push(name);
            } else {
                values.push(cell.trim().parse::<f64>().unwrap_or(MISSING));
            }
        }
    }

    let label_map = LabelMap::from_names(&raw_labels);
    let labels = raw_labels
        .iter()
        .map(|n| label_map.encode(n).expect("label present in map"))
        .collect::<Vec<_>>();
    let features = Matrix::from_vec(labels.len(), feature_names.len(), values)?;
    Dataset::new(features, feature_names, labels, label_map)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub rows_dropped_null: usize,
    pub rows_dropped_nonfinite: usize,
    pub columns_dropped_constant: Vec<String>,
}

impl CleanReport {
    pub fn is_noop(&self) -> bool {
        self.rows_dropped_null == 0
            && self.rows_dropped_nonfinite == 0
            && self.columns_dropped_constant.is_empty()
    }
}

/// Drops rows holding a missing marker, NaN or ±inf, then drops constant columns.
pub fn clean(d: &Dataset) -> Result<(Dataset, CleanReport)> {
    let mut report = CleanReport::default();
    let mut keep = Vec::with_capacity(d.n_rows());
    for (i, row) in d.features.row_iter().enumerate() {
        if row.iter().any(|&v| is_missing(v)) {
            report.rows_dropped_null += 1;
        } else if row.iter().any(|v| !v.is_finite()) {
            report.rows_dropped_nonfinite += 1;
        } else {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(Error::EmptyAfterCleaning);
    }
    let rows = d.subset(&keep);

    let mut kept_cols = Vec::with_capacity(rows.n_cols());
    for j in 0..rows.n_cols() {
        let first = rows.features[(0, j)];
        // a single surviving row carries no evidence that a column is constant
        let constant =
            rows.n_rows() > 1 && (1..rows.n_rows()).all(|i| rows.features[(i, j)] == first);
        if constant {
            report.columns_dropped_constant.push(rows.feature_names[j].clone());
        } else {
            kept_cols.push(j);
        }
    }
    let names = kept_cols.iter().map(|&j| rows.feature_names[j].clone()).collect();
    let out = rows.with_features(rows.features.select_columns(&kept_cols), names)?;
    Ok((out, report))
}

/// One row per label with 1.0 at the label's column.
pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), n_classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                n_classes,
            });
        }
        m[(i, l)] = 1.0;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    /// Share of all rows held out for testing, in (0, 1).
    pub test_fraction: f64,
    /// Share of the remaining training rows carved out for validation, in [0, 1).
    pub validation_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            validation_fraction: 0.2,
            stratified: true,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "test_fraction {} not in (0, 1)",
                self.test_fraction
            )));
        }
        if !(self.validation_fraction >= 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "validation_fraction {} not in [0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Row indices of each partition, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

fn take_count(fraction: f64, n: usize, keep_both_sides: bool) -> usize {
    let k = (fraction * n as f64).round() as usize;
    if keep_both_sides && fraction > 0.0 && n >= 2 {
        k.clamp(1, n - 1)
    } else {
        k.min(n)
    }
}

pub fn split_indices(d: &Dataset, spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut by_class = vec![Vec::new(); d.n_classes()];
        for (i, &l) in d.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        for (c, rows) in by_class.iter().enumerate() {
            if rows.len() == 1 {
                let name = d.label_map.decode(c).unwrap_or_default().to_string();
                return Err(Error::Stratification(name));
            }
        }
        by_class
    } else {
        vec![(0..d.n_rows()).collect()]
    };

    let mut out = SplitIndices {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for mut rows in groups {
        rows.shuffle(&mut rng);
        let n_test = take_count(spec.test_fraction, rows.len(), spec.stratified);
        let rest = rows.len() - n_test;
        let n_val = take_count(spec.validation_fraction, rest, spec.stratified);
        out.test.extend_from_slice(&rows[..n_test]);
        out.validation.extend_from_slice(&rows[n_test..n_test + n_val]);
        out.train.extend_from_slice(&rows[n_test + n_val..]);
    }
    out.train.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Seeded train/validation/test partition; validation is carved from the
/// training share only.
pub fn split(d: &Dataset, spec: &SplitSpec) -> Result<Split> {
    let idx = split_indices(d, spec)?;
    Ok(Split {
        train: d.subset(&idx.train),
        validation: d.subset(&idx.validation),
        test: d.subset(&idx.test),
    })
}
