//! Labeled embedding datasets: data model, on-disk formats, synthetic
//! generation and stratified fold assignment.

mod binary;
mod folds;
mod jsonl;
mod synthetic;

use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

use crate::tensorcore::{Matrix, NumError, Vec64};

pub use binary::{load_binary, save_binary, BINARY_MAGIC, BINARY_VERSION};
pub use folds::assign_folds;
pub use jsonl::{load_jsonl, save_jsonl, JSONL_FORMAT, JSONL_VERSION};
pub use synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{}", format_error_message(*.line, .reason))]
    Format { line: Option<usize>, reason: String },
    #[error("record {id:?}: vector length {found} does not match dataset dim {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("class {class:?} has {available} samples, fewer than {folds} folds")]
    TooFewSamples {
        class: String,
        available: usize,
        folds: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

fn format_error_message(line: Option<usize>, reason: &str) -> String {
    match line {
        Some(l) => format!("format error at line {l}: {reason}"),
        None => format!("format error: {reason}"),
    }
}

impl DataError {
    pub(crate) fn format(line: Option<usize>, reason: impl Into<String>) -> Self {
        DataError::Format {
            line,
            reason: reason.into(),
        }
    }
}

/// Ordered, distinct class names. Position is the class index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSet {
    names: Vec<String>,
}

impl ClassSet {
    pub fn new(names: Vec<String>) -> Result<Self, DataError> {
        if names.len() < 2 {
            return Err(DataError::Invalid(format!(
                "need at least 2 classes, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.trim().is_empty() {
                return Err(DataError::Invalid("empty class name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(DataError::Invalid(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }
}

/// One audio embedding with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub label: usize,
    pub vector: Vec64,
}

/// A validated collection of records sharing one embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    classes: ClassSet,
    dim: usize,
    records: Vec<EmbeddingRecord>,
    folds: Option<Vec<usize>>,
}

impl EmbeddingDataset {
    pub fn new(
        classes: ClassSet,
        dim: usize,
        records: Vec<EmbeddingRecord>,
        folds: Option<Vec<usize>>,
    ) -> Result<Self, DataError> {
        if dim < 2 {
            return Err(DataError::Invalid(format!("dim must be >= 2, got {dim}")));
        }
        if records.is_empty() {
            return Err(DataError::format(None, "dataset must contain ≥ 1 record"));
        }
        let mut ids = HashSet::new();
        for r in &records {
            if r.vector.len() != dim {
                return Err(DataError::DimensionMismatch {
                    id: r.id.clone(),
                    expected: dim,
                    found: r.vector.len(),
                });
            }
            if r.label >= classes.len() {
                return Err(DataError::Invalid(format!(
                    "record {:?}: label {} out of range for {} classes",
                    r.id,
                    r.label,
                    classes.len()
                )));
            }
            if !(r.vector.norm() > 0.0) {
                return Err(DataError::Invalid(format!("record {:?}: zero vector", r.id)));
            }
            if !ids.insert(r.id.as_str()) {
                return Err(DataError::Invalid(format!("duplicate record id {:?}", r.id)));
            }
        }
        if let Some(f) = &folds {
            if f.len() != records.len() {
                return Err(DataError::Invalid(format!(
                    "fold assignment covers {} of {} records",
                    f.len(),
                    records.len()
                )));
            }
        }
        Ok(Self {
            classes,
            dim,
            records,
            folds,
        })
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn folds(&self) -> Option<&[usize]> {
        self.folds.as_deref()
    }

    /// Number of folds (`max fold + 1`), if folds are assigned.
    pub fn num_folds(&self) -> Option<usize> {
        self.folds
            .as_ref()
            .map(|f| f.iter().copied().max().map_or(0, |m| m + 1))
    }

    pub fn fold_of(&self, i: usize) -> Option<usize> {
        self.folds.as_ref().map(|f| f[i])
    }

    /// Record indices grouped by class, in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (i, r) in self.records.iter().enumerate() {
            out[r.label].push(i);
        }
        out
    }

    pub fn with_folds(mut self, folds: Option<Vec<usize>>) -> Result<Self, DataError> {
        self.folds = None;
        Self::new(self.classes, self.dim, self.records, folds)
    }

    /// Same records with a new class-name list of equal length.
    pub fn with_class_names(self, names: Vec<String>) -> Result<Self, DataError> {
        if names.len() != self.classes.len() {
            return Err(DataError::Invalid("class count changed".into()));
        }
        Self::new(ClassSet::new(names)?, self.dim, self.records, self.folds)
    }
}

/// Wraps a `c × d` anchor matrix as a dataset holding one record per class,
/// ordered by class index.
pub fn anchors_to_dataset(classes: &ClassSet, anchors: &Matrix) -> Result<EmbeddingDataset, DataError> {
    if anchors.rows() != classes.len() {
        return Err(DataError::Invalid(format!(
            "{} anchors for {} classes",
            anchors.rows(),
            classes.len()
        )));
    }
    let records = anchors
        .iter_rows()
        .enumerate()
        .map(|(i, row)| {
            Ok(EmbeddingRecord {
                id: classes.name(i).to_string(),
                label: i,
                vector: Vec64::new(row.to_vec()).map_err(num_invalid)?,
            })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    EmbeddingDataset::new(classes.clone(), anchors.cols(), records, None)
}

/// Reads an anchor file back into a `c × d` matrix. The file must hold
/// exactly one record per class and use the same class list as `classes`.
pub fn anchors_from_dataset(anchors: &EmbeddingDataset, classes: &ClassSet) -> Result<Matrix, DataError> {
    if anchors.classes() != classes {
        return Err(DataError::Invalid(
            "anchor file class list differs from dataset class list".into(),
        ));
    }
    let mut rows: Vec<Option<&[f64]>> = vec![None; classes.len()];
    for r in anchors.records() {
        if rows[r.label].replace(r.vector.as_slice()).is_some() {
            return Err(DataError::Invalid(format!(
                "anchor file has more than one record for class {:?}",
                classes.name(r.label)
            )));
        }
    }
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.ok_or_else(|| {
                DataError::Invalid(format!("anchor file lacks class {:?}", classes.name(i)))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Matrix::from_rows(&rows).map_err(num_invalid)
}

fn num_invalid(e: NumError) -> DataError {
    DataError::Invalid(e.to_string())
}

/// On-disk encoding, chosen by file extension (`.bin` → binary, else JSONL).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Jsonl,
    Binary,
}

impl FileFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("plmb") => FileFormat::Binary,
            _ => FileFormat::Jsonl,
        }
    }
}

pub fn load_any(path: &Path) -> Result<EmbeddingDataset, DataError> {
    match FileFormat::from_path(path) {
        FileFormat::Jsonl => load_jsonl(path),
        FileFormat::Binary => load_binary(path),
    }
}

pub fn save_as(dataset: &EmbeddingDataset, path: &Path, format: FileFormat) -> Result<(), DataError> {
    match format {
        FileFormat::Jsonl => save_jsonl(dataset, path),
        FileFormat::Binary => save_binary(dataset, path),
    }
}
