use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassSet, DataError, EmbeddingDataset, EmbeddingRecord};
use crate::tensorcore::Vec64;

pub const JSONL_FORMAT: &str = "palmlab-embed";
pub const JSONL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dim: usize,
    classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Line {
    id: String,
    label: usize,
    vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fold: Option<usize>,
}

pub fn save_jsonl(dataset: &EmbeddingDataset, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        format: JSONL_FORMAT.into(),
        version: JSONL_VERSION,
        dim: dataset.dim(),
        classes: dataset.classes().names().to_vec(),
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| DataError::format(Some(1), e.to_string()))?;
    w.write_all(b"\n")?;
    for (i, r) in dataset.records().iter().enumerate() {
        let line = Line {
            id: r.id.clone(),
            label: r.label,
            vector: r.vector.as_slice().to_vec(),
            fold: dataset.fold_of(i),
        };
        serde_json::to_writer(&mut w, &line)
            .map_err(|e| DataError::format(Some(i + 2), e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_jsonl(path: &Path) -> Result<EmbeddingDataset, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let header: Header = loop {
        match lines.next() {
            None => return Err(DataError::format(Some(1), "missing header line")),
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line)
                    .map_err(|e| DataError::format(Some(i + 1), format!("bad header: {e}")))?;
            }
        }
    };
    if header.format != JSONL_FORMAT {
        return Err(DataError::format(
            Some(1),
            format!("unknown format {:?}", header.format),
        ));
    }
    if header.version != JSONL_VERSION {
        return Err(DataError::format(
            Some(1),
            format!("unsupported version {}", header.version),
        ));
    }
    let classes = ClassSet::new(header.classes)?;

    let mut records = Vec::new();
    let mut folds: Vec<Option<usize>> = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)
            .map_err(|e| DataError::format(Some(lineno), e.to_string()))?;
        if parsed.vector.len() != header.dim {
            return Err(DataError::DimensionMismatch {
                id: parsed.id,
                expected: header.dim,
                found: parsed.vector.len(),
            });
        }
        if parsed.label >= classes.len() {
            return Err(DataError::format(
                Some(lineno),
                format!("label {} out of range for {} classes", parsed.label, classes.len()),
            ));
        }
        let vector = Vec64::new(parsed.vector)
            .map_err(|e| DataError::format(Some(lineno), e.to_string()))?;
        records.push(EmbeddingRecord {
            id: parsed.id,
            label: parsed.label,
            vector,
        });
        folds.push(parsed.fold);
    }
    let folds = collect_folds(folds)?;
    EmbeddingDataset::new(classes, header.dim, records, folds)
}

/// Either every record carries a fold or none does.
pub(super) fn collect_folds(folds: Vec<Option<usize>>) -> Result<Option<Vec<usize>>, DataError> {
    let assigned = folds.iter().filter(|f| f.is_some()).count();
    if assigned == 0 {
        Ok(None)
    } else if assigned == folds.len() {
        Ok(Some(folds.into_iter().flatten().collect()))
    } else {
        Err(DataError::Invalid(format!(
            "{assigned} of {} records carry a fold; folds must be all-or-none",
            folds.len()
        )))
    }
}
