//! Little-endian binary layout:
//!
//! ```text
//! "PLMB" | u32 version | u32 dim | u32 classes
//! classes × (u16 len, utf-8 name)
//! u64 record count
//! records × (u16 len, utf-8 id, u32 label, i32 fold or -1, dim × f64)
//! ```

use std::fs;
use std::path::Path;

use super::jsonl::collect_folds;
use super::{ClassSet, DataError, EmbeddingDataset, EmbeddingRecord};
use crate::tensorcore::Vec64;

pub const BINARY_MAGIC: &[u8; 4] = b"PLMB";
pub const BINARY_VERSION: u32 = 1;

pub fn save_binary(dataset: &EmbeddingDataset, path: &Path) -> Result<(), DataError> {
    fs::write(path, encode(dataset)?)?;
    Ok(())
}

pub fn load_binary(path: &Path) -> Result<EmbeddingDataset, DataError> {
    decode(&fs::read(path)?)
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), DataError> {
    let len = u16::try_from(s.len())
        .map_err(|_| DataError::format(None, format!("string too long for u16 length: {s:?}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub(crate) fn encode(dataset: &EmbeddingDataset) -> Result<Vec<u8>, DataError> {
    let d = dataset.dim();
    let mut out = Vec::with_capacity(32 + dataset.len() * (16 + 8 * d));
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.num_classes() as u32).to_le_bytes());
    for name in dataset.classes().names() {
        put_str(&mut out, name)?;
    }
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for (i, r) in dataset.records().iter().enumerate() {
        put_str(&mut out, &r.id)?;
        out.extend_from_slice(&(r.label as u32).to_le_bytes());
        let fold = dataset.fold_of(i).map_or(-1, |f| f as i32);
        out.extend_from_slice(&fold.to_le_bytes());
        for v in r.vector.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8], DataError> {
        if self.buf.len() - self.pos < n {
            return Err(DataError::format(None, "unexpected end of stream"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DataError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn i32(&mut self) -> Result<i32, DataError> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String, DataError> {
        let n = self.u16()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| DataError::format(None, "invalid UTF-8 string"))
    }
}

pub(crate) fn decode(buf: &[u8]) -> Result<EmbeddingDataset, DataError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4).map_err(|_| DataError::format(None, "bad magic"))? != BINARY_MAGIC {
        return Err(DataError::format(None, "bad magic"));
    }
    let version = r.u32()?;
    if version != BINARY_VERSION {
        return Err(DataError::format(None, format!("unsupported version {version}")));
    }
    let dim = r.u32()? as usize;
    let c = r.u32()? as usize;
    let mut names = Vec::with_capacity(c.min(1 << 16));
    for _ in 0..c {
        names.push(r.string()?);
    }
    let classes = ClassSet::new(names)?;
    let n = r.u64()?;
    let mut records = Vec::new();
    let mut folds = Vec::new();
    for _ in 0..n {
        let id = r.string()?;
        let label = r.u32()? as usize;
        let fold = r.i32()?;
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            vector.push(r.f64()?);
        }
        if label >= classes.len() {
            return Err(DataError::format(
                None,
                format!("record {id:?}: label {label} out of range"),
            ));
        }
        let vector = Vec64::new(vector)
            .map_err(|e| DataError::format(None, format!("record {id:?}: {e}")))?;
        folds.push(match fold {
            -1 => None,
            f if f >= 0 => Some(f as usize),
            f => return Err(DataError::format(None, format!("record {id:?}: fold {f}"))),
        });
        records.push(EmbeddingRecord { id, label, vector });
    }
    if r.pos != buf.len() {
        return Err(DataError::format(None, "trailing bytes after last record"));
    }
    EmbeddingDataset::new(classes, dim, records, collect_folds(folds)?)
}
