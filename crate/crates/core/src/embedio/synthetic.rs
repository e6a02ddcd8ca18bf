use serde::{Deserialize, Serialize};

use super::{ClassSet, DataError, EmbeddingDataset, EmbeddingRecord};
use crate::rng::SeededRng;
use crate::tensorcore::{normalize, Matrix, Vec64};

/// Parameters of the synthetic aligned audio/text embedding space.
///
/// Text anchors are random unit vectors. Audio cluster `i` sits at
/// `anchor_i + gap·g + alignment_noise·ξ_i`, where `g` is one unit "gap"
/// direction shared by every audio record and `ξ_i` is a standard-normal
/// per-class misalignment. Each record adds `within_class_spread·η` with
/// per-record standard-normal `η` and is L2-normalised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub text_anchor_seed: u64,
    pub audio_seed: u64,
    pub alignment_noise: f64,
    pub modality_gap: f64,
    pub within_class_spread: f64,
}

impl Default for SyntheticSpec {
    /// The reference configuration used throughout the test suite.
    fn default() -> Self {
        Self {
            classes: 6,
            dim: 64,
            samples_per_class: 100,
            text_anchor_seed: 7,
            audio_seed: 11,
            alignment_noise: 0.9,
            modality_gap: 0.5,
            within_class_spread: 0.3,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.to_string()));
        if self.classes < 2 {
            return bad("classes must be >= 2");
        }
        if self.dim < 2 {
            return bad("dim must be >= 2");
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be >= 1");
        }
        if !(self.alignment_noise >= 0.0 && self.alignment_noise.is_finite()) {
            return bad("alignment_noise must be finite and >= 0");
        }
        if !(self.modality_gap >= 0.0 && self.modality_gap.is_finite()) {
            return bad("modality_gap must be finite and >= 0");
        }
        if !(self.within_class_spread > 0.0 && self.within_class_spread.is_finite()) {
            return bad("within_class_spread must be finite and > 0");
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes).map(|i| format!("class_{i}")).collect()
    }
}

/// Deterministic in `spec`: same spec, same bytes.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(EmbeddingDataset, Matrix), DataError> {
    spec.validate()?;
    let (c, d) = (spec.classes, spec.dim);
    let unit = |v: Vec<f64>| normalize(&v).map_err(|e| DataError::InvalidSpec(e.to_string()));

    let mut text_rng = SeededRng::new(spec.text_anchor_seed);
    let anchors = (0..c)
        .map(|_| unit(text_rng.normals(d, 1.0)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut audio_rng = SeededRng::new(spec.audio_seed);
    let gap = unit(audio_rng.normals(d, 1.0))?;
    let misalign: Vec<Vec<f64>> = (0..c).map(|_| audio_rng.normals(d, 1.0)).collect();

    let mut records = Vec::with_capacity(c * spec.samples_per_class);
    for (label, (anchor, xi)) in anchors.iter().zip(&misalign).enumerate() {
        let center: Vec<f64> = (0..d)
            .map(|j| anchor[j] + spec.modality_gap * gap[j] + spec.alignment_noise * xi[j])
            .collect();
        for k in 0..spec.samples_per_class {
            let v: Vec<f64> = center
                .iter()
                .map(|m| m + spec.within_class_spread * audio_rng.normal())
                .collect();
            records.push(EmbeddingRecord {
                id: format!("class_{label}_{k:04}"),
                label,
                vector: Vec64::new(unit(v)?).map_err(|e| DataError::InvalidSpec(e.to_string()))?,
            });
        }
    }
    let classes = ClassSet::new(spec.class_names())?;
    let dataset = EmbeddingDataset::new(classes, d, records, None)?;
    let anchors = Matrix::from_rows(&anchors).map_err(|e| DataError::InvalidSpec(e.to_string()))?;
    Ok((dataset, anchors))
}
