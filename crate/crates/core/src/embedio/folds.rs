use super::{DataError, EmbeddingDataset};
use crate::rng::SeededRng;

/// Stratified fold assignment: within each class the records are shuffled
/// by `seed` and dealt round-robin into `folds` folds.
pub fn assign_folds(
    dataset: &EmbeddingDataset,
    folds: usize,
    seed: u64,
) -> Result<EmbeddingDataset, DataError> {
    if folds < 2 {
        return Err(DataError::Invalid(format!("fold count must be >= 2, got {folds}")));
    }
    let by_class = dataset.indices_by_class();
    for (c, idx) in by_class.iter().enumerate() {
        if idx.len() < folds {
            return Err(DataError::TooFewSamples {
                class: dataset.classes().name(c).to_string(),
                available: idx.len(),
                folds,
            });
        }
    }
    let mut rng = SeededRng::new(seed);
    let mut assignment = vec![0usize; dataset.len()];
    for mut idx in by_class {
        rng.shuffle(&mut idx);
        for (pos, rec) in idx.into_iter().enumerate() {
            assignment[rec] = pos % folds;
        }
    }
    dataset.clone().with_folds(Some(assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedio::{ClassSet, EmbeddingRecord};
    use crate::tensorcore::Vec64;

    fn dataset(per_class: &[usize]) -> EmbeddingDataset {
        let names = (0..per_class.len()).map(|i| format!("c{i}")).collect();
        let mut records = Vec::new();
        for (label, &n) in per_class.iter().enumerate() {
            for k in 0..n {
                records.push(EmbeddingRecord {
                    id: format!("{label}-{k}"),
                    label,
                    vector: Vec64::new(vec![1.0 + k as f64, label as f64]).unwrap(),
                });
            }
        }
        EmbeddingDataset::new(ClassSet::new(names).unwrap(), 2, records, None).unwrap()
    }

    fn counts(ds: &EmbeddingDataset, f: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![0; ds.num_classes()]; f];
        for (i, r) in ds.records().iter().enumerate() {
            out[ds.fold_of(i).unwrap()][r.label] += 1;
        }
        out
    }

    #[test]
    fn exact_division() {
        let ds = assign_folds(&dataset(&[20; 5]), 5, 3).unwrap();
        assert_eq!(ds.num_folds(), Some(5));
        for fold in counts(&ds, 5) {
            assert_eq!(fold, vec![4; 5]);
        }
    }

    #[test]
    fn uneven_class() {
        let ds = assign_folds(&dataset(&[3, 4]), 2, 0).unwrap();
        let c = counts(&ds, 2);
        let mut sizes = vec![c[0][0], c[1][0]];
        sizes.sort();
        assert_eq!(sizes, vec![1, 2]);
    }

    #[test]
    fn deterministic_and_errors() {
        let base = dataset(&[7, 9, 5]);
        assert_eq!(assign_folds(&base, 3, 9).unwrap(), assign_folds(&base, 3, 9).unwrap());
        assert!(matches!(
            assign_folds(&base, 6, 0),
            Err(DataError::TooFewSamples { available: 5, folds: 6, .. })
        ));
        assert!(assign_folds(&base, 1, 0).is_err());
    }
}
