use super::HarnessError;
use crate::embedio::EmbeddingDataset;
use crate::rng::SeededRng;

/// Few-shot training indices and the rest of the pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotSplit {
    /// Class-major, in draw order within each class.
    pub train: Vec<usize>,
    /// Pool members not drawn, ascending.
    pub remainder: Vec<usize>,
    /// `(class, available)` for every class with fewer than `k` samples.
    pub clamped: Vec<(usize, usize)>,
}

/// `min(k, class size)` records per class from the whole dataset.
pub fn few_shot_sample(dataset: &EmbeddingDataset, k: usize, seed: u64) -> Result<FewShotSplit, HarnessError> {
    let pool: Vec<usize> = (0..dataset.len()).collect();
    few_shot_sample_from(dataset, &pool, k, seed)
}

/// As [`few_shot_sample`], restricted to the records in `pool`.
///
/// Each class's pool members are shuffled with one shared stream in class
/// order and the first `k` are taken, so smaller `k` draws a prefix of a
/// larger one under the same seed.
pub fn few_shot_sample_from(
    dataset: &EmbeddingDataset,
    pool: &[usize],
    k: usize,
    seed: u64,
) -> Result<FewShotSplit, HarnessError> {
    if k == 0 {
        return Err(HarnessError::Config("shots must be >= 1".into()));
    }
    let mut by_class = vec![Vec::new(); dataset.num_classes()];
    for &i in pool {
        by_class[dataset.records()[i].label].push(i);
    }
    let mut rng = SeededRng::new(seed);
    let mut train = Vec::new();
    let mut taken = vec![false; dataset.len()];
    let mut clamped = Vec::new();
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            return Err(HarnessError::EmptyClass(dataset.classes().name(class).to_string()));
        }
        idx.sort_unstable();
        rng.shuffle(&mut idx);
        if idx.len() < k {
            clamped.push((class, idx.len()));
        }
        for &i in idx.iter().take(k) {
            taken[i] = true;
            train.push(i);
        }
    }
    let mut remainder: Vec<usize> = pool.iter().copied().filter(|&i| !taken[i]).collect();
    remainder.sort_unstable();
    Ok(FewShotSplit {
        train,
        remainder,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedio::{generate_synthetic, SyntheticSpec};

    fn data(per_class: usize) -> EmbeddingDataset {
        let spec = SyntheticSpec {
            classes: 10,
            dim: 8,
            samples_per_class: per_class,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec).unwrap().0
    }

    #[test]
    fn sixteen_per_class() {
        let ds = data(100);
        let split = few_shot_sample(&ds, 16, 0).unwrap();
        assert_eq!(split.train.len(), 160);
        assert_eq!(split.remainder.len(), 840);
        let mut counts = [0; 10];
        for &i in &split.train {
            counts[ds.records()[i].label] += 1;
        }
        assert_eq!(counts, [16; 10]);
        assert!(split.clamped.is_empty());
        assert_eq!(split, few_shot_sample(&ds, 16, 0).unwrap());
        assert_ne!(split.train, few_shot_sample(&ds, 16, 1).unwrap().train);
    }

    #[test]
    fn clamps_small_classes() {
        let ds = data(5);
        let split = few_shot_sample(&ds, 16, 3).unwrap();
        assert_eq!(split.train.len(), 50);
        assert!(split.remainder.is_empty());
        assert_eq!(split.clamped.len(), 10);
        assert_eq!(split.clamped[0], (0, 5));
    }

    #[test]
    fn smaller_k_is_a_prefix() {
        let ds = data(30);
        let big = few_shot_sample(&ds, 8, 4).unwrap();
        let small = few_shot_sample(&ds, 2, 4).unwrap();
        for class in 0..10 {
            assert_eq!(small.train[class * 2..class * 2 + 2], big.train[class * 8..class * 8 + 2]);
        }
    }

    #[test]
    fn empty_class_in_pool() {
        let ds = data(4);
        let pool: Vec<usize> = (4..ds.len()).collect();
        assert!(matches!(few_shot_sample_from(&ds, &pool, 1, 0), Err(HarnessError::EmptyClass(_))));
        assert!(few_shot_sample(&ds, 0, 0).is_err());
    }
}
