mod common;

use palmlab::embedio::*;
use palmlab::harness::{few_shot_sample, few_shot_sample_from};
use palmlab::methods::zero_shot_predict;
use palmlab::tensorcore::{Matrix, Vec64};
use proptest::prelude::*;

fn dataset_strategy() -> impl Strategy<Value = EmbeddingDataset> {
    (2usize..5, 2usize..6, 1usize..6).prop_flat_map(|(c, d, per)| {
        proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, d), c * per).prop_map(move |vs| {
            let classes = ClassSet::new((0..c).map(|i| format!("class {i}, \"q\"")).collect()).unwrap();
            let records = vs
                .into_iter()
                .enumerate()
                .map(|(i, mut v)| {
                    v[0] += 20.0; // keep every vector away from zero
                    EmbeddingRecord {
                        id: format!("r{i}"),
                        label: i % c,
                        vector: Vec64::new(v).unwrap(),
                    }
                })
                .collect();
            EmbeddingDataset::new(classes, d, records, None).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn files_round_trip_bit_exact(ds in dataset_strategy(), folds in proptest::option::of(0usize..3)) {
        let ds = match folds {
            Some(f) => {
                let n = ds.len();
                ds.with_folds(Some((0..n).map(|i| (i + f) % 3).collect())).unwrap()
            }
            None => ds,
        };
        let dir = tempfile::tempdir().unwrap();
        for name in ["d.jsonl", "d.bin"] {
            let p = dir.path().join(name);
            save_as(&ds, &p, FileFormat::from_path(&p)).unwrap();
            let back = load_any(&p).unwrap();
            prop_assert_eq!(&back, &ds);
        }
    }

    #[test]
    fn folds_partition_each_class(ds in dataset_strategy(), seed in any::<u64>()) {
        let per_class = ds.indices_by_class().iter().map(|v| v.len()).min().unwrap();
        prop_assume!(per_class >= 2);
        let folded = assign_folds(&ds, 2, seed).unwrap();
        let f = folded.folds().unwrap();
        prop_assert_eq!(f.len(), ds.len());
        for class in ds.indices_by_class() {
            let zeros = class.iter().filter(|&&i| f[i] == 0).count();
            let ones = class.len() - zeros;
            prop_assert!(zeros.abs_diff(ones) <= 1);
        }
    }

    #[test]
    fn few_shot_train_and_rest_are_disjoint(ds in dataset_strategy(), k in 1usize..8, seed in any::<u64>()) {
        let split = few_shot_sample(&ds, k, seed).unwrap();
        let mut seen = vec![0u8; ds.len()];
        for &i in split.train.iter().chain(&split.remainder) {
            seen[i] += 1;
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        let ids: std::collections::HashSet<_> = split.train.iter().map(|&i| &ds.records()[i].id).collect();
        prop_assert!(split.remainder.iter().all(|&i| !ids.contains(&ds.records()[i].id)));
        let pool: Vec<usize> = (0..ds.len()).collect();
        prop_assert_eq!(split, few_shot_sample_from(&ds, &pool, k, seed).unwrap());
    }

    #[test]
    fn zero_shot_invariances(
        rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 2..6),
        x in proptest::collection::vec(-1.0f64..1.0, 4),
        scale in 0.01f64..100.0,
        rot in 0usize..6,
    ) {
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r[0] += 3.0; r }).collect();
        let mut x = x;
        x[1] += 2.0;
        let feats = Matrix::from_rows(&rows).unwrap();
        let p = zero_shot_predict(&x, &feats).unwrap();
        prop_assert_eq!(p, common::brute_force(&x, &rows));
        // positive rescaling of the audio changes nothing
        let scaled: Vec<f64> = x.iter().map(|v| v * scale).collect();
        let ps = zero_shot_predict(&scaled, &feats).unwrap();
        prop_assert!(ps == p || (cos(&x, &rows[ps]) - cos(&x, &rows[p])).abs() < 1e-12);
        // relabelling classes relabels the prediction
        let c = rows.len();
        let k = rot % c;
        let rotated: Vec<Vec<f64>> = (0..c).map(|i| rows[(i + k) % c].clone()).collect();
        let pr = zero_shot_predict(&x, &Matrix::from_rows(&rotated).unwrap()).unwrap();
        let back = (pr + k) % c;
        prop_assert!(back == p || (cos(&x, &rows[back]) - cos(&x, &rows[p])).abs() < 1e-12);
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d / (a.iter().map(|v| v * v).sum::<f64>().sqrt() * b.iter().map(|v| v * v).sum::<f64>().sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn every_predict_matches_exhaustive_scan(seed in any::<u64>()) {
        for (path, pred, oracle) in common::prediction_paths(seed) {
            prop_assert_eq!(pred, oracle, "{} on instance {}", path, seed);
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences(seed in any::<u64>(), which in 0usize..8) {
        let method = common::GRADIENT_METHODS[which];
        let (r, _) = common::gradient_case(method, seed);
        prop_assert!(r.max_rel_error <= 1e-4, "{} seed {}: {:?}", method, seed, r);
    }
}
