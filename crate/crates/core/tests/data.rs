use std::path::PathBuf;

use fedlap_core::data::{
    dirichlet_split, homogeneous_split, load_csv, quadratic_clients, split_dataset, CsvSchema, FeatureStats,
    QuadraticSpec, ShardAssignment, SplitKind, SplitSpec, UCI_CREDIT_LAYOUT,
};
use ndarray::Array2;
use proptest::prelude::*;

fn credit_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/uci_credit/crx.data")
}

fn check_partition(a: &ShardAssignment, labels: &[usize], class_count: usize) -> Result<(), TestCaseError> {
    let mut seen = vec![0u8; labels.len()];
    for shard in &a.shards {
        for &i in shard {
            prop_assert!(i < labels.len());
            seen[i] += 1;
        }
    }
    prop_assert!(seen.iter().all(|&s| s == 1), "indices not covered exactly once");
    for c in 0..class_count {
        let total = labels.iter().filter(|&&l| l == c).count();
        let assigned: usize = a.per_class_counts.iter().map(|row| row[c]).sum();
        prop_assert_eq!(total, assigned);
    }
    for (shard, counts) in a.shards.iter().zip(&a.per_class_counts) {
        prop_assert_eq!(shard.len(), counts.iter().sum::<usize>());
        for c in 0..class_count {
            prop_assert_eq!(shard.iter().filter(|&&i| labels[i] == c).count(), counts[c]);
        }
    }
    Ok(())
}

fn labels_strategy() -> impl Strategy<Value = (Vec<usize>, usize, usize)> {
    (1usize..8, 1usize..12).prop_flat_map(|(c, k)| {
        (prop::collection::vec(0..c, k.max(1)..=1000), Just(c), Just(k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn dirichlet_split_partitions_exactly(
        (labels, c, k) in labels_strategy(),
        alpha1 in 0.1f64..5.0,
        alpha2 in 0.1f64..5.0,
        seed in any::<u64>(),
    ) {
        let spec = SplitSpec { kind: SplitKind::Dirichlet, clients: k, alpha1, alpha2, seed, shards: None };
        // Spiky draws with few points may legitimately exhaust the retries.
        match dirichlet_split(&labels, c, &spec) {
            Ok(a) => {
                prop_assert_eq!(a.client_count(), k);
                prop_assert!(a.shards.iter().all(|s| !s.is_empty()));
                check_partition(&a, &labels, c)?;
                prop_assert_eq!(&a, &dirichlet_split(&labels, c, &spec).unwrap());
            }
            Err(e) => prop_assert!(e.to_string().contains("stayed empty"), "unexpected failure: {e}"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn homogeneous_split_partitions_and_balances((labels, c, k) in labels_strategy(), seed in any::<u64>()) {
        let a = homogeneous_split(&labels, c, k, seed).unwrap();
        check_partition(&a, &labels, c)?;
        let sizes = a.sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(a, homogeneous_split(&labels, c, k, seed).unwrap());
    }

    #[test]
    fn standardization_is_idempotent(rows in 2usize..40, cols in 1usize..5, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-50.0..50.0));
        FeatureStats::fit(&x).apply(&mut x);
        let before = x.clone();
        FeatureStats::fit(&x).apply(&mut x);
        for (a, b) in x.iter().zip(before.iter()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn different_seeds_give_different_dirichlet_splits() {
    let labels: Vec<usize> = (0..500).map(|i| i % 5).collect();
    let spec = |seed| SplitSpec {
        kind: SplitKind::Dirichlet,
        clients: 5,
        seed,
        ..Default::default()
    };
    assert_ne!(dirichlet_split(&labels, 5, &spec(1)).unwrap(), dirichlet_split(&labels, 5, &spec(2)).unwrap());
}

#[test]
fn credit_file_loads_with_expected_counts() {
    let ds = load_csv(credit_path(), &CsvSchema::uci_credit()).unwrap();
    assert_eq!(ds.train_len() + ds.test_labels.len(), 653);
    assert_eq!(ds.class_count, 2);
    ds.validate().unwrap();
    // Standardized numeric columns on the training split.
    let n = ds.train_len() as f64;
    for j in 0..ds.input_dim() {
        let col = ds.train_inputs.column(j);
        let mean = col.sum() / n;
        let binary = col.iter().all(|&v| v == 0.0 || v == 1.0);
        if !binary {
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9 && (var.sqrt() - 1.0).abs() < 1e-9, "column {j}");
        }
    }
}

#[test]
fn credit_fixed_split_matches_layout() {
    let ds = load_csv(credit_path(), &CsvSchema::uci_credit()).unwrap();
    let spec = SplitSpec {
        kind: SplitKind::UciCreditFixed,
        clients: 10,
        ..Default::default()
    };
    let a = split_dataset(&ds.train_labels, 2, &spec).unwrap();
    assert_eq!(a.total(), 515);
    for (k, &(n, pos)) in UCI_CREDIT_LAYOUT.iter().enumerate() {
        assert_eq!(a.shards[k].len(), n);
        assert_eq!(a.per_class_counts[k][1], pos);
    }
    assert_eq!(a, split_dataset(&ds.train_labels, 2, &spec).unwrap());
}

#[test]
fn quadratic_clients_are_seeded() {
    let spec = QuadraticSpec::default();
    let a = quadratic_clients(&spec, 3, 11).unwrap();
    let b = quadratic_clients(&spec, 3, 11).unwrap();
    let c = quadratic_clients(&spec, 3, 12).unwrap();
    assert_eq!(a.oracle(1.0).unwrap(), b.oracle(1.0).unwrap());
    assert_ne!(a.oracle(1.0).unwrap(), c.oracle(1.0).unwrap());
    assert!(quadratic_clients(&QuadraticSpec { dim: 0, ..spec }, 3, 0).is_err());
}
