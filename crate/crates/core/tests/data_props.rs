use lcl_core::data::{
    generate_synthetic, kept_per_class, subsample, Dataset, Split, SyntheticSpec,
};
use lcl_core::similarity::{build_cosine_similarity, cosine};
use proptest::prelude::*;

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..6, 1usize..4).prop_flat_map(|(c, d)| {
        prop::collection::vec(1usize..30, c).prop_map(move |counts| {
            let mut features = Vec::new();
            let mut labels = Vec::new();
            for (label, &n) in counts.iter().enumerate() {
                for k in 0..n {
                    labels.push(label);
                    features.extend((0..d).map(|j| (label * 100 + k * 10 + j) as f64));
                }
            }
            Dataset::new(features, labels, d, c, Split::Train).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn subsample_is_stratified(ds in dataset_strategy(), dr in 0.01f64..=1.0, seed in any::<u64>()) {
        let sub = subsample(&ds, dr, seed).unwrap();
        let before = ds.class_counts();
        let after = sub.class_counts();
        for (b, a) in before.iter().zip(&after) {
            prop_assert_eq!(*a, kept_per_class(*b, dr));
            prop_assert!(*a >= 1 && *a <= *b);
        }
        // kept rows are a subset of the original rows
        for i in 0..sub.len() {
            let found = (0..ds.len()).any(|k| ds.features(k) == sub.features(i) && ds.labels()[k] == sub.labels()[i]);
            prop_assert!(found);
        }
    }

    #[test]
    fn subsample_is_deterministic(ds in dataset_strategy(), dr in 0.01f64..=1.0, seed in any::<u64>()) {
        let a = subsample(&ds, dr, seed).unwrap();
        let b = subsample(&ds, dr, seed).unwrap();
        prop_assert_eq!(a.to_csv_string(), b.to_csv_string());
    }
}

fn nearest(centers: &[Vec<f64>], x: &[f64]) -> usize {
    let dist = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    (0..centers.len())
        .min_by(|&a, &b| dist(&centers[a]).total_cmp(&dist(&centers[b])))
        .unwrap()
}

#[test]
fn tiny_noise_is_separable_by_nearest_center() {
    let spec = SyntheticSpec {
        noise_sigma: 1e-9,
        train_per_class: 10,
        test_per_class: 10,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let centers = data.class_embeddings.vectors();
    for ds in [&data.train, &data.test] {
        for i in 0..ds.len() {
            assert_eq!(nearest(centers, ds.features(i)), ds.labels()[i]);
        }
    }
}

#[test]
fn class_embeddings_pass_dominance_over_many_seeds() {
    for seed in 0..50 {
        let spec = SyntheticSpec {
            seed,
            train_per_class: 1,
            test_per_class: 1,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        build_cosine_similarity(&data.class_embeddings, true).unwrap();
    }
}

#[test]
fn superclusters_are_visible_in_cosine() {
    let spec = SyntheticSpec {
        num_superclusters: 2,
        classes_per_supercluster: 2,
        train_per_class: 1,
        test_per_class: 1,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let v = data.class_embeddings.vectors();
    let (mut within, mut across) = (Vec::new(), Vec::new());
    for i in 0..4 {
        for j in i + 1..4 {
            let c = cosine(&v[i], &v[j]).unwrap();
            if i / 2 == j / 2 {
                within.push(c);
            } else {
                across.push(c);
            }
        }
    }
    assert_eq!(within.len() + across.len(), 6);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    assert!(mean(&within) > mean(&across));
}

#[test]
fn generator_shapes_and_labels() {
    let spec = SyntheticSpec {
        train_per_class: 7,
        test_per_class: 3,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    assert_eq!(data.train.len(), 20 * 7);
    assert_eq!(data.test.len(), 20 * 3);
    assert_eq!(data.train.class_counts(), vec![7; 20]);
    assert_eq!(data.class_embeddings.len(), 20);
    assert_eq!(data.class_embeddings.dim(), 32);
    assert_eq!(data.class_embeddings.class_names()[6], "s1c1");
}
