use proptest::prelude::*;
use transduct_core::split::{make_novelty_split, make_synthetic_2d};
use transduct_core::training::{build_contaminated_batch, fake_count};
use transduct_core::{seeded_rng, ArchConfig, Generator, ImageBatch, ImageShape, ImageStore, PriorConfig};

/// A store whose pixel values encode (partition, index) so split members can
/// be traced back.
fn store(train_labels: Vec<u8>, test_labels: Vec<u8>) -> ImageStore {
    let shape = ImageShape::new(1, 1, 2);
    let batch = |labels: &[u8], tag: f32| {
        let data = labels
            .iter()
            .enumerate()
            .flat_map(|(i, &l)| [tag + i as f32, f32::from(l)])
            .collect();
        ImageBatch::new(shape, data).unwrap()
    };
    let train = batch(&train_labels, 0.0);
    let test = batch(&test_labels, 100_000.0);
    ImageStore::new(train, train_labels, test, test_labels).unwrap()
}

fn labels(max_len: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, 1..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn novelty_split_invariants(
        train in labels(200),
        test in labels(400),
        class in 0u8..4,
        pi in 0.02f64..0.6,
        seed in any::<u64>(),
    ) {
        let s = store(train.clone(), test.clone());
        let Ok(split) = make_novelty_split(&s, class, pi, seed) else {
            return Ok(());
        };
        let data = split.training_data();
        let hidden = split.evaluation_labels().is_novel();
        // the negative set is every training sample outside the novel class
        let expected_neg = train.iter().filter(|&&l| l != class).count();
        prop_assert_eq!(data.x_n.count(), expected_neg);
        for i in 0..data.x_n.count() {
            prop_assert_ne!(data.x_n.sample(i)[1], f32::from(class));
        }
        // hidden labels agree with the class stored in each sample
        prop_assert_eq!(hidden.len(), data.x_u.count());
        for (i, &novel) in hidden.iter().enumerate() {
            prop_assert_eq!(novel, data.x_u.sample(i)[1] == f32::from(class));
            prop_assert!(data.x_u.sample(i)[0] >= 100_000.0);
        }
        // the realized rate is within one sample of the request
        let novel = hidden.iter().filter(|&&b| b).count();
        prop_assert!((split.pi_actual() - novel as f64 / hidden.len() as f64).abs() < 1e-12);
        prop_assert!((split.pi_actual() - pi).abs() <= 1.0 / hidden.len() as f64 + 1e-12);
        // one side of the unlabeled set is always complete
        let inliers_total = test.iter().filter(|&&l| l != class).count();
        let novel_total = test.len() - inliers_total;
        prop_assert!(novel == novel_total || hidden.len() - novel == inliers_total);
        // the same seed gives the same split
        let again = make_novelty_split(&s, class, pi, seed).unwrap();
        prop_assert_eq!(again.unlabeled_refs(), split.unlabeled_refs());
    }

    #[test]
    fn synthetic_split_has_the_exact_novel_count(
        n_neg in 1usize..300,
        n_unl in 2usize..300,
        pi in 0.01f64..0.99,
        seed in any::<u64>(),
    ) {
        let Ok(split) = make_synthetic_2d(n_neg, n_unl, pi, seed) else {
            return Ok(());
        };
        let hidden = split.evaluation_labels().is_novel();
        prop_assert_eq!(split.training_data().x_n.count(), n_neg);
        prop_assert_eq!(hidden.len(), n_unl);
        prop_assert_eq!(hidden.iter().filter(|&&b| b).count(), (pi * n_unl as f64).round() as usize);
    }

    #[test]
    fn contaminated_batch_layout(m in 2usize..80, pi in 0.01f64..0.99, seed in any::<u64>()) {
        let arch = ArchConfig::synthetic_2d();
        let mut rng = seeded_rng(seed);
        let g = Generator::new(&arch, &mut rng).unwrap();
        let prior = PriorConfig::default_for(2, pi).unwrap();
        let pool = ImageBatch::new(arch.image, (0..200).map(|i| i as f32 + 1000.0).collect()).unwrap();
        let k = (pi * m as f64).floor() as usize;
        match build_contaminated_batch(&pool, &g, &prior, m, pi, &mut rng) {
            Err(_) => prop_assert_eq!(k, 0),
            Ok(batch) => {
                prop_assert_eq!(fake_count(m, pi).unwrap(), k);
                prop_assert_eq!(batch.fake_count, k);
                prop_assert_eq!(&batch.fake_indices, &(0..k).collect::<Vec<_>>());
                prop_assert_eq!(batch.images.count(), m);
                prop_assert_eq!(batch.real_count(), m - k);
                // reals are distinct pool members
                let mut reals: Vec<u32> = (k..m).map(|i| batch.images.sample(i)[0] as u32).collect();
                prop_assert!(reals.iter().all(|&v| v >= 1000));
                reals.sort_unstable();
                reals.dedup();
                prop_assert_eq!(reals.len(), m - k);
            }
        }
    }
}
