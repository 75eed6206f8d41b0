use proptest::prelude::*;
use transduct_core::auroc;

/// Pairwise definition: P(s_pos > s_neg) + 0.5 P(s_pos = s_neg).
fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Scores drawn from a small integer grid so ties are common, with at least
/// one sample of each class.
fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=200).prop_flat_map(|n| {
        (
            prop::collection::vec((0i32..12).prop_map(|v| f64::from(v) * 0.25), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = true;
                l[1] = false;
                (s, l)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matches_the_pairwise_definition((scores, labels) in instance()) {
        let fast = auroc(&scores, &labels).unwrap();
        let slow = auroc_pairwise(&scores, &labels);
        prop_assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    }

    #[test]
    fn invariant_under_increasing_maps((scores, labels) in instance(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let base = auroc(&scores, &labels).unwrap();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3) + s).collect();
        prop_assert!((auroc(&affine, &labels).unwrap() - base).abs() < 1e-12);
        prop_assert!((auroc(&cubed, &labels).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn negated_scores_give_the_complement((scores, labels) in instance()) {
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = auroc(&scores, &labels).unwrap() + auroc(&neg, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stays_in_the_unit_interval((scores, labels) in instance()) {
        let v = auroc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn four_point_example() {
    let v = auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
    assert_eq!(v, 0.75);
}

#[test]
fn single_class_and_nan_are_errors() {
    assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    assert!(auroc(&[0.1, f64::NAN], &[true, false]).is_err());
    assert!(auroc(&[0.1], &[true, false]).is_err());
}
