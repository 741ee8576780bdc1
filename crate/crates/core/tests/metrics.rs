use pnsis::metrics::{accuracy, mean_std, roc_auc};
use proptest::prelude::*;

/// Pairwise-comparison AUC, quadratic but obviously correct.
fn brute_auc(s: &[f64], y: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                den += 1.0;
                num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

fn both_classes() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u8..6, any::<bool>()), 2..40)
        .prop_filter("needs both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
        .prop_map(|v| (v.iter().map(|x| f64::from(x.0) / 5.0).collect(), v.iter().map(|x| x.1).collect()))
}

proptest! {
    #[test]
    fn auc_matches_pairwise_count((s, y) in both_classes()) {
        prop_assert!((roc_auc(&s, &y).unwrap() - brute_auc(&s, &y)).abs() < 1e-12);
    }

    #[test]
    fn flipping_labels_mirrors_auc((s, y) in both_classes()) {
        let flipped: Vec<bool> = y.iter().map(|b| !b).collect();
        prop_assert!((roc_auc(&s, &y).unwrap() + roc_auc(&s, &flipped).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_ignores_monotone_transforms((s, y) in both_classes()) {
        let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
        prop_assert_eq!(roc_auc(&s, &y).unwrap(), roc_auc(&t, &y).unwrap());
    }
}

#[test]
fn separated_scores_give_one_and_constant_scores_half() {
    assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
    assert_eq!(roc_auc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
    assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
}

#[test]
fn summary_statistics() {
    assert_eq!(accuracy(&[0, 1, 2, 2], &[0, 1, 1, 2]), 0.75);
    assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
}
