mod common;

use flowsift::fcbf::{fcbf_select_columns, symmetrical_uncertainty};
use proptest::prelude::*;

fn names(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("f{j}")).collect()
}

proptest! {
    #[test]
    fn matches_reference_walk(seed in any::<u64>(), n_features in 1usize..=8, threshold in 0.0f64..0.2) {
        let (columns, class) = common::random_discrete(seed, 60, n_features);
        let got = fcbf_select_columns(&columns, &class, &names(n_features), threshold).unwrap();
        prop_assert_eq!(got.selected_indices, common::fcbf_ref(&columns, &class, threshold));
    }

    #[test]
    fn selection_is_sorted_subset_above_threshold(seed in any::<u64>(), threshold in 0.0f64..0.2) {
        let (columns, class) = common::random_discrete(seed, 80, 8);
        let s = fcbf_select_columns(&columns, &class, &names(8), threshold).unwrap();
        let mut unique = s.selected_indices.clone();
        unique.sort_unstable();
        unique.dedup();
        prop_assert_eq!(unique.len(), s.selected_indices.len());
        prop_assert!(s.selected_indices.iter().all(|&j| j < 8));
        let su: Vec<f64> = s
            .selected_indices
            .iter()
            .map(|&j| symmetrical_uncertainty(&columns[j], &class).unwrap())
            .collect();
        prop_assert!(su.iter().all(|&v| v >= threshold));
        prop_assert!(su.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn duplicating_a_selected_feature_changes_nothing(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let (mut columns, class) = common::random_discrete(seed, 80, 6);
        let before = fcbf_select_columns(&columns, &class, &names(6), 0.0).unwrap();
        prop_assume!(!before.selected_indices.is_empty());
        let dup = before.selected_indices[pick.index(before.selected_indices.len())];
        columns.push(columns[dup].clone());
        let after = fcbf_select_columns(&columns, &class, &names(7), 0.0).unwrap();
        prop_assert_eq!(after.selected_indices.len(), before.selected_indices.len());
    }

    #[test]
    fn su_matches_counting_reference(
        x in prop::collection::vec(0usize..5, 1..100),
        salt in any::<u64>(),
    ) {
        let y: Vec<usize> = x.iter().enumerate().map(|(i, &v)| (v + (salt as usize >> (i % 60))) % 4).collect();
        let got = symmetrical_uncertainty(&x, &y).unwrap();
        prop_assert!((got - common::su_ref(&x, &y)).abs() < 1e-12);
    }
}
