mod common;

use flowsift::balance::{balance_dataset, kmeans, BalanceConfig, TargetPolicy};
use flowsift::ingest::{Dataset, LabelMap, RowOrigin};
use flowsift::{seed, Matrix};
use proptest::prelude::*;
use rand::Rng;

fn labelled(rows: Vec<Vec<f64>>, labels: Vec<usize>, classes: &[&str]) -> Dataset {
    let names = (0..rows[0].len()).map(|j| format!("f{j}")).collect();
    Dataset::new(Matrix::from_rows(&rows).unwrap(), names, labels, LabelMap::from_names(classes)).unwrap()
}

/// Random imbalanced dataset: class c gets `counts[c]` rows scattered around
/// a class-specific center.
fn imbalanced(seed_value: u64, counts: &[usize]) -> Dataset {
    let mut rng = seed::rng(seed_value);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            rows.push((0..3).map(|d| rng.random_range(-1.0..1.0) + ((c + d) % 3) as f64).collect());
            labels.push(c);
        }
    }
    let names: Vec<String> = (0..counts.len()).map(|c| format!("c{c}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    labelled(rows, labels, &refs)
}

#[test]
fn kmeans_recovers_separated_blobs() {
    let (rows, truth) = common::two_blobs(4, 100, 3, 20.0);
    let c = kmeans(&Matrix::from_rows(&rows).unwrap(), 2, 9).unwrap();
    // nearest-blob-center oracle: points sharing a blob share a cluster
    let first = c.assignment[0];
    for (a, t) in c.assignment.iter().zip(&truth) {
        assert_eq!(*a == first, *t == truth[0]);
    }
}

#[test]
fn deficit_follows_cluster_shares() {
    // a: 30 + 30 across two far blobs, b: 8 in the first, 4 in the second
    let mut rng = seed::rng(1);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (center, a, b) in [(0.0, 30, 8), (100.0, 30, 4)] {
        for i in 0..a + b {
            rows.push(vec![center + rng.random_range(-1.0..1.0), center + rng.random_range(-1.0..1.0)]);
            labels.push(usize::from(i >= a));
        }
    }
    let d = labelled(rows, labels, &["a", "b"]);
    let (out, report) = balance_dataset(&d, &BalanceConfig { k: Some(2), ..BalanceConfig::default() }).unwrap();
    assert_eq!(out.class_counts(), vec![60, 60]);
    let clustering = report.clustering.as_ref().unwrap();
    let near_origin = clustering.assignment[0];
    let quotas = &report.per_class[1].synthetic_per_cluster;
    assert_eq!(quotas[near_origin], 32);
    assert_eq!(quotas[1 - near_origin], 16);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn originals_survive_and_counts_match(s in any::<u64>(), counts in prop::collection::vec(2usize..40, 2..5)) {
        let d = imbalanced(s, &counts);
        let (out, _) = balance_dataset(&d, &BalanceConfig { seed: s, ..BalanceConfig::default() }).unwrap();
        let majority = *counts.iter().max().unwrap();
        prop_assert!(out.class_counts().iter().all(|&c| c == majority));
        for (i, origin) in out.origins().iter().enumerate() {
            if let RowOrigin::Original(src) = *origin {
                prop_assert_eq!(out.features().row(i), d.features().row(src));
                prop_assert_eq!(out.labels()[i], d.labels()[src]);
            }
        }
        let originals = out.origins().iter().filter(|o| !o.is_synthetic()).count();
        prop_assert_eq!(originals, d.n_rows());
    }

    #[test]
    fn synthetic_rows_stay_in_cluster_box(s in any::<u64>(), counts in prop::collection::vec(2usize..30, 2..4), k in 1usize..4) {
        let d = imbalanced(s, &counts);
        let cfg = BalanceConfig { k: Some(k), seed: s, ..BalanceConfig::default() };
        let (out, report) = balance_dataset(&d, &cfg).unwrap();
        let assignment = &report.clustering.as_ref().unwrap().assignment;
        let synthetic: Vec<usize> = (0..out.n_rows()).filter(|&i| out.origins()[i].is_synthetic()).collect();
        prop_assert_eq!(synthetic.len(), report.synthetic_cluster.len());
        for (&i, &cluster) in synthetic.iter().zip(&report.synthetic_cluster) {
            let class = out.labels()[i];
            let members: Vec<&[f64]> = (0..d.n_rows())
                .filter(|&j| assignment[j] == cluster && d.labels()[j] == class)
                .map(|j| d.features().row(j))
                .collect();
            prop_assert!(!members.is_empty());
            for (dim, &v) in out.features().row(i).iter().enumerate() {
                let lo = members.iter().map(|m| m[dim]).fold(f64::INFINITY, f64::min);
                let hi = members.iter().map(|m| m[dim]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn kmeans_inertia_never_rises(s in any::<u64>(), k in 1usize..6) {
        let d = imbalanced(s, &[20, 15, 10]);
        let c = kmeans(d.features(), k, s).unwrap();
        prop_assert!(c.assignment.iter().all(|&a| a < k));
        prop_assert!(c.inertia >= 0.0);
        prop_assert!(c.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        // converged centroids are the means of their members
        if c.iterations_run < flowsift::balance::MAX_LLOYD_ITERATIONS {
            for cluster in 0..k {
                let members: Vec<usize> = (0..d.n_rows()).filter(|&i| c.assignment[i] == cluster).collect();
                if members.is_empty() {
                    continue;
                }
                for dim in 0..3 {
                    let mean = members.iter().map(|&i| d.features()[(i, dim)]).sum::<f64>() / members.len() as f64;
                    prop_assert!((c.centroids[(cluster, dim)] - mean).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn balancing_is_deterministic(s in any::<u64>(), factor in 1.0f64..3.0) {
        let d = imbalanced(s, &[30, 7, 12]);
        let cfg = BalanceConfig { target_policy: TargetPolicy::ExplicitFactor(factor), seed: s, ..BalanceConfig::default() };
        prop_assert_eq!(balance_dataset(&d, &cfg).unwrap().0, balance_dataset(&d, &cfg).unwrap().0);
    }
}
