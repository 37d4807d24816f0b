mod common;

use flowsift::ingest::{one_hot, Dataset, LabelMap};
use flowsift::models::cnn::{self, CnnNet, CnnParams, ConvBlock};
use flowsift::models::forest::{RandomForest, RfParams};
use flowsift::models::{build_cnn, train_cnn, train_random_forest};
use flowsift::{seed, Matrix};
use proptest::prelude::*;
use rand::Rng;

fn blobs(seed_value: u64, n: usize) -> Dataset {
    let (rows, labels) = common::two_blobs(seed_value, n, 4, 10.0);
    let names = (0..4).map(|j| format!("f{j}")).collect();
    Dataset::new(Matrix::from_rows(&rows).unwrap(), names, labels, LabelMap::from_names(["a", "b"])).unwrap()
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

#[test]
fn forest_fits_separable_blobs() {
    let d = blobs(3, 200);
    let m = train_random_forest(&d, &RfParams { n_trees: 10, ..RfParams::default() }).unwrap();
    let pred = m.predict(d.features()).unwrap();
    assert_eq!(accuracy(&pred.labels, d.labels()), 1.0);
}

#[test]
fn cnn_learns_single_threshold() {
    // one feature, class = x > 0.5; a single pool-free block fits a 1-wide input
    for s in 0..10 {
        let mut rng = seed::rng(s);
        let mut make = |n: usize| {
            let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
            let labels = rows.iter().map(|r| usize::from(r[0] > 0.5)).collect();
            Dataset::new(Matrix::from_rows(&rows).unwrap(), vec!["x".into()], labels, LabelMap::from_names(["hi", "lo"]))
                .unwrap()
        };
        let train = make(200);
        let validation = make(200);
        let p = CnnParams {
            conv_blocks: vec![ConvBlock { n_filters: 16, kernel_size: 3, pool_size: 1 }],
            learning_rate: 1e-2,
            epochs: 30,
            seed: s,
            ..CnnParams::default()
        };
        let m = build_cnn(&p, train.feature_names().to_vec(), train.label_map().clone()).unwrap();
        let (_, history) = train_cnn(m, &train, &validation, &p).unwrap();
        let best = history.epochs.iter().filter_map(|e| e.validation_accuracy).fold(0.0, f64::max);
        assert!(best >= 0.95, "seed {s}: best validation accuracy {best}");
    }
}

#[test]
fn zero_network_bias_gradient_is_softmax_minus_target() {
    let p = CnnParams { dropout_rate: 0.0, ..CnnParams::default() };
    let mut net = CnnNet::new(&p, 8, 4).unwrap();
    net.params_mut().iter_mut().for_each(|w| *w = 0.0);
    let x = Matrix::from_vec(1, 8, vec![0.3; 8]).unwrap();
    let y = one_hot(&[2], 4).unwrap();
    let (loss, grad) = net.loss_and_gradients(&x, &y, None).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-12);
    let want = [0.25, 0.25, -0.75, 0.25];
    for (g, w) in grad[net.output_bias_range()].iter().zip(want) {
        assert!((g - w).abs() < 1e-12);
    }
}

/// Central differences on a two-block network, so gradients pass through
/// two pooling stages.
fn two_block_error(seed_value: u64) -> f64 {
    let block = |n_filters| ConvBlock { n_filters, kernel_size: 3, pool_size: 2 };
    let p = CnnParams {
        conv_blocks: vec![block(3), block(2)],
        dense_units: 5,
        dropout_rate: 0.3,
        seed: seed_value,
        ..CnnParams::default()
    };
    let mut net = CnnNet::new(&p, 12, 3).unwrap();
    let mut rng = seed::rng(seed_value ^ 0x5eed);
    for w in net.params_mut() {
        *w = rng.random_range(-0.5..0.5);
    }
    let x = Matrix::from_vec(4, 12, (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let y = one_hot(&[0, 2, 1, 2], 3).unwrap();
    let masks = net.dropout_masks(4, &mut rng);
    let (_, analytic) = net.loss_and_gradients(&x, &y, Some(&masks)).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..net.n_params() {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + h;
        let (up, _) = net.loss_and_gradients(&x, &y, Some(&masks)).unwrap();
        net.params_mut()[i] = orig - h;
        let (down, _) = net.loss_and_gradients(&x, &y, Some(&masks)).unwrap();
        net.params_mut()[i] = orig;
        worst = worst.max(common::rel_err(analytic[i], (up - down) / (2.0 * h)));
    }
    worst
}

#[test]
fn two_block_gradients_match_finite_differences() {
    for s in 0..10 {
        let err = two_block_error(s);
        assert!(err < 1e-4, "seed {s}: max relative error {err}");
    }
}

#[test]
fn cnn_training_ignores_row_order() {
    let d = blobs(8, 40);
    let p = CnnParams { epochs: 3, seed: 2, ..CnnParams::default() };
    let mut reversed: Vec<usize> = (0..d.n_rows()).collect();
    reversed.reverse();
    let r = d.subset(&reversed);
    let fit = |d: &Dataset| {
        let mut net = CnnNet::new(&p, 4, 2).unwrap();
        cnn::train(&mut net, d.features(), d.labels(), None, &p).unwrap();
        net.params().to_vec()
    };
    assert_eq!(fit(&d), fit(&r));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_rows_are_distributions(s in any::<u64>(), rows in 1usize..20) {
        let p = CnnParams { seed: s, ..CnnParams::default() };
        let net = CnnNet::new(&p, 8, 5).unwrap();
        let mut rng = seed::rng(s);
        let x = Matrix::from_vec(rows, 8, (0..rows * 8).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let probs = net.predict_proba(&x).unwrap();
        for row in probs.row_iter() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn pure_duplicates_never_hurt_training_accuracy(s in any::<u64>(), dups in prop::collection::vec(0usize..60, 1..20)) {
        let d = blobs(s, 60);
        let params = RfParams { n_trees: 5, seed: s, ..RfParams::default() };
        let base = RandomForest::fit(d.features(), d.labels(), 2, &params).unwrap();
        let before = accuracy(&argmax_rows(&base.predict_proba(d.features()).unwrap()), d.labels());
        let idx: Vec<usize> = (0..60).chain(dups).collect();
        let bigger = d.subset(&idx);
        let grown = RandomForest::fit(bigger.features(), bigger.labels(), 2, &params).unwrap();
        let after = accuracy(&argmax_rows(&grown.predict_proba(bigger.features()).unwrap()), bigger.labels());
        prop_assert_eq!(before, 1.0);
        prop_assert!(after >= before);
    }
}

fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.row_iter().map(flowsift::models::argmax).collect()
}
