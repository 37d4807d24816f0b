#![allow(dead_code)]

use std::collections::HashMap;

use flowsift::seed;
use rand::Rng;

/// Entropy in bits by direct frequency counting.
pub fn entropy_ref<T: std::hash::Hash + Eq>(xs: impl Iterator<Item = T>) -> f64 {
    let mut counts: HashMap<T, usize> = HashMap::new();
    let mut n = 0usize;
    for x in xs {
        *counts.entry(x).or_default() += 1;
        n += 1;
    }
    let mut probs: Vec<f64> = counts.values().map(|&c| c as f64 / n as f64).collect();
    probs.sort_by(f64::total_cmp);
    -probs.iter().map(|p| p * p.log2()).sum::<f64>()
}

pub fn su_ref(x: &[usize], y: &[usize]) -> f64 {
    let hx = entropy_ref(x.iter());
    let hy = entropy_ref(y.iter());
    if hx + hy == 0.0 {
        return 0.0;
    }
    let hxy = entropy_ref(x.iter().zip(y));
    (2.0 * (hx + hy - hxy) / (hx + hy)).clamp(0.0, 1.0)
}

/// FCBF written out literally: rank by relevance, walk the list,
/// keep anything above the threshold and strike out what it dominates.
pub fn fcbf_ref(columns: &[Vec<usize>], class: &[usize], threshold: f64) -> Vec<usize> {
    let rel: Vec<f64> = columns.iter().map(|c| su_ref(c, class)).collect();
    let mut sorted: Vec<usize> = (0..columns.len()).collect();
    sorted.sort_by(|&a, &b| rel[b].partial_cmp(&rel[a]).unwrap().then(a.cmp(&b)));
    let mut selected = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let f = sorted[i];
        if rel[f] > threshold {
            selected.push(f);
            let tail: Vec<usize> = sorted[i + 1..]
                .iter()
                .copied()
                .filter(|&g| su_ref(&columns[f], &columns[g]) < rel[g])
                .collect();
            sorted.truncate(i + 1);
            sorted.extend(tail);
        }
        i += 1;
    }
    selected
}

/// Random small discrete dataset with some planted structure.
pub fn random_discrete(seed: u64, n_rows: usize, n_features: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut rng = seed::rng(seed);
    let n_classes = rng.random_range(2..5);
    let class: Vec<usize> = (0..n_rows).map(|_| rng.random_range(0..n_classes)).collect();
    let columns = (0..n_features)
        .map(|_| {
            let bins = rng.random_range(2..6);
            let kind = rng.random_range(0..3);
            class
                .iter()
                .map(|&c| match kind {
                    // noisy copy of the class
                    0 if rng.random::<f64>() < 0.7 => c % bins,
                    // pure noise
                    _ => rng.random_range(0..bins),
                })
                .collect()
        })
        .collect();
    (columns, class)
}

/// Two well-separated Gaussian-free blobs in `dim` dimensions: points uniform
/// in a unit box around the origin (class 0) or around `offset` (class 1).
pub fn two_blobs(seed: u64, n: usize, dim: usize, offset: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = seed::rng(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        rows.push(
            (0..dim)
                .map(|_| rng.random_range(-0.5..0.5) + c as f64 * offset)
                .collect(),
        );
        labels.push(c);
    }
    (rows, labels)
}

/// P(X >= k) for X ~ Binomial(n, 1/2).
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut p = 0.0;
    for k in wins..=n {
        let mut c = 1.0f64;
        for j in 0..k {
            c = c * (n - j) as f64 / (j + 1) as f64;
        }
        p += c * 0.5f64.powi(n as i32);
    }
    p
}

/// One-sample Kolmogorov-Smirnov statistic against Uniform(lo, hi).
pub fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Relative error with an absolute floor, so tiny gradients compare on
/// absolute terms.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
