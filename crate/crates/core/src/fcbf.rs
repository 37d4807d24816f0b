//! Fast correlation-based filter (FCBF) feature selection.
//!
//! Relevance and redundancy are both measured with symmetrical uncertainty
//! on discretized features:
//!
//! ```text
//! SU(X, Y) = 2 * IG(X; Y) / (H(X) + H(Y)),   IG = H(X) + H(Y) - H(X, Y)
//! ```
//!
//! with plug-in entropies in bits. Selection walks features in descending
//! SU-with-class order, keeps a feature whose score exceeds the threshold and
//! then drops every later feature `g` that it dominates, i.e.
//! `SU(f, g) >= SU(g, class)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::matrix::Matrix;
use crate::normalize::bin_index;

pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_THRESHOLD: f64 = 0.01;

/// Equal-width bin ids over `[min, max]`; a constant column is all zeros.
pub fn discretize_equal_width(column: &[f64], n_bins: usize) -> Result<Vec<usize>> {
    if column.is_empty() {
        return Err(Error::invalid("cannot discretize an empty column"));
    }
    if n_bins < 2 {
        return Err(Error::invalid("discretization needs at least 2 bins"));
    }
    let (lo, hi) = column
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if lo == hi {
        return Ok(vec![0; column.len()]);
    }
    Ok(column.iter().map(|&v| bin_index(v, lo, hi, n_bins)).collect())
}

/// Replaces every feature with its equal-width bin id (stored as `f64`).
pub fn discretize_dataset(d: &Dataset, n_bins: usize) -> Result<Dataset> {
    let (rows, cols) = d.features().shape();
    let mut out = Matrix::zeros(rows, cols);
    for j in 0..cols {
        let bins = discretize_equal_width(&d.features().column(j), n_bins)?;
        for (i, b) in bins.into_iter().enumerate() {
            out[(i, j)] = b as f64;
        }
    }
    d.with_features(out, d.feature_names().to_vec())
}

/// Summed over sorted counts, so the result depends only on the multiset of
/// counts; this keeps SU(x, y) and SU(y, x) bit-identical and exact ties in
/// the redundancy test resolve the same way from either side.
fn entropy_of_codes(mut codes: Vec<u64>) -> f64 {
    let n = codes.len() as f64;
    codes.sort_unstable();
    let mut counts = Vec::new();
    let mut run = 0usize;
    for i in 0..codes.len() {
        run += 1;
        if i + 1 == codes.len() || codes[i + 1] != codes[i] {
            counts.push(run);
            run = 0;
        }
    }
    counts.sort_unstable();
    let mut h = 0.0;
    for c in counts {
        let p = c as f64 / n;
        h -= p * p.log2();
    }
    h
}

/// Plug-in Shannon entropy in bits.
pub fn entropy(x: &[usize]) -> f64 {
    entropy_of_codes(x.iter().map(|&v| v as u64).collect())
}

fn joint_entropy(x: &[usize], y: &[usize]) -> f64 {
    // dense ids keep the packed pair code collision-free
    let dense = |v: &[usize]| -> Vec<u64> {
        let mut uniq = v.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        v.iter()
            .map(|a| uniq.binary_search(a).expect("value present") as u64)
            .collect()
    };
    let (dx, dy) = (dense(x), dense(y));
    let width = dy.iter().max().map_or(1, |m| m + 1);
    entropy_of_codes(dx.iter().zip(&dy).map(|(a, b)| a * width + b).collect())
}

/// Symmetrical uncertainty in [0, 1]; 0 when both variables are constant.
pub fn symmetrical_uncertainty(x: &[usize], y: &[usize]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "SU of sequences with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::invalid("SU of empty sequences"));
    }
    Ok(su_unchecked(x, y))
}

fn su_unchecked(x: &[usize], y: &[usize]) -> f64 {
    let hx = entropy(x);
    let hy = entropy(y);
    let denom = hx + hy;
    if denom <= 0.0 {
        return 0.0;
    }
    let ig = hx + hy - joint_entropy(x, y);
    (2.0 * ig / denom).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuScore {
    pub feature_index: usize,
    pub su_with_class: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSubset {
    pub selected_indices: Vec<usize>,
    pub selected_names: Vec<String>,
    pub scores: Vec<SuScore>,
    pub threshold: f64,
}

impl FeatureSubset {
    /// Projects a dataset onto the selected columns by name.
    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        d.select_columns(&self.selected_names)
    }
}

/// FCBF over pre-discretized columns.
pub fn fcbf_select_columns(
    columns: &[Vec<usize>],
    class: &[usize],
    names: &[String],
    threshold: f64,
) -> Result<FeatureSubset> {
    if !(threshold >= 0.0) {
        return Err(Error::invalid(format!("threshold {threshold} must be >= 0")));
    }
    if names.len() != columns.len() {
        return Err(Error::shape("feature name count differs from column count"));
    }
    if let Some(c) = columns.iter().find(|c| c.len() != class.len()) {
        return Err(Error::shape(format!(
            "column of length {} vs {} class labels",
            c.len(),
            class.len()
        )));
    }
    if class.is_empty() {
        return Err(Error::invalid("FCBF on an empty dataset"));
    }

    let relevance: Vec<f64> = columns.iter().map(|c| su_unchecked(c, class)).collect();
    let mut order: Vec<usize> = (0..columns.len()).collect();
    // stable sort keeps ascending column index among ties
    order.sort_by(|&a, &b| relevance[b].total_cmp(&relevance[a]));

    let mut removed = vec![false; columns.len()];
    let mut kept = Vec::new();
    for (pos, &f) in order.iter().enumerate() {
        if removed[f] || relevance[f] <= threshold {
            continue;
        }
        kept.push(f);
        for &g in &order[pos + 1..] {
            if !removed[g] && su_unchecked(&columns[f], &columns[g]) >= relevance[g] {
                removed[g] = true;
            }
        }
    }

    Ok(FeatureSubset {
        selected_names: kept.iter().map(|&i| names[i].clone()).collect(),
        scores: kept
            .iter()
            .map(|&i| SuScore {
                feature_index: i,
                su_with_class: relevance[i],
            })
            .collect(),
        selected_indices: kept,
        threshold,
    })
}

/// FCBF on a dataset whose features already hold non-negative integer bin ids.
pub fn fcbf_select(d: &Dataset, threshold: f64) -> Result<FeatureSubset> {
    let (rows, cols) = d.features().shape();
    let mut columns = vec![Vec::with_capacity(rows); cols];
    for row in d.features().row_iter() {
        for (j, &v) in row.iter().enumerate() {
            if !(v >= 0.0 && v.fract() == 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "feature `{}` is not discretized (value {v})",
                    d.feature_names()[j]
                )));
            }
            columns[j].push(v as usize);
        }
    }
    fcbf_select_columns(&columns, d.labels(), d.feature_names(), threshold)
}
