//! Min-max scaling into [0, 1], Pearson correlation and histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-column extrema fitted by [`fit_minmax`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    #[serde(rename = "columns")]
    pub column_names: Vec<String>,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl NormStats {
    pub fn n_cols(&self) -> usize {
        self.mins.len()
    }

    /// Maps scaled values back to the original units. Constant columns come
    /// back as their single fitted value.
    pub fn denormalize(&self, scaled: &Matrix) -> Result<Matrix> {
        self.check_cols(scaled.cols())?;
        let mut out = scaled.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * (self.maxs[j] - self.mins[j]) + self.mins[j];
            }
        }
        Ok(out)
    }

    fn check_cols(&self, cols: usize) -> Result<()> {
        if cols != self.n_cols() {
            return Err(Error::shape(format!(
                "scaler fitted on {} columns, got {cols}",
                self.n_cols()
            )));
        }
        Ok(())
    }
}

/// Column-wise minima and maxima. Column names default to `x0..`; use
/// [`fit_minmax_named`] to carry dataset names into the persisted scaler.
pub fn fit_minmax(features: &Matrix) -> Result<NormStats> {
    let names = (0..features.cols()).map(|j| format!("x{j}")).collect();
    fit_minmax_named(features, names)
}

pub fn fit_minmax_named(features: &Matrix, column_names: Vec<String>) -> Result<NormStats> {
    if features.rows() == 0 {
        return Err(Error::invalid("cannot fit min-max scaler on zero rows"));
    }
    if column_names.len() != features.cols() {
        return Err(Error::shape("column name count differs from matrix width"));
    }
    let mut mins = features.row(0).to_vec();
    let mut maxs = mins.clone();
    for row in features.row_iter().skip(1) {
        for (j, &v) in row.iter().enumerate() {
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
    }
    Ok(NormStats {
        column_names,
        mins,
        maxs,
    })
}

/// `(x - min) / (max - min)`, clamped to [0, 1]; constant columns map to 0.
pub fn apply_minmax(features: &Matrix, stats: &NormStats) -> Result<Matrix> {
    stats.check_cols(features.cols())?;
    let mut out = features.clone();
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            let span = stats.maxs[j] - stats.mins[j];
            *v = if span > 0.0 {
                ((*v - stats.mins[j]) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub column_names: Vec<String>,
    pub values: Matrix,
}

/// Sample Pearson correlation between every pair of columns. Pairs touching
/// a zero-variance column are 0, including that column's diagonal entry.
pub fn pearson_correlation(features: &Matrix) -> Result<CorrelationMatrix> {
    let (n, p) = features.shape();
    if n < 2 {
        return Err(Error::invalid("correlation needs at least 2 rows"));
    }
    let means: Vec<f64> = (0..p)
        .map(|j| features.row_iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut centered = features.clone();
    for i in 0..n {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    let ct = centered.transpose();
    let sd: Vec<f64> = (0..p)
        .map(|j| ct.row(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();

    let mut values = Matrix::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            let r = if sd[a] == 0.0 || sd[b] == 0.0 {
                0.0
            } else if a == b {
                1.0
            } else {
                let dot: f64 = ct.row(a).iter().zip(ct.row(b)).map(|(x, y)| x * y).sum();
                (dot / (sd[a] * sd[b])).clamp(-1.0, 1.0)
            };
            values[(a, b)] = r;
            values[(b, a)] = r;
        }
    }
    Ok(CorrelationMatrix {
        column_names: (0..p).map(|j| format!("x{j}")).collect(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]`; the maximum lands in the last bin.
/// A constant column yields one zero-width bin holding every value.
pub fn histogram(column: &[f64], n_bins: usize) -> Result<Vec<HistogramBin>> {
    if column.is_empty() {
        return Err(Error::invalid("histogram of an empty column"));
    }
    if n_bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let (lo, hi) = column
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if lo == hi {
        return Ok(vec![HistogramBin {
            lower: lo,
            upper: hi,
            count: column.len(),
        }]);
    }
    let width = (hi - lo) / n_bins as f64;
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|b| HistogramBin {
            lower: lo + b as f64 * width,
            upper: if b + 1 == n_bins {
                hi
            } else {
                lo + (b + 1) as f64 * width
            },
            count: 0,
        })
        .collect();
    for &v in column {
        bins[bin_index(v, lo, hi, n_bins)].count += 1;
    }
    Ok(bins)
}

/// Bin of `v` among `n_bins` equal-width bins over `[lo, hi]` with `lo < hi`.
pub(crate) fn bin_index(v: f64, lo: f64, hi: f64, n_bins: usize) -> usize {
    let b = ((v - lo) / (hi - lo) * n_bins as f64).floor();
    if b < 0.0 {
        0
    } else {
        (b as usize).min(n_bins - 1)
    }
}
