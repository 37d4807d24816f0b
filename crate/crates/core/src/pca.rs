//! Principal component analysis via cyclic Jacobi eigendecomposition of the
//! sample covariance matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const JACOBI_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// How many components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaTarget {
    Components(usize),
    /// Smallest k whose cumulative explained-variance ratio reaches the fraction.
    VarianceFraction(f64),
}

impl Default for PcaTarget {
    fn default() -> Self {
        PcaTarget::VarianceFraction(0.95)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Kept eigenvectors as rows, `[n_components x n_cols]`.
    pub components: Matrix,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// `eigenvalues[i] / trace(covariance)` for every eigenvalue.
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.mean.len()
    }

    pub fn component_names(&self) -> Vec<String> {
        (1..=self.n_components()).map(|i| format!("pc{i}")).collect()
    }
}

/// Sample covariance with `1 / (n - 1)` normalization, plus the column means.
pub fn covariance(features: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let (n, p) = features.shape();
    if n < 2 {
        return Err(Error::invalid("covariance needs at least 2 rows"));
    }
    let mut mean = vec![0.0; p];
    for row in features.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = Matrix::zeros(p, p);
    let mut centered = vec![0.0; p];
    for row in features.row_iter() {
        for ((c, v), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = v - m;
        }
        for a in 0..p {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            for b in a..p {
                cov[(a, b)] += ca * centered[b];
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..p {
        for b in a..p {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok((cov, mean))
}

/// Eigenpairs of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues (unsorted, in diagonal order) and the eigenvector
/// matrix whose *columns* are the eigenvectors. Sweeps run in fixed
/// `(p, q)` order until every off-diagonal entry is below `1e-10`.
pub fn jacobi_eigen(sym: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = sym.rows();
    if sym.cols() != n {
        return Err(Error::shape("Jacobi needs a square matrix"));
    }
    let mut a = sym.clone();
    let mut v = Matrix::identity(n);
    for _ in 0..MAX_SWEEPS {
        let off = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)].abs())
            .fold(0.0, f64::max);
        if off < JACOBI_TOL {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok(((0..n).map(|i| a[(i, i)]).collect(), v))
}

pub fn fit_pca(features: &Matrix, target: PcaTarget) -> Result<PcaModel> {
    let p = features.cols();
    if features.rows() < 2 {
        return Err(Error::invalid("PCA needs at least 2 rows"));
    }
    match target {
        PcaTarget::Components(k) if k == 0 || k > p => {
            return Err(Error::invalid(format!("cannot keep {k} of {p} components")));
        }
        PcaTarget::VarianceFraction(f) if !(f > 0.0 && f <= 1.0) => {
            return Err(Error::invalid(format!("variance fraction {f} not in (0, 1]")));
        }
        _ => {}
    }

    let (cov, mean) = covariance(features)?;
    let trace: f64 = (0..p).map(|i| cov[(i, i)]).sum();
    let (values, vectors) = jacobi_eigen(&cov)?;

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| values[i].max(0.0)).collect();
    let explained_variance_ratio: Vec<f64> = eigenvalues
        .iter()
        .map(|&e| if trace > 0.0 { e / trace } else { 0.0 })
        .collect();

    let k = match target {
        PcaTarget::Components(k) => k,
        PcaTarget::VarianceFraction(f) => {
            let mut cum = 0.0;
            let mut k = p;
            for (i, r) in explained_variance_ratio.iter().enumerate() {
                cum += r;
                // tolerance absorbs rounding in the cumulative sum at f = 1
                if cum >= f - 1e-12 {
                    k = i + 1;
                    break;
                }
            }
            k.max(1)
        }
    };

    let mut components = Matrix::zeros(k, p);
    for (r, &col) in order.iter().take(k).enumerate() {
        let mut vec: Vec<f64> = (0..p).map(|i| vectors[(i, col)]).collect();
        let pivot = vec
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > vec[best].abs() { i } else { best });
        if vec[pivot] < 0.0 {
            vec.iter_mut().for_each(|x| *x = -*x);
        }
        components.row_mut(r).copy_from_slice(&vec);
    }

    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        explained_variance_ratio,
    })
}

/// `(X - mean) * components^T`.
pub fn transform(features: &Matrix, model: &PcaModel) -> Result<Matrix> {
    if features.cols() != model.n_cols() {
        return Err(Error::shape(format!(
            "PCA fitted on {} columns, got {}",
            model.n_cols(),
            features.cols()
        )));
    }
    let k = model.n_components();
    let mut out = Matrix::zeros(features.rows(), k);
    let mut centered = vec![0.0; model.n_cols()];
    for (i, row) in features.row_iter().enumerate() {
        for ((c, v), m) in centered.iter_mut().zip(row).zip(&model.mean) {
            *c = v - m;
        }
        for r in 0..k {
            out[(i, r)] = model
                .components
                .row(r)
                .iter()
                .zip(&centered)
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    Ok(out)
}

/// `scores * components + mean`.
pub fn inverse_transform(scores: &Matrix, model: &PcaModel) -> Result<Matrix> {
    if scores.cols() != model.n_components() {
        return Err(Error::shape(format!(
            "expected {} score columns, got {}",
            model.n_components(),
            scores.cols()
        )));
    }
    let mut out = scores.matmul(&model.components)?;
    for i in 0..out.rows() {
        for (v, m) in out.row_mut(i).iter_mut().zip(&model.mean) {
            *v += m;
        }
    }
    Ok(out)
}
