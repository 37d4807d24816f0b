//! Class rebalancing: k-means over all rows, then SMOTE inside each cluster.
//!
//! Every non-majority class has a deficit (rows to synthesize). The deficit
//! is split across clusters in proportion to where that class's rows sit,
//! using largest-remainder rounding so the parts add up exactly, and each
//! cluster's share is synthesized from that cluster's members of the class.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, RowOrigin};
use crate::matrix::Matrix;
use crate::seed::{self, Rng};

pub const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after each Lloyd iteration; non-increasing.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.row_iter().enumerate() {
        let d = sq_dist(row, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp_init(x: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = x.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = x.row_iter().map(|r| sq_dist(r, x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // every point coincides with a chosen centroid
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, r) in x.row_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, x.row(next)));
        }
    }
    x.select_rows(&chosen)
}

fn inertia_of(x: &Matrix, centroids: &Matrix, assignment: &[usize]) -> f64 {
    x.row_iter()
        .zip(assignment)
        .map(|(r, &c)| sq_dist(r, centroids.row(c)))
        .sum()
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Iterates until the assignment stops changing or 300 iterations. A cluster
/// that empties is reseeded at the point farthest from its own centroid.
pub fn kmeans(x: &Matrix, k: usize, seed: u64) -> Result<Clustering> {
    let n = x.rows();
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if n < k {
        return Err(Error::invalid(format!("k-means with k = {k} on {n} rows")));
    }
    let mut rng = seed::rng(seed);
    let mut centroids = kmeans_pp_init(x, k, &mut rng);
    let mut assignment: Vec<usize> = x.row_iter().map(|r| nearest(r, &centroids).0).collect();
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        let mut sums = Matrix::zeros(k, x.cols());
        let mut counts = vec![0usize; k];
        for (r, &c) in x.row_iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(r) {
                *s += v;
            }
        }
        let mut reseeded = false;
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assignment[i]] > 1)
                    .map(|i| (i, sq_dist(x.row(i), centroids.row(assignment[i]))))
                    .fold(None, |best: Option<(usize, f64)>, cur| match best {
                        Some(b) if b.1 >= cur.1 => Some(b),
                        _ => Some(cur),
                    });
                if let Some((i, _)) = far {
                    counts[assignment[i]] -= 1;
                    counts[c] = 1;
                    assignment[i] = c;
                    centroids.row_mut(c).copy_from_slice(x.row(i));
                    reseeded = true;
                }
            }
        }
        history.push(inertia_of(x, &centroids, &assignment));

        let next: Vec<usize> = x.row_iter().map(|r| nearest(r, &centroids).0).collect();
        if next == assignment && !reseeded {
            break;
        }
        assignment = next;
    }

    let inertia = inertia_of(x, &centroids, &assignment);
    Ok(Clustering {
        centroids,
        assignment,
        inertia,
        iterations_run: iterations,
        inertia_history: history,
    })
}

/// Indices of the `k` nearest other rows of `i`, by distance then index.
fn neighbors(x: &Matrix, i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..x.rows())
        .filter(|&j| j != i)
        .map(|j| (sq_dist(x.row(i), x.row(j)), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, j)| j).collect()
}

/// SMOTE from an explicit generator. Each synthetic row draws, in order, a
/// base row index, a neighbor slot and the interpolation weight.
pub fn smote_with_rng(
    minority: &Matrix,
    n_synthetic: usize,
    k_neighbors: usize,
    rng: &mut Rng,
) -> Result<Matrix> {
    let m = minority.rows();
    if m == 0 {
        return Err(Error::invalid("SMOTE needs at least one minority row"));
    }
    if k_neighbors == 0 {
        return Err(Error::invalid("SMOTE needs k_neighbors >= 1"));
    }
    let mut out = Matrix::zeros(n_synthetic, minority.cols());
    if m == 1 {
        for s in 0..n_synthetic {
            out.row_mut(s).copy_from_slice(minority.row(0));
        }
        return Ok(out);
    }
    let k = k_neighbors.min(m - 1);
    let table: Vec<Vec<usize>> = (0..m).map(|i| neighbors(minority, i, k)).collect();
    for s in 0..n_synthetic {
        let p = rng.random_range(0..m);
        let q = table[p][rng.random_range(0..k)];
        let u: f64 = rng.random();
        let (base, other) = (minority.row(p), minority.row(q));
        for (dst, (a, b)) in out.row_mut(s).iter_mut().zip(base.iter().zip(other)) {
            *dst = a + u * (b - a);
        }
    }
    Ok(out)
}

/// `n_synthetic` convex combinations of minority rows and their nearest
/// minority neighbors. A single-row minority is duplicated instead.
pub fn smote_oversample(
    minority: &Matrix,
    n_synthetic: usize,
    k_neighbors: usize,
    seed: u64,
) -> Result<Matrix> {
    smote_with_rng(minority, n_synthetic, k_neighbors, &mut seed::rng(seed))
}

/// Splits `total` proportionally to `weights` with largest-remainder
/// rounding. Ties in the remainder go to the lower index.
pub fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut out = Vec::with_capacity(weights.len());
    let mut rems = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        // exact integer arithmetic for floor and remainder
        let num = total as u128 * w as u128;
        out.push((num / sum as u128) as usize);
        rems.push((num % sum as u128, i));
    }
    let mut left = total - out.iter().sum::<usize>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(r, i) in &rems {
        if left == 0 {
            break;
        }
        if r > 0 {
            out[i] += 1;
            left -= 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "factor")]
pub enum TargetPolicy {
    /// Every class grows to the majority count.
    MatchMajority,
    /// Every non-majority class grows to `ceil(N * count)` rows.
    ExplicitFactor(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalanceConfig {
    /// Number of clusters; `None` uses the number of classes.
    pub k: Option<usize>,
    pub smote_k_neighbors: usize,
    pub target_policy: TargetPolicy,
    pub seed: u64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            k: None,
            smote_k_neighbors: 5,
            target_policy: TargetPolicy::MatchMajority,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub class: String,
    pub before: usize,
    pub after: usize,
    /// Synthetic rows generated in each cluster for this class.
    pub synthetic_per_cluster: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub k: usize,
    pub seed: u64,
    pub per_class: Vec<ClassBalance>,
    pub per_cluster_synthetic: Vec<usize>,
    /// Cluster each synthetic row was drawn from, in output order.
    #[serde(skip)]
    pub synthetic_cluster: Vec<usize>,
    #[serde(skip)]
    pub clustering: Option<Clustering>,
}

pub fn balance_dataset(d: &Dataset, cfg: &BalanceConfig) -> Result<(Dataset, BalanceReport)> {
    let counts = d.class_counts();
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::invalid("balancing needs at least 2 classes present"));
    }
    if cfg.smote_k_neighbors == 0 {
        return Err(Error::invalid("smote_k_neighbors must be >= 1"));
    }
    let k = cfg.k.unwrap_or(d.n_classes()).max(1).min(d.n_rows());
    if let TargetPolicy::ExplicitFactor(f) = cfg.target_policy {
        if !(f >= 1.0 && f.is_finite()) {
            return Err(Error::invalid(format!("SMOTE factor {f} must be >= 1")));
        }
    }
    // lowest index wins ties
    let majority = (0..counts.len()).fold(0, |best, c| if counts[c] > counts[best] { c } else { best });

    let clustering = kmeans(d.features(), k, seed::child_seed(cfg.seed, "kmeans"))?;

    let n_classes = d.n_classes();
    let mut members = vec![vec![Vec::new(); k]; n_classes];
    for (i, (&label, &cluster)) in d.labels().iter().zip(&clustering.assignment).enumerate() {
        members[label][cluster].push(i);
    }

    // (class, cluster, quota) tasks in deterministic order
    let mut per_class = Vec::with_capacity(n_classes);
    let mut tasks = Vec::new();
    for c in 0..n_classes {
        let deficit = if c == majority || counts[c] == 0 {
            0
        } else {
            match cfg.target_policy {
                TargetPolicy::MatchMajority => counts[majority] - counts[c],
                TargetPolicy::ExplicitFactor(f) => ((f - 1.0) * counts[c] as f64).ceil() as usize,
            }
        };
        let weights: Vec<usize> = members[c].iter().map(Vec::len).collect();
        let quotas = apportion(deficit, &weights);
        for (j, &q) in quotas.iter().enumerate() {
            if q > 0 {
                tasks.push((c, j, q));
            }
        }
        per_class.push(ClassBalance {
            class: d.label_map().decode(c).unwrap_or_default().to_string(),
            before: counts[c],
            after: counts[c] + deficit,
            synthetic_per_cluster: quotas,
        });
    }

    let generated: Vec<Matrix> = tasks
        .par_iter()
        .map(|&(c, j, q)| {
            let src = d.features().select_rows(&members[c][j]);
            let child = seed::child_seed(cfg.seed, &format!("smote/{j}/{c}"));
            smote_oversample(&src, q, cfg.smote_k_neighbors, child)
        })
        .collect::<Result<_>>()?;

    let mut features = d.features().clone();
    let mut labels = d.labels().to_vec();
    let mut origins = d.origins().to_vec();
    let mut synthetic_cluster = Vec::new();
    let mut per_cluster_synthetic = vec![0; k];
    for (&(c, j, q), rows) in tasks.iter().zip(&generated) {
        for r in rows.row_iter() {
            features.push_row(r)?;
        }
        labels.extend(std::iter::repeat_n(c, q));
        origins.extend(std::iter::repeat_n(RowOrigin::Synthetic, q));
        synthetic_cluster.extend(std::iter::repeat_n(j, q));
        per_cluster_synthetic[j] += q;
    }

    let out = Dataset::with_origins(
        features,
        d.feature_names().to_vec(),
        labels,
        d.label_map().clone(),
        origins,
    )?;
    let report = BalanceReport {
        k,
        seed: cfg.seed,
        per_class,
        per_cluster_synthetic,
        synthetic_cluster,
        clustering: Some(clustering),
    };
    Ok((out, report))
}
