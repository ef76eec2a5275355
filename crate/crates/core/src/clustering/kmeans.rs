//! Lloyd's k-means with k-means++ seeding and restarts.

use ndarray::ArrayView2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ClusterError;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub n_restarts: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            n_restarts: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

/// Result of clustering `M` points into `k` groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub inertia: f64,
    /// Index of the winning restart.
    pub restart: usize,
    /// Inertia after every assignment step, one trace per restart.
    pub inertia_traces: Vec<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn row(points: &ArrayView2<'_, f64>, i: usize) -> Vec<f64> {
    points.row(i).to_vec()
}

fn plus_plus_seeds(
    points: &ArrayView2<'_, f64>,
    k: usize,
    rng: &mut crate::rng::Rng,
) -> Vec<Vec<f64>> {
    let m = points.nrows();
    let mut centroids = vec![row(points, rng.random_range(0..m))];
    let mut nearest: Vec<f64> = (0..m)
        .map(|i| sq_dist(points.row(i).as_slice().unwrap(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = m - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        let c = row(points, pick);
        for (i, n) in nearest.iter_mut().enumerate() {
            *n = n.min(sq_dist(points.row(i).as_slice().unwrap(), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Nearest centroid for every point (lowest index on ties) and the inertia.
fn assign(points: &ArrayView2<'_, f64>, centroids: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let p = points.row(i);
        let p = p.as_slice().unwrap();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        *label = best;
        inertia += best_d;
    }
    inertia
}

/// Means of the assigned points. An empty cluster takes the point farthest
/// from its own (updated) centroid, each such point used at most once.
fn update(points: &ArrayView2<'_, f64>, labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points.ncols();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, &x) in sums[l].iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !empty.is_empty() {
        let mut far: Vec<(f64, usize)> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (sq_dist(points.row(i).as_slice().unwrap(), &sums[l]), i))
            .collect();
        // Farthest first; lower index wins ties.
        far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (slot, &c) in empty.iter().enumerate() {
            sums[c] = row(points, far[slot.min(far.len() - 1)].1);
        }
    }
    sums
}

fn lloyd(
    points: &ArrayView2<'_, f64>,
    k: usize,
    config: &KMeansConfig,
    rng: &mut crate::rng::Rng,
) -> (Vec<usize>, Vec<Vec<f64>>, f64, Vec<f64>) {
    let mut centroids = plus_plus_seeds(points, k, rng);
    let mut labels = vec![0usize; points.nrows()];
    let mut trace = Vec::new();
    for _ in 0..config.max_iter {
        trace.push(assign(points, &centroids, &mut labels));
        let next = update(points, &labels, k);
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < config.tol {
            break;
        }
    }
    let inertia = assign(points, &centroids, &mut labels);
    trace.push(inertia);
    debug_assert!(
        trace
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-12),
        "inertia increased: {trace:?}"
    );
    (labels, centroids, inertia, trace)
}

/// Clusters the rows of `points` into `k` groups.
///
/// Each restart seeds with k-means++ from its own stream derived from `seed`,
/// then runs Lloyd iterations until the largest centroid shift drops below
/// `tol` or `max_iter` is reached. The restart with the lowest inertia wins
/// (earliest restart on ties).
pub fn kmeans(
    points: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<ClusterAssignment, ClusterError> {
    let m = points.nrows();
    if k == 0 || m < k {
        return Err(ClusterError::TooFewPoints { points: m, k });
    }
    if config.n_restarts == 0 {
        return Err(ClusterError::Config("n_restarts must be at least 1".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite("k-means input".into()));
    }
    let points = points.as_standard_layout();
    let points = points.view();
    let mut best: Option<ClusterAssignment> = None;
    let mut traces = Vec::with_capacity(config.n_restarts);
    for restart in 0..config.n_restarts {
        let mut rng = stream_rng(seed, Stream::KMeans, restart as u64);
        let (labels, centroids, inertia, trace) = lloyd(&points, k, config, &mut rng);
        traces.push(trace);
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(ClusterAssignment {
                labels,
                centroids,
                inertia,
                restart,
                inertia_traces: Vec::new(),
            });
        }
    }
    let mut best = best.expect("at least one restart");
    best.inertia_traces = traces;
    Ok(best)
}

/// Runs [`kmeans`] on the points sorted by `keys` and returns labels in the
/// caller's order, so the result does not depend on input order.
pub fn kmeans_canonical<K: Ord>(
    points: ArrayView2<'_, f64>,
    keys: &[K],
    k: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<ClusterAssignment, ClusterError> {
    assert_eq!(keys.len(), points.nrows(), "one key per point");
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let sorted = points.select(ndarray::Axis(0), &order);
    let mut result = kmeans(sorted.view(), k, seed, config)?;
    let mut labels = vec![0; order.len()];
    for (pos, &orig) in order.iter().enumerate() {
        labels[orig] = result.labels[pos];
    }
    result.labels = labels;
    Ok(result)
}
