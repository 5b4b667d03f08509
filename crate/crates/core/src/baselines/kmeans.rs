//! Lloyd's K-means with k-means++ seeding and restarts.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;

use super::ClusterError;
use crate::linalg::sq_dist;
use crate::seed;

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub n_init: usize,
}

impl KMeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, seed, max_iter: DEFAULT_MAX_ITER, n_init: DEFAULT_RESTARTS }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    /// `k x p`.
    pub centroids: Array2<f64>,
    /// Within-cluster sum of squares of the returned solution.
    pub wcss: f64,
    pub converged: bool,
    pub iterations: usize,
    /// WCSS after every (assign, update) pair of the chosen restart.
    pub trace: Vec<f64>,
}

/// K-means with the default of 10 k-means++ restarts.
pub fn kmeans(x: ArrayView2<f64>, k: usize, seed: u64, max_iter: usize) -> Result<KMeansFit, ClusterError> {
    kmeans_with(x, &KMeansOptions { max_iter, ..KMeansOptions::new(k, seed) })
}

pub fn kmeans_with(x: ArrayView2<f64>, opts: &KMeansOptions) -> Result<KMeansFit, ClusterError> {
    let n = x.nrows();
    if n == 0 || x.ncols() == 0 {
        return Err(ClusterError::EmptyInput);
    }
    if opts.k == 0 || opts.k > n {
        return Err(ClusterError::InvalidK { k: opts.k, n });
    }
    let runs: Vec<KMeansFit> = (0..opts.n_init.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::rng(seed::derive(opts.seed, r as u64));
            let seeds = kmeanspp_seeds(x, opts.k, &mut rng);
            lloyd(x, x.select(ndarray::Axis(0), &seeds), opts.max_iter)
        })
        .collect();
    // lowest WCSS, ties to the earliest restart
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.wcss < runs[best].wcss {
            best = r;
        }
    }
    Ok(runs.into_iter().nth(best).expect("at least one restart"))
}

/// Row indices of k-means++ seeds (D^2 sampling).
pub(crate) fn kmeanspp_seeds<R: Rng>(x: ArrayView2<f64>, k: usize, rng: &mut R) -> Vec<usize> {
    let n = x.nrows();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total mass")
        } else {
            // all remaining points coincide with a seed
            (0..n).find(|&i| !taken[i]).expect("k <= n")
        };
        chosen.push(next);
        taken[next] = true;
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    chosen
}

/// Index of the nearest centroid, ties to the lowest index.
pub fn nearest_centroid(x: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Vec<usize> {
    x.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.rows().into_iter().enumerate() {
                let d = sq_dist(row, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Means of the labelled groups; a group with no members keeps `previous`.
pub(crate) fn update_centroids(x: ArrayView2<f64>, labels: &[usize], previous: ArrayView2<f64>) -> Array2<f64> {
    let k = previous.nrows();
    let mut sums = Array2::<f64>::zeros((k, x.ncols()));
    let mut counts = vec![0usize; k];
    for (row, &l) in x.rows().into_iter().zip(labels) {
        let mut s = sums.row_mut(l);
        s += &row;
        counts[l] += 1;
    }
    for j in 0..k {
        if counts[j] == 0 {
            sums.row_mut(j).assign(&previous.row(j));
        } else {
            sums.row_mut(j).mapv_inplace(|v| v / counts[j] as f64);
        }
    }
    sums
}

pub fn wcss(x: ArrayView2<f64>, labels: &[usize], centroids: ArrayView2<f64>) -> f64 {
    x.rows().into_iter().zip(labels).map(|(row, &l)| sq_dist(row, centroids.row(l))).sum()
}

fn lloyd(x: ArrayView2<f64>, mut centroids: Array2<f64>, max_iter: usize) -> KMeansFit {
    let mut labels = nearest_centroid(x, centroids.view());
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        centroids = update_centroids(x, &labels, centroids.view());
        trace.push(wcss(x, &labels, centroids.view()));
        let next = nearest_centroid(x, centroids.view());
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
    }
    let total = wcss(x, &labels, centroids.view());
    KMeansFit { labels, centroids, wcss: total, converged, iterations, trace }
}
