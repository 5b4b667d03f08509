//! Greedy agglomerative clustering with Lance-Williams distance updates.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::ClusterError;
use crate::linalg::sq_dist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    Average,
    #[default]
    Ward,
}

/// One agglomeration step. Leaves are nodes `0..n`; the merge at step `t`
/// creates node `n + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub id: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

/// Agglomerates the rows of `x` under Euclidean distance. Ward distances
/// follow the usual convention `sqrt(2 |A||B| / (|A|+|B|)) * |c_A - c_B|`.
/// Equal distances are resolved in favour of the lowest slot pair.
pub fn hierarchical(x: ArrayView2<f64>, linkage: Linkage) -> Result<Dendrogram, ClusterError> {
    let n = x.nrows();
    if n < 2 {
        return Err(ClusterError::InvalidK { k: 2, n });
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(x.row(i), x.row(j)).sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut active = vec![true; n];
    let mut node = (0..n).collect::<Vec<_>>();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best = (usize::MAX, usize::MAX);
        let mut best_d = f64::INFINITY;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if active[j] && dist[i * n + j] < best_d {
                    best_d = dist[i * n + j];
                    best = (i, j);
                }
            }
        }
        let (a, b) = best;
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for l in 0..n {
            if !active[l] || l == a || l == b {
                continue;
            }
            let dal = dist[a * n + l];
            let dbl = dist[b * n + l];
            let nl = size[l] as f64;
            let updated = match linkage {
                Linkage::Single => dal.min(dbl),
                Linkage::Complete => dal.max(dbl),
                Linkage::Average => (na * dal + nb * dbl) / (na + nb),
                Linkage::Ward => {
                    let t = na + nb + nl;
                    (((na + nl) * dal * dal + (nb + nl) * dbl * dbl - nl * best_d * best_d) / t)
                        .max(0.0)
                        .sqrt()
                }
            };
            dist[a * n + l] = updated;
            dist[l * n + a] = updated;
        }
        let (left, right) = (node[a].min(node[b]), node[a].max(node[b]));
        size[a] += size[b];
        active[b] = false;
        node[a] = n + step;
        merges.push(Merge { left, right, distance: best_d, id: n + step, size: size[a] });
    }
    Ok(Dendrogram { n_leaves: n, merges })
}

/// Undoes the last `k - 1` merges and labels the remaining components in
/// order of their first sample.
pub fn cut_dendrogram(d: &Dendrogram, k: usize) -> Result<Vec<usize>, ClusterError> {
    let n = d.n_leaves;
    if k == 0 || k > n {
        return Err(ClusterError::InvalidK { k, n });
    }
    let total = n + d.merges.len();
    let mut parent: Vec<usize> = (0..total).collect();
    for m in d.merges.iter().take(n - k) {
        parent[m.left] = m.id;
        parent[m.right] = m.id;
    }
    let root = |mut v: usize, parent: &[usize]| {
        while parent[v] != v {
            v = parent[v];
        }
        v
    };
    let mut ids = std::collections::HashMap::new();
    Ok((0..n)
        .map(|i| {
            let r = root(i, &parent);
            let next = ids.len();
            *ids.entry(r).or_insert(next)
        })
        .collect())
}
