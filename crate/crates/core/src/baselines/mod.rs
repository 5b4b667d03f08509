//! Unsupervised reference methods: K-means, agglomerative clustering and
//! NMF-based assignment. These cluster the patients alone and ignore the
//! control group.

mod hierarchical;
mod kmeans;

use ndarray::ArrayView2;
use thiserror::Error;

pub use hierarchical::{cut_dendrogram, hierarchical, Dendrogram, Linkage, Merge};
pub use kmeans::{kmeans, kmeans_with, nearest_centroid, wcss, KMeansFit, KMeansOptions};
pub(crate) use kmeans::{kmeanspp_seeds, update_centroids};

use crate::opnmf::{cluster_by_loading, fit_opnmf, NmfError, OpnmfOptions, ScaleBasis};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid number of clusters {k} for {n} samples")]
    InvalidK { k: usize, n: usize },
    #[error(transparent)]
    Nmf(#[from] NmfError),
}

/// NMF clustering: fit an opNMF basis with `k` components on the
/// non-negative `samples x features` matrix and label each sample by its
/// largest loading.
pub fn nmf_cluster(
    x: ArrayView2<f64>,
    k: usize,
    opts: &OpnmfOptions,
) -> Result<(ScaleBasis, Vec<usize>), ClusterError> {
    let xt = x.t();
    let basis = fit_opnmf(xt, k, opts)?;
    let labels = cluster_by_loading(&basis, xt)?;
    Ok((basis, labels))
}
