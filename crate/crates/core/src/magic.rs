//! Multi-scale semi-supervised clustering.
//!
//! The cohort is summarized by opNMF loadings at several granularities.
//! HYDRA is started at each scale and its membership is carried to the next
//! scale as the initial assignment, cycling through the scale list until the
//! partition stops changing. The endpoints of all cycles are merged through
//! a co-occurrence matrix and spectral clustering.

use log::{debug, info, warn};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{kmeans_with, ClusterError, KMeansOptions};
use crate::cohort::Cohort;
use crate::hydra::{fit_faces, fit_hydra, fit_hydra_from, HydraConfig, HydraError, Membership, Polytope};
use crate::linalg::column_mean_sd;
use crate::opnmf::{fit_opnmf, NmfError, OpnmfOptions, ScaleBasis};
use crate::seed;
use crate::validation::adjusted_rand_index;

/// Partitions this close to each other count as the same.
pub const STABLE_ARI: f64 = 0.999;
pub const MAX_SWEEPS: usize = 3;
const SPECTRAL_RESTARTS: usize = 10;

#[derive(Debug, Error)]
pub enum MagicError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("opNMF failed at scale {scale}: {source}")]
    Nmf { scale: usize, source: NmfError },
    #[error("HYDRA failed at scale {scale}: {source}")]
    Hydra { scale: usize, source: HydraError },
    #[error("no partitions to combine")]
    NoPartitions,
    #[error("partition {index} covers {found} patients, expected {expected}")]
    PartitionLength { index: usize, expected: usize, found: usize },
    #[error("cannot split {m} patients into {k} groups")]
    InvalidK { k: usize, m: usize },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

/// Powers of two from 2 up to `min(64, p / 2)`.
pub fn default_scales(p: usize) -> Vec<usize> {
    let top = (p / 2).min(64);
    let scales: Vec<usize> = std::iter::successors(Some(2usize), |s| Some(s * 2)).take_while(|&s| s <= top).collect();
    if scales.is_empty() {
        vec![p.clamp(1, 2)]
    } else {
        scales
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagicConfig {
    pub scales: Vec<usize>,
    pub k: usize,
    pub hydra: HydraConfig,
    pub opnmf: OpnmfOptions,
    pub consensus_seed: u64,
}

impl MagicConfig {
    pub fn new(scales: Vec<usize>, k: usize) -> Self {
        Self {
            scales,
            k,
            hydra: HydraConfig::with_k(k),
            opnmf: OpnmfOptions::default(),
            consensus_seed: 0,
        }
    }

    fn validate(&self, p: usize) -> Result<(), MagicError> {
        if self.scales.is_empty() {
            return Err(MagicError::InvalidConfig("scale list is empty".into()));
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MagicError::InvalidConfig(format!("scales {:?} must be strictly increasing", self.scales)));
        }
        if self.scales[0] == 0 || *self.scales.last().unwrap() > p {
            return Err(MagicError::InvalidConfig(format!("scales {:?} must lie in 1..={p}", self.scales)));
        }
        if self.k == 0 {
            return Err(MagicError::InvalidConfig("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fraction of partitions placing each pair of patients together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoOccurrence {
    #[serde(with = "crate::linalg::matrix_rows")]
    pub matrix: Array2<f64>,
}

impl CoOccurrence {
    pub fn from_partitions(partitions: &[Vec<usize>]) -> Result<Self, MagicError> {
        let first = partitions.first().ok_or(MagicError::NoPartitions)?;
        let m = first.len();
        for (index, part) in partitions.iter().enumerate() {
            if part.len() != m {
                return Err(MagicError::PartitionLength { index, expected: m, found: part.len() });
            }
        }
        let mut counts = Array2::<u32>::zeros((m, m));
        for part in partitions {
            for a in 0..m {
                for b in a..m {
                    if part[a] == part[b] {
                        counts[[a, b]] += 1;
                    }
                }
            }
        }
        let total = partitions.len() as f64;
        let matrix = Array2::from_shape_fn((m, m), |(a, b)| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            counts[[lo, hi]] as f64 / total
        });
        Ok(Self { matrix })
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Normalized spectral clustering of a non-negative symmetric affinity.
///
/// Takes the eigenvectors of the `k` smallest eigenvalues of
/// `I - D^-1/2 A D^-1/2`, normalizes each row and runs seeded k-means.
/// Labels are renumbered by first appearance.
pub fn spectral_clustering(affinity: ArrayView2<f64>, k: usize, seed: u64) -> Result<Vec<usize>, MagicError> {
    let m = affinity.nrows();
    if k == 0 || k > m {
        return Err(MagicError::InvalidK { k, m });
    }
    let inv_sqrt: Vec<f64> = affinity
        .rows()
        .into_iter()
        .map(|r| {
            let d = r.sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let laplacian = DMatrix::from_fn(m, m, |a, b| {
        let id = if a == b { 1.0 } else { 0.0 };
        id - inv_sqrt[a] * affinity[[a, b]] * inv_sqrt[b]
    });
    let eig = SymmetricEigen::new(laplacian);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let mut embed = Array2::<f64>::zeros((m, k));
    for (col, &e) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(e);
        // fix the sign so that the embedding does not depend on the solver
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() + 1e-12 { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for a in 0..m {
            embed[[a, col]] = sign * v[a];
        }
    }
    for mut row in embed.rows_mut() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|x| x / norm);
        }
    }
    let opts = KMeansOptions { n_init: SPECTRAL_RESTARTS, ..KMeansOptions::new(k, seed) };
    Ok(first_appearance(&kmeans_with(embed.view(), &opts)?.labels))
}

/// Renumbers labels in order of first appearance.
pub fn first_appearance(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    labels
        .iter()
        .map(|&l| match map.iter().find(|(old, _)| *old == l) {
            Some(&(_, new)) => new,
            None => {
                map.push((l, map.len()));
                map.len() - 1
            }
        })
        .collect()
}

/// Co-occurrence of the given partitions clustered spectrally into `k`.
pub fn consensus_from_partitions(partitions: &[Vec<usize>], k: usize, seed: u64) -> Result<Vec<usize>, MagicError> {
    let co = CoOccurrence::from_partitions(partitions)?;
    spectral_clustering(co.matrix.view(), k, seed)
}

/// opNMF basis of one scale and the control statistics used to standardize
/// its loadings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleModel {
    pub basis: ScaleBasis,
    pub loading_mean: Vec<f64>,
    pub loading_sd: Vec<f64>,
}

impl ScaleModel {
    pub fn r(&self) -> usize {
        self.basis.r
    }

    /// Standardized loadings of each row of `x` (`n x r`).
    pub fn loadings(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.basis.components);
        for (j, mut col) in z.columns_mut().into_iter().enumerate() {
            let (mean, sd) = (self.loading_mean[j], self.loading_sd[j]);
            col.mapv_inplace(|v| (v - mean) / sd);
        }
        z
    }
}

/// One outer-cycle branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub start_scale: usize,
    /// Scale of every fit in order, starting with `start_scale`.
    pub path: Vec<usize>,
    pub endpoint: Vec<usize>,
    /// The last two partitions agreed.
    pub stable: bool,
    /// The last HYDRA fit converged.
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct MagicFit {
    pub labels: Vec<usize>,
    pub cooccurrence: CoOccurrence,
    pub scales: Vec<ScaleModel>,
    /// HYDRA partition obtained from scratch at each scale.
    pub scale_partitions: Vec<Vec<usize>>,
    pub branches: Vec<Branch>,
    /// Mean pairwise ARI of `scale_partitions`.
    pub scale_consistency: f64,
    /// Index of the scale whose partition agrees best with `labels`.
    pub reference_scale: usize,
    /// Faces trained at the reference scale on the consensus labels.
    pub polytope: Polytope,
}

impl MagicFit {
    pub fn converged(&self) -> bool {
        self.branches.iter().all(|b| b.converged)
    }
}

fn fit_scale(x: ArrayView2<f64>, control_rows: &[usize], r: usize, opts: &OpnmfOptions) -> Result<ScaleModel, NmfError> {
    let basis = fit_opnmf(x.t(), r, opts)?;
    let raw = x.dot(&basis.components);
    let (loading_mean, sd) = column_mean_sd(raw.select(ndarray::Axis(0), control_rows).view());
    let loading_sd = sd.into_iter().map(|s| if s > 0.0 { s } else { 1.0 }).collect();
    Ok(ScaleModel { basis, loading_mean, loading_sd })
}

fn ari(a: &[usize], b: &[usize]) -> f64 {
    adjusted_rand_index(a, b).unwrap_or(1.0)
}

/// Mean pairwise ARI, 1 when fewer than two partitions are given.
pub fn mean_pairwise_ari(parts: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..parts.len() {
        for b in a + 1..parts.len() {
            total += ari(&parts[a], &parts[b]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        1.0
    } else {
        total / pairs as f64
    }
}

/// Runs the double cycle on a preprocessed, non-negative cohort.
pub fn fit_magic(cohort: &Cohort, cfg: &MagicConfig) -> Result<MagicFit, MagicError> {
    cfg.validate(cohort.n_features())?;
    let m = cohort.n_patients();
    if m < cfg.k {
        return Err(MagicError::InvalidK { k: cfg.k, m });
    }
    let control_rows = cohort.control_indices();
    let patient_rows = cohort.patient_indices();
    let hydra_cfg = HydraConfig { k: cfg.k, ..cfg.hydra };

    let scales: Vec<ScaleModel> = cfg
        .scales
        .par_iter()
        .enumerate()
        .map(|(i, &r)| {
            let opts = OpnmfOptions { seed: seed::derive(cfg.opnmf.seed, i as u64), ..cfg.opnmf };
            fit_scale(cohort.features.view(), &control_rows, r, &opts).map_err(|source| MagicError::Nmf { scale: r, source })
        })
        .collect::<Result<_, _>>()?;
    let views: Vec<(Array2<f64>, Array2<f64>)> = scales
        .iter()
        .map(|s| {
            let z = s.loadings(cohort.features.view());
            (z.select(ndarray::Axis(0), &control_rows), z.select(ndarray::Axis(0), &patient_rows))
        })
        .collect();

    let n = cfg.scales.len();
    let branches: Vec<(Vec<usize>, Branch)> = (0..n)
        .into_par_iter()
        .map(|start| -> Result<(Vec<usize>, Branch), MagicError> {
            let scale_err = |i: usize| move |source| MagicError::Hydra { scale: cfg.scales[i], source };
            let (xc, xp) = &views[start];
            let first = fit_hydra(xc.view(), xp.view(), &hydra_cfg).map_err(scale_err(start))?;
            let initial = first.membership.labels.clone();
            let mut current: Membership = first.membership;
            let mut converged = first.converged;
            let mut path = vec![cfg.scales[start]];
            let mut stable = false;
            for step in 1..=MAX_SWEEPS * n {
                let i = (start + step) % n;
                let (xc, xp) = &views[i];
                let fit = fit_hydra_from(xc.view(), xp.view(), &current, &hydra_cfg).map_err(scale_err(i))?;
                path.push(cfg.scales[i]);
                converged = fit.converged;
                let agreement = ari(&current.labels, &fit.membership.labels);
                current = fit.membership;
                if agreement >= STABLE_ARI {
                    stable = true;
                    break;
                }
            }
            debug!("branch from scale {} visited {:?}, stable = {stable}", cfg.scales[start], path);
            let branch = Branch { start_scale: cfg.scales[start], path, endpoint: current.labels, stable, converged };
            Ok((initial, branch))
        })
        .collect::<Result<_, _>>()?;
    let (scale_partitions, branches): (Vec<Vec<usize>>, Vec<Branch>) = branches.into_iter().unzip();

    let mut pool: Vec<Vec<usize>> = branches.iter().filter(|b| b.converged).map(|b| b.endpoint.clone()).collect();
    for b in branches.iter().filter(|b| !b.converged) {
        warn!("branch from scale {} did not converge; excluded from consensus", b.start_scale);
    }
    if pool.is_empty() {
        warn!("no branch converged; using every endpoint for consensus");
        pool = branches.iter().map(|b| b.endpoint.clone()).collect();
    }
    let cooccurrence = CoOccurrence::from_partitions(&pool)?;
    let labels = spectral_clustering(cooccurrence.matrix.view(), cfg.k, cfg.consensus_seed)?;
    let scale_consistency = mean_pairwise_ari(&scale_partitions);

    let agreement: Vec<f64> = scale_partitions.iter().map(|p| ari(p, &labels)).collect();
    let reference_scale = crate::linalg::argmax(agreement.iter().copied());
    let (xc, xp) = &views[reference_scale];
    let consensus = Membership::new(cfg.k, labels.clone()).map_err(|source| MagicError::Hydra {
        scale: cfg.scales[reference_scale],
        source,
    })?;
    let polytope = fit_faces(xc.view(), xp.view(), &consensus, &hydra_cfg)
        .map_err(|source| MagicError::Hydra { scale: cfg.scales[reference_scale], source })?;
    info!(
        "consensus over {} partitions; scale consistency {scale_consistency:.3}; reference scale {}",
        pool.len(),
        cfg.scales[reference_scale]
    );
    Ok(MagicFit {
        labels,
        cooccurrence,
        scales,
        scale_partitions,
        branches,
        scale_consistency,
        reference_scale,
        polytope,
    })
}
