//! Translation-only generative subtyping ("chimera-lite").
//!
//! Patients are modelled as controls moved by one of `k` translations
//! `T_j(x) = x + d_j`. Every pair (control `c`, translation `j`) is the
//! centre of a spherical Gaussian with shared variance `sigma2`, and the
//! `q * k` components have equal weight. EM maximizes the likelihood of the
//! patient points; the responsibility of translation `j` for patient `i` is
//! the component posterior summed over controls.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{kmeans_with, KMeansOptions};
use crate::cohort::Cohort;
use crate::linalg::{argmax, dot, sq_dist};
use crate::seed;

/// Smallest variance accepted after flooring.
pub const COLLAPSE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ChimeraError {
    #[error("need at least k = {k} patients, found {m}")]
    TooFewPatients { m: usize, k: usize },
    #[error("no control samples")]
    NoControls,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("variance collapsed to {sigma2:e} at iteration {iteration}")]
    VarianceCollapse { sigma2: f64, iteration: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChimeraOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Relative log-likelihood change that ends EM.
    pub tol: f64,
    pub n_restarts: usize,
    pub sigma2_floor: f64,
}

impl Default for ChimeraOptions {
    fn default() -> Self {
        Self { k: 2, seed: 0, max_iter: 500, tol: 1e-8, n_restarts: 5, sigma2_floor: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChimeraModel {
    /// One translation per subtype.
    pub displacements: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `m x k` responsibilities of the training patients at the final
    /// parameters.
    #[serde(skip)]
    pub xi: Array2<f64>,
    /// Log-likelihood before every M-step of the winning restart.
    #[serde(skip)]
    pub trace: Vec<f64>,
    #[serde(skip)]
    pub restart: usize,
}

impl ChimeraModel {
    pub fn k(&self) -> usize {
        self.displacements.len()
    }

    fn displacement_matrix(&self) -> Array2<f64> {
        let p = self.displacements.first().map_or(0, Vec::len);
        Array2::from_shape_fn((self.k(), p), |(j, f)| self.displacements[j][f])
    }
}

/// Sufficient statistics of one E-step.
struct EStep {
    log_likelihood: f64,
    /// `m x k`: sum over controls of the posterior.
    xi: Array2<f64>,
    /// `q x k`: sum over patients of the posterior.
    per_control: Array2<f64>,
    /// sum of posterior-weighted `|y_i - x_c|^2`.
    weighted_sq: f64,
}

struct Data<'a> {
    controls: ArrayView2<'a, f64>,
    patients: ArrayView2<'a, f64>,
    /// `m x q` squared distances between patients and controls.
    pair_sq: Array2<f64>,
}

impl<'a> Data<'a> {
    fn new(controls: ArrayView2<'a, f64>, patients: ArrayView2<'a, f64>) -> Self {
        let pair_sq = Array2::from_shape_fn((patients.nrows(), controls.nrows()), |(i, c)| {
            sq_dist(patients.row(i), controls.row(c))
        });
        Self { controls, patients, pair_sq }
    }
}

fn e_step(data: &Data, d: &Array2<f64>, sigma2: f64) -> EStep {
    let (m, p) = data.patients.dim();
    let q = data.controls.nrows();
    let k = d.nrows();
    let y_dot = data.patients.dot(&d.t()); // m x k
    let x_dot = data.controls.dot(&d.t()); // q x k
    let d_sq: Vec<f64> = d.rows().into_iter().map(|r| dot(r, r)).collect();
    let log_const = -((q * k) as f64).ln() - 0.5 * p as f64 * (2.0 * std::f64::consts::PI * sigma2).ln();

    let mut xi = Array2::<f64>::zeros((m, k));
    let mut per_control = Array2::<f64>::zeros((q, k));
    let mut weighted_sq = 0.0;
    let mut log_likelihood = 0.0;
    let mut buf = vec![0.0; q * k];
    for i in 0..m {
        let mut max = f64::NEG_INFINITY;
        for c in 0..q {
            for j in 0..k {
                let dist = (data.pair_sq[[i, c]] - 2.0 * (y_dot[[i, j]] - x_dot[[c, j]]) + d_sq[j]).max(0.0);
                let e = -dist / (2.0 * sigma2);
                buf[c * k + j] = e;
                max = max.max(e);
            }
        }
        let sum: f64 = buf.iter().map(|e| (e - max).exp()).sum();
        let lse = max + sum.ln();
        log_likelihood += lse + log_const;
        for c in 0..q {
            for j in 0..k {
                let r = (buf[c * k + j] - lse).exp();
                xi[[i, j]] += r;
                per_control[[c, j]] += r;
                weighted_sq += r * data.pair_sq[[i, c]];
            }
        }
    }
    EStep { log_likelihood, xi, per_control, weighted_sq }
}

/// Closed-form M-step. Returns the new displacements and the unfloored
/// variance.
fn m_step(data: &Data, stats: &EStep, previous: &Array2<f64>) -> (Array2<f64>, f64) {
    let (m, p) = data.patients.dim();
    let k = previous.nrows();
    let mut d = previous.clone();
    // S_j = sum_i xi_ij y_i - sum_c R_cj x_c
    let s = stats.xi.t().dot(&data.patients) - stats.per_control.t().dot(&data.controls);
    let mut cross = 0.0;
    for j in 0..k {
        let n_j: f64 = stats.xi.column(j).sum();
        if n_j > 1e-300 {
            let row = s.row(j).mapv(|v| v / n_j);
            d.row_mut(j).assign(&row);
        }
        let dj = d.row(j);
        cross += -2.0 * dot(dj, s.row(j)) + dot(dj, dj) * n_j;
    }
    let sigma2 = (stats.weighted_sq + cross).max(0.0) / (m * p) as f64;
    (d, sigma2)
}

/// Variance under uniform responsibilities.
fn initial_sigma2(data: &Data, d: &Array2<f64>) -> f64 {
    let (m, p) = data.patients.dim();
    let q = data.controls.nrows();
    let k = d.nrows();
    let y_sum = data.patients.sum_axis(Axis(0));
    let x_sum = data.controls.sum_axis(Axis(0));
    let spread = &y_sum * q as f64 - &x_sum * m as f64;
    let mut total = k as f64 * data.pair_sq.sum();
    for dj in d.rows() {
        total += -2.0 * dot(dj, spread.view()) + (m * q) as f64 * dot(dj, dj);
    }
    total / (q * k) as f64 / (m * p) as f64
}

fn check(controls: ArrayView2<f64>, patients: ArrayView2<f64>, k: usize) -> Result<(), ChimeraError> {
    if k == 0 {
        return Err(ChimeraError::InvalidK);
    }
    if controls.nrows() == 0 {
        return Err(ChimeraError::NoControls);
    }
    if patients.nrows() < k {
        return Err(ChimeraError::TooFewPatients { m: patients.nrows(), k });
    }
    if controls.ncols() != patients.ncols() {
        return Err(ChimeraError::DimensionMismatch {
            what: "patient features",
            expected: controls.ncols(),
            found: patients.ncols(),
        });
    }
    Ok(())
}

fn run_em(data: &Data, init: Array2<f64>, opts: &ChimeraOptions) -> Result<ChimeraModel, ChimeraError> {
    let mut d = init;
    let mut sigma2 = initial_sigma2(data, &d).max(opts.sigma2_floor);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let stats = e_step(data, &d, sigma2);
        let ll = stats.log_likelihood;
        let (next_d, raw_sigma2) = m_step(data, &stats, &d);
        let next_sigma2 = raw_sigma2.max(opts.sigma2_floor);
        if next_sigma2 < COLLAPSE_THRESHOLD {
            return Err(ChimeraError::VarianceCollapse { sigma2: next_sigma2, iteration: iterations });
        }
        d = next_d;
        sigma2 = next_sigma2;
        if let Some(&prev) = trace.last() {
            let change: f64 = ll - prev;
            trace.push(ll);
            if change.abs() <= opts.tol * f64::max(1.0, f64::abs(prev)) {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
    }
    let final_stats = e_step(data, &d, sigma2);
    Ok(ChimeraModel {
        displacements: d.rows().into_iter().map(|r| r.to_vec()).collect(),
        sigma2,
        log_likelihood: final_stats.log_likelihood,
        converged,
        iterations,
        xi: final_stats.xi,
        trace,
        restart: 0,
    })
}

/// Fits the mixture with `opts.n_restarts` seeded restarts and keeps the
/// highest final log-likelihood (ties to the earliest restart).
pub fn fit_chimera(
    controls: ArrayView2<f64>,
    patients: ArrayView2<f64>,
    opts: &ChimeraOptions,
) -> Result<ChimeraModel, ChimeraError> {
    check(controls, patients, opts.k)?;
    let data = Data::new(controls, patients);
    let mean: Array1<f64> = controls.mean_axis(Axis(0)).expect("controls non-empty");
    let shifted = &patients - &mean;
    let runs: Vec<Result<ChimeraModel, ChimeraError>> = (0..opts.n_restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let km = KMeansOptions { n_init: 1, ..KMeansOptions::new(opts.k, seed::derive(opts.seed, r as u64)) };
            let init = kmeans_with(shifted.view(), &km).expect("k <= m checked").centroids;
            run_em(&data, init, opts).map(|mut model| {
                model.restart = r;
                model
            })
        })
        .collect();
    let runs: Vec<ChimeraModel> = runs.into_iter().collect::<Result<_, _>>()?;
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.log_likelihood > runs[best].log_likelihood {
            best = r;
        }
    }
    Ok(runs.into_iter().nth(best).expect("at least one restart"))
}

pub fn fit_chimera_cohort(cohort: &Cohort, opts: &ChimeraOptions) -> Result<ChimeraModel, ChimeraError> {
    fit_chimera(cohort.controls().view(), cohort.patients().view(), opts)
}

/// `m x k` responsibilities of (possibly unseen) patients under the model,
/// with `controls` as the reference point set.
pub fn responsibilities(
    model: &ChimeraModel,
    patients: ArrayView2<f64>,
    controls: ArrayView2<f64>,
) -> Result<Array2<f64>, ChimeraError> {
    let p = model.displacements.first().map_or(0, Vec::len);
    if controls.nrows() == 0 {
        return Err(ChimeraError::NoControls);
    }
    for (what, found) in [("control features", controls.ncols()), ("patient features", patients.ncols())] {
        if found != p {
            return Err(ChimeraError::DimensionMismatch { what, expected: p, found });
        }
    }
    let data = Data::new(controls, patients);
    Ok(e_step(&data, &model.displacement_matrix(), model.sigma2).xi)
}

/// Subtype with the largest responsibility, ties to the lowest index.
pub fn assign_chimera(
    model: &ChimeraModel,
    patients: ArrayView2<f64>,
    controls: ArrayView2<f64>,
) -> Result<Vec<usize>, ChimeraError> {
    let xi = responsibilities(model, patients, controls)?;
    Ok(labels_from_xi(&xi))
}

pub fn labels_from_xi(xi: &Array2<f64>) -> Vec<usize> {
    xi.rows().into_iter().map(|r| argmax(r.iter().copied())).collect()
}
