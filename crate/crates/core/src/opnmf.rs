//! Orthogonal projective non-negative matrix factorization.
//!
//! Finds a non-negative `p x r` component matrix `C` with unit-norm columns
//! minimizing `|X - C C^T X|_F^2`, where `X` is `p x n` (features by
//! samples). Loadings are `L = C^T X`.
//!
//! The update is the projective multiplicative rule
//! `C <- C * (X X^T C) / (C C^T X X^T C)` followed by column
//! normalization. A step that would raise the error is damped by raising the
//! ratio to a power `eta` in `(0, 1]`, halving `eta` until the error does not
//! increase. If no damped step helps, the same search is repeated along the
//! symmetric rule `C * 2 XX^T C / (C C^T XX^T C + XX^T C C^T C)`, first with
//! and then without column normalization; if that fails too the fit is at a
//! fixed point. Column norms are therefore 1 except after an unnormalized step.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

const MAX_HALVINGS: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum NmfError {
    #[error("input has a negative entry at ({row}, {col})")]
    Negative { row: usize, col: usize },
    #[error("input has a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("rank {r} must be between 1 and min(p, n) = {max}")]
    InvalidRank { r: usize, max: usize },
    #[error("basis has {expected} feature rows, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpnmfOptions {
    pub max_iter: usize,
    /// Stop when the relative error decrease of one step falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for OpnmfOptions {
    fn default() -> Self {
        Self { max_iter: 2_000, tol: 1e-6, seed: 0 }
    }
}

/// Non-negative component matrix at one granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleBasis {
    pub r: usize,
    /// `p x r`, stored as rows.
    #[serde(with = "crate::linalg::matrix_rows")]
    pub components: Array2<f64>,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub converged: bool,
    /// Squared reconstruction error after every accepted step, starting with
    /// the initial guess.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl ScaleBasis {
    pub fn n_features(&self) -> usize {
        self.components.nrows()
    }

    /// `|C^T C - I|_F`.
    pub fn orthogonality_error(&self) -> f64 {
        let g = self.components.t().dot(&self.components);
        let mut s = 0.0;
        for ((i, j), v) in g.indexed_iter() {
            let d = if i == j { v - 1.0 } else { *v };
            s += d * d;
        }
        s.sqrt()
    }

    /// `|X - C C^T X|_F^2 / |X|_F^2`.
    pub fn relative_error(&self, x: ArrayView2<f64>) -> f64 {
        let recon = self.components.dot(&self.components.t().dot(&x));
        let num: f64 = (&x - &recon).iter().map(|v| v * v).sum();
        let den: f64 = x.iter().map(|v| v * v).sum();
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

fn check_nonnegative(x: ArrayView2<f64>) -> Result<(), NmfError> {
    for ((row, col), &v) in x.indexed_iter() {
        if !v.is_finite() {
            return Err(NmfError::NonFinite { row, col });
        }
        if v < 0.0 {
            return Err(NmfError::Negative { row, col });
        }
    }
    Ok(())
}

fn normalize_columns(c: &mut Array2<f64>) {
    for mut col in c.axis_iter_mut(Axis(1)) {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
        }
    }
}

/// `tr(X^T X) - 2 tr(C^T XX^T C) + tr(C^T C C^T XX^T C)`.
fn reconstruction_error(gram_trace: f64, xxt: &Array2<f64>, c: &Array2<f64>) -> f64 {
    let a = xxt.dot(c);
    let g = c.t().dot(&a);
    let h = c.t().dot(c);
    let tr_g: f64 = g.diag().sum();
    let tr_hg: f64 = h.iter().zip(g.t().iter()).map(|(x, y)| x * y).sum();
    (gram_trace - 2.0 * tr_g + tr_hg).max(0.0)
}

/// `scale * num / den` elementwise, 1 where `den` vanishes.
fn ratio(num: &Array2<f64>, den: &Array2<f64>, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn(num.dim(), |ix| if den[ix] > 0.0 { scale * num[ix] / den[ix] } else { 1.0 })
}

/// First `eta = 1, 1/2, ...` for which the normalized step does not raise the error.
fn damped_step(
    c: &Array2<f64>,
    ratio: &Array2<f64>,
    err: f64,
    gram_trace: f64,
    xxt: &Array2<f64>,
    normalize: bool,
) -> Option<(Array2<f64>, f64)> {
    let mut eta = 1.0;
    for _ in 0..MAX_HALVINGS {
        let mut cand = Array2::from_shape_fn(c.dim(), |ix| c[ix] * ratio[ix].powf(eta));
        if normalize {
            normalize_columns(&mut cand);
        }
        let e = reconstruction_error(gram_trace, xxt, &cand);
        if e <= err {
            return Some((cand, e));
        }
        eta *= 0.5;
    }
    None
}

/// Fits `r` components to the non-negative `p x n` matrix `x`.
pub fn fit_opnmf(x: ArrayView2<f64>, r: usize, opts: &OpnmfOptions) -> Result<ScaleBasis, NmfError> {
    check_nonnegative(x)?;
    let (p, n) = x.dim();
    let max = p.min(n);
    if r == 0 || r > max {
        return Err(NmfError::InvalidRank { r, max });
    }
    let xxt = x.dot(&x.t());
    let gram_trace = xxt.diag().sum();

    let mut rng = seed::rng(opts.seed);
    let mut c = Array2::from_shape_fn((p, r), |_| rng.random::<f64>() + f64::EPSILON);
    normalize_columns(&mut c);

    let mut err = reconstruction_error(gram_trace, &xxt, &c);
    let mut trace = vec![err];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let a = xxt.dot(&c);
        let denom = c.dot(&c.t().dot(&a));
        let projective = ratio(&a, &denom, 1.0);
        let mut accepted = damped_step(&c, &projective, err, gram_trace, &xxt, true);
        if accepted.is_none() {
            let symmetric = ratio(&a, &(&denom + &a.dot(&c.t().dot(&c))), 2.0);
            accepted = damped_step(&c, &symmetric, err, gram_trace, &xxt, true)
                .or_else(|| damped_step(&c, &symmetric, err, gram_trace, &xxt, false));
        }
        let Some((cand, e)) = accepted else {
            converged = true;
            break;
        };
        let decrease = err - e;
        c = cand;
        trace.push(e);
        let scale = err.max(f64::MIN_POSITIVE);
        err = e;
        if decrease <= opts.tol * scale || err <= f64::EPSILON * gram_trace {
            converged = true;
            break;
        }
    }

    Ok(ScaleBasis { r, components: c, iterations, converged, trace })
}

/// Loadings `C^T X` (`r x n`).
pub fn project(basis: &ScaleBasis, x: ArrayView2<f64>) -> Result<Array2<f64>, NmfError> {
    if x.nrows() != basis.n_features() {
        return Err(NmfError::DimensionMismatch { expected: basis.n_features(), found: x.nrows() });
    }
    Ok(basis.components.t().dot(&x))
}

/// Label of each column of `x`: the component with the largest loading,
/// ties to the lowest index.
pub fn cluster_by_loading(basis: &ScaleBasis, x: ArrayView2<f64>) -> Result<Vec<usize>, NmfError> {
    let loadings = project(basis, x)?;
    Ok(loadings.columns().into_iter().map(|col| crate::linalg::argmax(col.iter().copied())).collect())
}
