//! Sample-weighted soft-margin linear SVM.
//!
//! Minimizes `1/2 |w|^2 + mu * sum_i c_i * max(0, 1 - y_i (w.x_i + b))`
//! by coordinate ascent on the dual. The bias is carried by an extra
//! constant feature of value [`BIAS_SCALE`], so the solved problem also
//! contains the term `1/2 (b / BIAS_SCALE)^2`. Each dual variable lives in
//! the box `[0, mu * c_i]`; a sample with zero weight never moves.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::dot;

/// Value of the augmented constant feature that stands in for a free bias.
pub const BIAS_SCALE: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("labels must be +1 or -1 (sample {0})")]
    InvalidLabel(usize),
    #[error("weights must be finite and non-negative (sample {0})")]
    InvalidWeight(usize),
    #[error("class {0:+} has no sample with positive weight")]
    EmptyClass(i8),
    #[error("penalty mu must be positive and finite, got {0}")]
    InvalidPenalty(f64),
}

/// Linear decision function `w.x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Hyperplane {
    pub fn zeros(p: usize) -> Self {
        Self { w: vec![0.0; p], b: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub(crate) fn eval(&self, x: ArrayView1<f64>) -> f64 {
        self.w.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() + self.b
    }
}

/// Returns `w.x + b`.
pub fn decision_value(h: &Hyperplane, x: ArrayView1<f64>) -> Result<f64, SvmError> {
    if x.len() != h.dim() {
        return Err(SvmError::DimensionMismatch { what: "feature vector", expected: h.dim(), found: x.len() });
    }
    Ok(h.eval(x))
}

/// One weighted binary problem. Rows of `features` are samples.
#[derive(Debug, Clone, Copy)]
pub struct WeightedProblem<'a> {
    pub features: ArrayView2<'a, f64>,
    /// `+1.0` or `-1.0` per sample.
    pub labels: &'a [f64],
    pub weights: &'a [f64],
    pub mu: f64,
}

impl<'a> WeightedProblem<'a> {
    pub fn new(
        features: ArrayView2<'a, f64>,
        labels: &'a [f64],
        weights: &'a [f64],
        mu: f64,
    ) -> Result<Self, SvmError> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(SvmError::DimensionMismatch { what: "labels", expected: n, found: labels.len() });
        }
        if weights.len() != n {
            return Err(SvmError::DimensionMismatch { what: "weights", expected: n, found: weights.len() });
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(SvmError::InvalidPenalty(mu));
        }
        let mut has_pos = false;
        let mut has_neg = false;
        for i in 0..n {
            if labels[i] != 1.0 && labels[i] != -1.0 {
                return Err(SvmError::InvalidLabel(i));
            }
            if !(weights[i] >= 0.0 && weights[i].is_finite()) {
                return Err(SvmError::InvalidWeight(i));
            }
            if weights[i] > 0.0 {
                if labels[i] > 0.0 {
                    has_pos = true;
                } else {
                    has_neg = true;
                }
            }
        }
        if !has_pos {
            return Err(SvmError::EmptyClass(1));
        }
        if !has_neg {
            return Err(SvmError::EmptyClass(-1));
        }
        Ok(Self { features, labels, weights, mu })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    /// Objective as stated, without the bias term introduced by the
    /// augmented feature.
    pub fn objective(&self, h: &Hyperplane) -> f64 {
        let reg: f64 = 0.5 * h.w.iter().map(|v| v * v).sum::<f64>();
        reg + self.mu * self.weighted_hinge(h)
    }

    /// Objective actually minimized by the solver.
    pub fn augmented_objective(&self, h: &Hyperplane) -> f64 {
        let bias = h.b / BIAS_SCALE;
        self.objective(h) + 0.5 * bias * bias
    }

    fn weighted_hinge(&self, h: &Hyperplane) -> f64 {
        (0..self.n_samples())
            .filter(|&i| self.weights[i] > 0.0)
            .map(|i| self.weights[i] * (1.0 - self.labels[i] * h.eval(self.features.row(i))).max(0.0))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmOptions {
    /// Relative duality-gap target.
    pub tol: f64,
    /// Maximum number of full sweeps over the samples.
    pub max_iter: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone)]
pub struct SvmSolution {
    pub hyperplane: Hyperplane,
    /// Dual variables, each in `[0, mu * weight_i]`.
    pub alpha: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    /// Primal value of the solved (augmented) problem.
    pub objective: f64,
    pub duality_gap: f64,
    /// Negated dual objective after each sweep; non-increasing.
    pub trace: Vec<f64>,
}

/// Solves a weighted problem from a cold start.
pub fn solve_weighted_svm(problem: &WeightedProblem, opts: &SvmOptions) -> SvmSolution {
    solve_weighted_svm_from(problem, opts, None)
}

/// Solves a weighted problem, optionally warm-started from dual variables of
/// a related problem. The warm start is clipped into the new box.
pub fn solve_weighted_svm_from(
    problem: &WeightedProblem,
    opts: &SvmOptions,
    warm: Option<&[f64]>,
) -> SvmSolution {
    let x = problem.features;
    let y = problem.labels;
    let n = x.nrows();
    let p = x.ncols();
    let upper: Vec<f64> = problem.weights.iter().map(|c| c * problem.mu).collect();
    let active: Vec<usize> = (0..n).filter(|&i| upper[i] > 0.0).collect();
    let diag: Vec<f64> = (0..n).map(|i| dot(x.row(i), x.row(i)) + BIAS_SCALE * BIAS_SCALE).collect();

    let mut alpha = vec![0.0; n];
    if let Some(w0) = warm.filter(|w0| w0.len() == n) {
        for &i in &active {
            alpha[i] = w0[i].clamp(0.0, upper[i]);
        }
    }
    let mut w = Array1::<f64>::zeros(p);
    let mut wb = 0.0;
    for &i in &active {
        if alpha[i] > 0.0 {
            w.scaled_add(alpha[i] * y[i], &x.row(i));
            wb += alpha[i] * y[i] * BIAS_SCALE;
        }
    }

    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    let mut primal = f64::INFINITY;
    let mut gap = f64::INFINITY;
    while sweeps < opts.max_iter {
        sweeps += 1;
        for &i in &active {
            let xi = x.row(i);
            let grad = y[i] * (dot(w.view(), xi) + wb * BIAS_SCALE) - 1.0;
            let old = alpha[i];
            let new = (old - grad / diag[i]).clamp(0.0, upper[i]);
            let delta = new - old;
            if delta != 0.0 {
                alpha[i] = new;
                w.scaled_add(delta * y[i], &xi);
                wb += delta * y[i] * BIAS_SCALE;
            }
        }
        let half_norm = 0.5 * (dot(w.view(), w.view()) + wb * wb);
        let dual = active.iter().map(|&i| alpha[i]).sum::<f64>() - half_norm;
        trace.push(-dual);

        let mut hinge = 0.0;
        for &i in &active {
            let margin = y[i] * (dot(w.view(), x.row(i)) + wb * BIAS_SCALE);
            hinge += upper[i] * (1.0 - margin).max(0.0);
        }
        primal = half_norm + hinge;
        gap = primal - dual;
        if gap <= opts.tol * primal.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    SvmSolution {
        hyperplane: Hyperplane { w: w.to_vec(), b: wb * BIAS_SCALE },
        alpha,
        converged,
        sweeps,
        objective: primal,
        duality_gap: gap,
        trace,
    }
}
