//! Convex-polytope max-margin clustering.
//!
//! Each of the `k` faces is a weighted linear SVM that separates every
//! control (weight `1/k`, negative side) from the patients currently
//! assigned to that face (weight 1, positive side). Patients are then
//! reassigned to the face with the largest decision value, and the two
//! steps alternate until the assignment stops changing.
//!
//! Sign convention: patients (`+1`) carry the membership weights and
//! controls (`-1`) carry `1/k`, so that membership is the argmax of the face
//! decision values over patients.

use log::{debug, warn};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{kmeanspp_seeds, nearest_centroid, update_centroids};
use crate::cohort::Cohort;
use crate::linalg::{argmax, sq_dist, vstack};
use crate::seed;
use crate::wsvm::{solve_weighted_svm_from, Hyperplane, SvmError, SvmOptions, WeightedProblem};

#[derive(Debug, Error)]
pub enum HydraError {
    #[error("need at least k = {k} patients, found {m}")]
    TooFewPatients { m: usize, k: usize },
    #[error("no control samples")]
    NoControls,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("face solve failed: {0}")]
    Svm(#[from] SvmError),
}

/// The `k` hyperplanes bounding the control region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub faces: Vec<Hyperplane>,
}

impl Polytope {
    pub fn k(&self) -> usize {
        self.faces.len()
    }

    pub fn dim(&self) -> usize {
        self.faces.first().map_or(0, Hyperplane::dim)
    }

    /// `n x k` matrix of face decision values.
    pub fn decision_values(&self, x: ArrayView2<f64>) -> Array2<f64> {
        Array2::from_shape_fn((x.nrows(), self.k()), |(i, j)| self.faces[j].eval(x.row(i)))
    }
}

/// Hard patient-to-subtype assignment; row `i` of the one-hot matrix has its
/// 1 at column `labels[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub k: usize,
    pub labels: Vec<usize>,
}

impl Membership {
    pub fn new(k: usize, labels: Vec<usize>) -> Result<Self, HydraError> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(HydraError::InvalidConfig(format!("subtype {bad} out of range for k = {k}")));
        }
        Ok(Self { k, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// The `m x k` one-hot matrix `S`.
    pub fn matrix(&self) -> Array2<f64> {
        let mut s = Array2::zeros((self.labels.len(), self.k));
        for (i, &l) in self.labels.iter().enumerate() {
            s[[i, l]] = 1.0;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmptyClusterPolicy {
    /// Move the patient with the weakest best-face margin into the empty face.
    #[default]
    Reseed,
    /// Drop the empty face and continue with `k - 1`.
    Shrink,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HydraConfig {
    pub k: usize,
    pub mu: f64,
    pub n_restarts: usize,
    pub max_alternations: usize,
    pub seed: u64,
    pub empty_cluster_policy: EmptyClusterPolicy,
    pub svm_tol: f64,
    pub svm_max_iter: usize,
}

impl Default for HydraConfig {
    fn default() -> Self {
        let svm = SvmOptions::default();
        Self {
            k: 2,
            mu: 1.0,
            n_restarts: 5,
            max_alternations: 50,
            seed: 0,
            empty_cluster_policy: EmptyClusterPolicy::Reseed,
            svm_tol: svm.tol,
            svm_max_iter: svm.max_iter,
        }
    }
}

impl HydraConfig {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    fn svm_options(&self) -> SvmOptions {
        SvmOptions { tol: self.svm_tol, max_iter: self.svm_max_iter }
    }

    fn validate(&self) -> Result<(), HydraError> {
        if self.k == 0 {
            return Err(HydraError::InvalidConfig("k must be at least 1".into()));
        }
        if self.n_restarts == 0 {
            return Err(HydraError::InvalidConfig("n_restarts must be at least 1".into()));
        }
        if self.max_alternations == 0 {
            return Err(HydraError::InvalidConfig("max_alternations must be at least 1".into()));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(HydraError::InvalidConfig(format!("mu must be positive, got {}", self.mu)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HydraFit {
    pub polytope: Polytope,
    /// Always `assign_membership(polytope, patients)`.
    pub membership: Membership,
    pub objective: f64,
    pub converged: bool,
    /// Every face solve reached its duality-gap target.
    pub svm_converged: bool,
    pub alternations: usize,
    /// Index of the winning restart.
    pub restart: usize,
    pub restart_objectives: Vec<f64>,
    /// Objective after each face-solve step of the winning restart.
    pub trace: Vec<f64>,
}

/// Argmax of face decision values, ties to the lowest face index.
pub fn assign_membership(poly: &Polytope, patients: ArrayView2<f64>) -> Result<Membership, HydraError> {
    if poly.k() == 0 {
        return Err(HydraError::InvalidConfig("polytope has no faces".into()));
    }
    if patients.ncols() != poly.dim() {
        return Err(HydraError::DimensionMismatch {
            what: "patient features",
            expected: poly.dim(),
            found: patients.ncols(),
        });
    }
    let labels = patients
        .rows()
        .into_iter()
        .map(|x| argmax(poly.faces.iter().map(|f| f.eval(x))))
        .collect();
    Ok(Membership { k: poly.k(), labels })
}

/// `sum_j |w_j|^2 / 2 + mu * [sum_CN sum_j (1/k) max(0, 1 + f_j)
///  + sum_PT sum_j S_ij max(0, 1 - f_j)]`.
pub fn hydra_objective(
    poly: &Polytope,
    controls: ArrayView2<f64>,
    patients: ArrayView2<f64>,
    s: &Membership,
    mu: f64,
) -> Result<f64, HydraError> {
    let k = poly.k();
    let p = poly.dim();
    for (what, found) in [("control features", controls.ncols()), ("patient features", patients.ncols())] {
        if found != p {
            return Err(HydraError::DimensionMismatch { what, expected: p, found });
        }
    }
    if s.len() != patients.nrows() || s.k != k {
        return Err(HydraError::DimensionMismatch { what: "membership rows", expected: patients.nrows(), found: s.len() });
    }
    let inv_k = 1.0 / k as f64;
    let mut total = 0.0;
    for (j, face) in poly.faces.iter().enumerate() {
        total += 0.5 * face.w.iter().map(|v| v * v).sum::<f64>();
        let mut loss = 0.0;
        for x in controls.rows() {
            loss += inv_k * (1.0 + face.eval(x)).max(0.0);
        }
        for (x, &l) in patients.rows().into_iter().zip(&s.labels) {
            if l == j {
                loss += (1.0 - face.eval(x)).max(0.0);
            }
        }
        total += mu * loss;
    }
    Ok(total)
}

fn check_inputs(controls: ArrayView2<f64>, patients: ArrayView2<f64>, cfg: &HydraConfig) -> Result<(), HydraError> {
    cfg.validate()?;
    if controls.nrows() == 0 {
        return Err(HydraError::NoControls);
    }
    if patients.nrows() < cfg.k {
        return Err(HydraError::TooFewPatients { m: patients.nrows(), k: cfg.k });
    }
    if controls.ncols() != patients.ncols() {
        return Err(HydraError::DimensionMismatch {
            what: "patient features",
            expected: controls.ncols(),
            found: patients.ncols(),
        });
    }
    Ok(())
}

/// Fits HYDRA with `cfg.n_restarts` seeded restarts and keeps the one with
/// the lowest objective (ties to the earliest restart).
pub fn fit_hydra(
    controls: ArrayView2<f64>,
    patients: ArrayView2<f64>,
    cfg: &HydraConfig,
) -> Result<HydraFit, HydraError> {
    check_inputs(controls, patients, cfg)?;
    let data = Stacked::new(controls, patients);
    let runs: Vec<Result<HydraFit, HydraError>> = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|r| {
            let init = initial_membership(patients, cfg.k, seed::derive(cfg.seed, r as u64), cfg.empty_cluster_policy);
            alternate(&data, init, cfg).map(|mut fit| {
                fit.restart = r;
                fit
            })
        })
        .collect();
    let runs: Vec<HydraFit> = runs.into_iter().collect::<Result<_, _>>()?;
    let objectives: Vec<f64> = runs.iter().map(|f| f.objective).collect();
    let mut best = 0;
    for (r, &obj) in objectives.iter().enumerate() {
        if obj < objectives[best] {
            best = r;
        }
    }
    let mut fit = runs.into_iter().nth(best).expect("n_restarts >= 1");
    fit.restart_objectives = objectives;
    Ok(fit)
}

/// Convenience wrapper splitting a preprocessed cohort into its groups.
pub fn fit_hydra_cohort(cohort: &Cohort, cfg: &HydraConfig) -> Result<HydraFit, HydraError> {
    fit_hydra(cohort.controls().view(), cohort.patients().view(), cfg)
}

/// One alternation run started from a given membership (no restarts).
pub fn fit_hydra_from(
    controls: ArrayView2<f64>,
    patients: ArrayView2<f64>,
    init: &Membership,
    cfg: &HydraConfig,
) -> Result<HydraFit, HydraError> {
    let cfg = HydraConfig { k: init.k, ..*cfg };
    check_inputs(controls, patients, &cfg)?;
    if init.len() != patients.nrows() {
        return Err(HydraError::DimensionMismatch {
            what: "initial membership",
            expected: patients.nrows(),
            found: init.len(),
        });
    }
    let data = Stacked::new(controls, patients);
    let mut init = init.clone();
    fix_empty_init(patients, &mut init, cfg.empty_cluster_policy);
    let mut fit = alternate(&data, init, &cfg)?;
    fit.restart_objectives = vec![fit.objective];
    Ok(fit)
}

/// Trains one face per subtype for a fixed membership.
pub fn fit_faces(
    controls: ArrayView2<f64>,
    patients: ArrayView2<f64>,
    membership: &Membership,
    cfg: &HydraConfig,
) -> Result<Polytope, HydraError> {
    let cfg = HydraConfig { k: membership.k, ..*cfg };
    check_inputs(controls, patients, &cfg)?;
    if membership.len() != patients.nrows() {
        return Err(HydraError::DimensionMismatch {
            what: "membership",
            expected: patients.nrows(),
            found: membership.len(),
        });
    }
    let data = Stacked::new(controls, patients);
    Ok(solve_faces(&data, membership, &[], &cfg)?.0)
}

/// Controls stacked above patients, with their SVM labels.
struct Stacked<'a> {
    controls: ArrayView2<'a, f64>,
    patients: ArrayView2<'a, f64>,
    x: Array2<f64>,
    y: Vec<f64>,
}

impl<'a> Stacked<'a> {
    fn new(controls: ArrayView2<'a, f64>, patients: ArrayView2<'a, f64>) -> Self {
        let x = vstack(controls, patients);
        let mut y = vec![-1.0; controls.nrows()];
        y.extend(std::iter::repeat_n(1.0, patients.nrows()));
        Self { controls, patients, x, y }
    }

    fn q(&self) -> usize {
        self.controls.nrows()
    }
}

/// k-means++ seeds on the patients followed by one Lloyd pass.
fn initial_membership(patients: ArrayView2<f64>, k: usize, seed: u64, policy: EmptyClusterPolicy) -> Membership {
    let mut rng = seed::rng(seed);
    let seeds = kmeanspp_seeds(patients, k, &mut rng);
    let centroids = patients.select(ndarray::Axis(0), &seeds);
    let labels = nearest_centroid(patients, centroids.view());
    let centroids = update_centroids(patients, &labels, centroids.view());
    let labels = nearest_centroid(patients, centroids.view());
    let mut s = Membership { k, labels };
    fix_empty_init(patients, &mut s, policy);
    s
}

/// Before any face exists, empty groups take the patient farthest from its
/// group mean (reseed) or are removed (shrink).
fn fix_empty_init(patients: ArrayView2<f64>, s: &mut Membership, policy: EmptyClusterPolicy) {
    if s.counts().iter().all(|&c| c > 0) {
        return;
    }
    let centroids = update_centroids(patients, &s.labels, Array2::zeros((s.k, patients.ncols())).view());
    let badness: Vec<f64> =
        patients.rows().into_iter().zip(&s.labels).map(|(x, &l)| -sq_dist(x, centroids.row(l))).collect();
    repair_empty(s, &badness, policy);
}

/// Fills or removes empty subtypes. `badness[i]` ranks patients for moving:
/// the lowest value moves first. Returns the removed subtype indices.
fn repair_empty(s: &mut Membership, badness: &[f64], policy: EmptyClusterPolicy) -> Vec<usize> {
    let mut removed = Vec::new();
    match policy {
        EmptyClusterPolicy::Reseed => {
            for j in 0..s.k {
                let counts = s.counts();
                if counts[j] > 0 {
                    continue;
                }
                let mut pick = None;
                for (i, &l) in s.labels.iter().enumerate() {
                    if counts[l] >= 2 && pick.is_none_or(|p: usize| badness[i] < badness[p]) {
                        pick = Some(i);
                    }
                }
                if let Some(i) = pick {
                    debug!("reseeding empty subtype {j} with patient {i}");
                    s.labels[i] = j;
                }
            }
        }
        EmptyClusterPolicy::Shrink => {
            let counts = s.counts();
            let keep: Vec<usize> = (0..s.k).filter(|&j| counts[j] > 0).collect();
            if keep.len() < s.k {
                removed = (0..s.k).filter(|&j| counts[j] == 0).collect();
                warn!("dropping empty subtypes {removed:?}; k reduced to {}", keep.len());
                let mut remap = vec![usize::MAX; s.k];
                for (new, &old) in keep.iter().enumerate() {
                    remap[old] = new;
                }
                for l in &mut s.labels {
                    *l = remap[*l];
                }
                s.k = keep.len();
            }
        }
    }
    removed
}

fn solve_faces(
    data: &Stacked,
    s: &Membership,
    warm: &[Option<Vec<f64>>],
    cfg: &HydraConfig,
) -> Result<(Polytope, Vec<Vec<f64>>, bool), HydraError> {
    let q = data.q();
    let inv_k = 1.0 / s.k as f64;
    let opts = cfg.svm_options();
    let mut faces = Vec::with_capacity(s.k);
    let mut alphas = Vec::with_capacity(s.k);
    let mut all_converged = true;
    for j in 0..s.k {
        let mut weights = vec![inv_k; q];
        weights.extend(s.labels.iter().map(|&l| if l == j { 1.0 } else { 0.0 }));
        let problem = WeightedProblem::new(data.x.view(), &data.y, &weights, cfg.mu)?;
        let sol = solve_weighted_svm_from(&problem, &opts, warm.get(j).and_then(|w| w.as_deref()));
        all_converged &= sol.converged;
        faces.push(sol.hyperplane);
        alphas.push(sol.alpha);
    }
    Ok((Polytope { faces }, alphas, all_converged))
}

fn alternate(data: &Stacked, mut s: Membership, cfg: &HydraConfig) -> Result<HydraFit, HydraError> {
    let mut warm: Vec<Option<Vec<f64>>> = vec![None; s.k];
    let mut trace = Vec::new();
    let mut best: Option<(Polytope, f64)> = None;
    let mut svm_converged = true;
    let mut converged = false;
    let mut alternations = 0;
    let mut last: Option<Polytope> = None;

    while alternations < cfg.max_alternations {
        alternations += 1;
        let (poly, alphas, ok) = solve_faces(data, &s, &warm, cfg)?;
        svm_converged &= ok;
        let obj = hydra_objective(&poly, data.controls, data.patients, &s, cfg.mu)?;
        trace.push(obj);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((poly.clone(), obj));
        }

        let values = poly.decision_values(data.patients);
        let mut next = Membership {
            k: s.k,
            labels: values.rows().into_iter().map(|r| argmax(r.iter().copied())).collect(),
        };
        let badness: Vec<f64> =
            values.rows().into_iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let removed = repair_empty(&mut next, &badness, cfg.empty_cluster_policy);
        warm = alphas.into_iter().map(Some).collect();
        for &j in removed.iter().rev() {
            warm.remove(j);
        }

        if next == s {
            converged = true;
            last = Some(poly);
            break;
        }
        s = next;
    }

    let polytope = match last {
        Some(poly) => poly,
        None => {
            warn!("no stable membership after {alternations} alternations; returning best iterate");
            best.expect("at least one alternation").0
        }
    };
    let membership = assign_membership(&polytope, data.patients)?;
    let objective = hydra_objective(&polytope, data.controls, data.patients, &membership, cfg.mu)?;
    Ok(HydraFit {
        polytope,
        membership,
        objective,
        converged,
        svm_converged,
        alternations,
        restart: 0,
        restart_objectives: Vec::new(),
        trace,
    })
}
