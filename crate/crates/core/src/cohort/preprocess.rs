use log::warn;
use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Cohort, CohortError};
use crate::linalg::column_mean_sd;

const MIN_CONTROLS: usize = 3;
const CONSTANT_SD: f64 = 1e-12;
const COLLINEAR_TOL: f64 = 1e-10;

/// Control-referenced covariate correction and standardization.
///
/// For every kept feature `f` the transform is
/// `(x_f - sum_c coef[f][c] * cov_c - mean[f]) / sd[f]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessModel {
    /// Feature columns expected at apply time.
    pub input_features: Vec<String>,
    pub covariate_names: Vec<String>,
    /// Indices into `input_features` that survive the constant-feature check.
    pub kept: Vec<usize>,
    pub dropped_features: Vec<String>,
    /// Covariates that are identically zero on controls; their slope is 0.
    pub dropped_covariates: Vec<String>,
    /// One row of covariate slopes per kept feature.
    pub coefficients: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Optional min-max rescaling applied after standardization.
    #[serde(default)]
    pub rescale: Option<MinMaxScaling>,
}

/// Per-feature min-max scaling to `[0, 1]`, estimated on the full cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaling {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl PreprocessModel {
    /// Model that leaves features untouched.
    pub fn identity(input_features: Vec<String>, covariate_names: Vec<String>) -> Self {
        let p = input_features.len();
        let c = covariate_names.len();
        Self {
            input_features,
            covariate_names,
            kept: (0..p).collect(),
            dropped_features: Vec::new(),
            dropped_covariates: Vec::new(),
            coefficients: vec![vec![0.0; c]; p],
            mean: vec![0.0; p],
            sd: vec![1.0; p],
            rescale: None,
        }
    }

    pub fn kept_names(&self) -> Vec<String> {
        self.kept.iter().map(|&j| self.input_features[j].clone()).collect()
    }

    /// Residualization, standardization and (when fitted) rescaling.
    pub fn transform(&self, cohort: &Cohort) -> Result<Cohort, CohortError> {
        let out = apply_preprocess(self, cohort)?;
        match &self.rescale {
            Some(scaling) => scaling.apply(&out),
            None => Ok(out),
        }
    }
}

/// Fits the covariate regression and standardization on the controls.
pub fn fit_preprocess(cohort: &Cohort) -> Result<PreprocessModel, CohortError> {
    let controls = cohort.control_indices();
    let q = controls.len();
    if q < MIN_CONTROLS {
        return Err(CohortError::TooFewControls { required: MIN_CONTROLS, found: q });
    }
    let p = cohort.n_features();
    let c = cohort.covariate_names.len();

    let mut active = Vec::new();
    let mut dropped_covariates = Vec::new();
    for j in 0..c {
        if controls.iter().all(|&i| cohort.covariates[[i, j]] == 0.0) {
            warn!("covariate `{}` is zero on every control; ignored", cohort.covariate_names[j]);
            dropped_covariates.push(cohort.covariate_names[j].clone());
        } else {
            active.push(j);
        }
    }

    // design = [1, active covariates] on controls
    let cols = active.len() + 1;
    let design = DMatrix::from_fn(q, cols, |r, k| {
        if k == 0 {
            1.0
        } else {
            cohort.covariates[[controls[r], active[k - 1]]]
        }
    });
    let collinear = collinear_columns(&design);
    if !collinear.is_empty() {
        let names = collinear.iter().map(|&k| cohort.covariate_names[active[k - 1]].clone()).collect();
        return Err(CohortError::RankDeficient(names));
    }
    if q < cols {
        return Err(CohortError::TooFewControls { required: cols, found: q });
    }

    let rhs = DMatrix::from_fn(q, p, |r, f| cohort.features[[controls[r], f]]);
    let beta = least_squares(&design, &rhs);

    let mut slopes = vec![vec![0.0; c]; p];
    for (f, row) in slopes.iter_mut().enumerate() {
        for (k, &j) in active.iter().enumerate() {
            row[j] = beta[(k + 1, f)];
        }
    }

    // Covariate-corrected controls; the intercept is absorbed into the mean.
    let mut corrected = Array2::<f64>::zeros((q, p));
    for (r, &i) in controls.iter().enumerate() {
        for f in 0..p {
            corrected[[r, f]] = cohort.features[[i, f]] - covariate_prediction(&slopes[f], cohort, i);
        }
    }
    let (mean, sd) = column_mean_sd(corrected.view());
    let (_, raw_sd) = column_mean_sd(cohort.features.select(ndarray::Axis(0), &controls).view());

    let mut kept = Vec::new();
    let mut dropped_features = Vec::new();
    for f in 0..p {
        if sd[f] <= CONSTANT_SD * raw_sd[f].max(1.0) {
            warn!("feature `{}` is constant on controls after correction; dropped", cohort.feature_names[f]);
            dropped_features.push(cohort.feature_names[f].clone());
        } else {
            kept.push(f);
        }
    }
    if kept.is_empty() {
        return Err(CohortError::NoFeatures);
    }

    Ok(PreprocessModel {
        input_features: cohort.feature_names.clone(),
        covariate_names: cohort.covariate_names.clone(),
        coefficients: kept.iter().map(|&f| slopes[f].clone()).collect(),
        mean: kept.iter().map(|&f| mean[f]).collect(),
        sd: kept.iter().map(|&f| sd[f]).collect(),
        kept,
        dropped_features,
        dropped_covariates,
        rescale: None,
    })
}

fn covariate_prediction(slopes: &[f64], cohort: &Cohort, row: usize) -> f64 {
    slopes.iter().zip(cohort.covariates.row(row)).map(|(b, v)| b * v).sum()
}

/// Design columns (by index) that lie in the span of the preceding ones.
fn collinear_columns(design: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for k in 0..design.ncols() {
        let col = design.column(k).into_owned();
        let norm = col.norm();
        let mut res = col.clone();
        for b in &basis {
            let proj = b.dot(&res);
            res -= b * proj;
        }
        let rn = res.norm();
        if rn <= COLLINEAR_TOL * norm.max(1.0) {
            out.push(k);
        } else {
            basis.push(res / rn);
        }
    }
    out
}

fn least_squares(design: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = design.clone().qr();
    let qt_b = qr.q().transpose() * rhs;
    qr.r().solve_upper_triangular(&qt_b).expect("full column rank checked before solving")
}

/// Applies residualization and standardization; labels and ids are kept.
pub fn apply_preprocess(model: &PreprocessModel, cohort: &Cohort) -> Result<Cohort, CohortError> {
    if cohort.n_features() != model.input_features.len() {
        return Err(CohortError::DimensionMismatch {
            what: "feature columns",
            expected: model.input_features.len(),
            found: cohort.n_features(),
        });
    }
    if cohort.covariate_names.len() != model.covariate_names.len() {
        return Err(CohortError::DimensionMismatch {
            what: "covariate columns",
            expected: model.covariate_names.len(),
            found: cohort.covariate_names.len(),
        });
    }
    if cohort.feature_names != model.input_features {
        return Err(CohortError::LayoutMismatch("feature names or order differ".into()));
    }
    if cohort.covariate_names != model.covariate_names {
        return Err(CohortError::LayoutMismatch("covariate names or order differ".into()));
    }
    let n = cohort.n_samples();
    let mut out = Array2::<f64>::zeros((n, model.kept.len()));
    for i in 0..n {
        for (k, &f) in model.kept.iter().enumerate() {
            let corrected = cohort.features[[i, f]] - covariate_prediction(&model.coefficients[k], cohort, i);
            out[[i, k]] = (corrected - model.mean[k]) / model.sd[k];
        }
    }
    Ok(cohort.with_features(model.kept_names(), out))
}

/// Min-max parameters from every sample of an already standardized cohort.
pub fn fit_rescale(cohort: &Cohort) -> MinMaxScaling {
    let mut min = Vec::with_capacity(cohort.n_features());
    let mut max = Vec::with_capacity(cohort.n_features());
    for col in cohort.features.columns() {
        min.push(col.iter().copied().fold(f64::INFINITY, f64::min));
        max.push(col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    MinMaxScaling { min, max }
}

impl MinMaxScaling {
    /// Maps each feature to `(x - min) / (max - min)`. Samples outside the
    /// fitted range land outside `[0, 1]`; constant features map to 0.
    pub fn apply(&self, cohort: &Cohort) -> Result<Cohort, CohortError> {
        if cohort.n_features() != self.min.len() {
            return Err(CohortError::DimensionMismatch {
                what: "feature columns",
                expected: self.min.len(),
                found: cohort.n_features(),
            });
        }
        let mut out = cohort.features.clone();
        for (f, mut col) in out.columns_mut().into_iter().enumerate() {
            let range = self.max[f] - self.min[f];
            col.mapv_inplace(|v| if range > 0.0 { (v - self.min[f]) / range } else { 0.0 });
        }
        Ok(cohort.with_features(cohort.feature_names.clone(), out))
    }
}
