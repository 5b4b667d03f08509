//! Cohort data model, CSV ingestion and covariate residualization.
//!
//! A [`Cohort`] keeps one row per sample. Controls (CN, label `-1`) form the
//! reference group and patients (PT, label `+1`) the target group. Every
//! preprocessing model is estimated on the controls only and then applied to
//! all samples.

mod io;
mod preprocess;

pub use io::{load_cohort, read_cohort, save_cohort, write_cohort, Schema};
pub use preprocess::{apply_preprocess, fit_preprocess, fit_rescale, MinMaxScaling, PreprocessModel};

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while building, reading or preprocessing a cohort.
#[derive(Debug, Error)]
pub enum CohortError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed csv at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: label must be -1 or 1, found `{value}`")]
    InvalidLabel { line: u64, value: String },
    #[error("line {line}, column `{column}`: non-numeric value `{value}`")]
    NonNumeric { line: u64, column: String, value: String },
    #[error("line {line}, column `{column}`: missing value")]
    MissingValue { line: u64, column: String },
    #[error("line {line}, column `{column}`: non-finite value")]
    NonFinite { line: u64, column: String },
    #[error("line {line}: duplicate sample id `{id}`")]
    DuplicateId { line: u64, id: String },
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("column layout differs from the fitted model: {0}")]
    LayoutMismatch(String),
    #[error("need at least {required} control samples, found {found}")]
    TooFewControls { required: usize, found: usize },
    #[error("cohort needs both controls and patients")]
    MissingGroup,
    #[error("covariates are rank deficient on controls; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("no features remain after dropping constant columns")]
    NoFeatures,
}

/// Diagnostic group of a sample. Patients map to `+1`, controls to `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Control,
    Patient,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Control => -1.0,
            Label::Patient => 1.0,
        }
    }

    pub fn code(self) -> i8 {
        match self {
            Label::Control => -1,
            Label::Patient => 1,
        }
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            -1 => Some(Label::Control),
            1 => Some(Label::Patient),
            _ => None,
        }
    }

    pub fn is_patient(self) -> bool {
        self == Label::Patient
    }
}

/// Feature matrix with per-sample diagnostic labels and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub sample_ids: Vec<String>,
    /// Feature column names, as they appear in the file header.
    pub feature_names: Vec<String>,
    pub covariate_names: Vec<String>,
    /// `n_samples x p`.
    pub features: Array2<f64>,
    pub labels: Vec<Label>,
    /// `n_samples x c`.
    pub covariates: Array2<f64>,
}

impl Cohort {
    /// Builds a cohort and checks the shape, finiteness and id invariants.
    pub fn new(
        sample_ids: Vec<String>,
        feature_names: Vec<String>,
        covariate_names: Vec<String>,
        features: Array2<f64>,
        labels: Vec<Label>,
        covariates: Array2<f64>,
    ) -> Result<Self, CohortError> {
        let n = sample_ids.len();
        let checks = [
            ("label count", labels.len()),
            ("feature rows", features.nrows()),
            ("covariate rows", covariates.nrows()),
        ];
        for (what, found) in checks {
            if found != n {
                return Err(CohortError::DimensionMismatch { what, expected: n, found });
            }
        }
        if feature_names.len() != features.ncols() {
            return Err(CohortError::DimensionMismatch {
                what: "feature names",
                expected: features.ncols(),
                found: feature_names.len(),
            });
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(CohortError::DimensionMismatch {
                what: "covariate names",
                expected: covariates.ncols(),
                found: covariate_names.len(),
            });
        }
        let mut seen = HashSet::with_capacity(n);
        for (i, id) in sample_ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(CohortError::DuplicateId { line: i as u64 + 2, id: id.clone() });
            }
        }
        for ((i, j), v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(CohortError::NonFinite {
                    line: i as u64 + 2,
                    column: feature_names[j].clone(),
                });
            }
        }
        for ((i, j), v) in covariates.indexed_iter() {
            if !v.is_finite() {
                return Err(CohortError::NonFinite {
                    line: i as u64 + 2,
                    column: covariate_names[j].clone(),
                });
            }
        }
        Ok(Self { sample_ids, feature_names, covariate_names, features, labels, covariates })
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        self.indices_of(Label::Control)
    }

    pub fn patient_indices(&self) -> Vec<usize> {
        self.indices_of(Label::Patient)
    }

    fn indices_of(&self, label: Label) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_controls(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Control).count()
    }

    pub fn n_patients(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Patient).count()
    }

    /// Control feature rows, in cohort order.
    pub fn controls(&self) -> Array2<f64> {
        self.features.select(Axis(0), &self.control_indices())
    }

    /// Patient feature rows, in cohort order.
    pub fn patients(&self) -> Array2<f64> {
        self.features.select(Axis(0), &self.patient_indices())
    }

    pub fn patient_ids(&self) -> Vec<&str> {
        self.patient_indices().into_iter().map(|i| self.sample_ids[i].as_str()).collect()
    }

    pub fn require_both_groups(&self) -> Result<(), CohortError> {
        if self.n_controls() == 0 || self.n_patients() == 0 {
            return Err(CohortError::MissingGroup);
        }
        Ok(())
    }

    pub fn feature_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Rows `rows` of this cohort, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Cohort {
        Cohort {
            sample_ids: rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            covariate_names: self.covariate_names.clone(),
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            covariates: self.covariates.select(Axis(0), rows),
        }
    }

    /// Same samples and labels with a replaced feature block.
    pub fn with_features(&self, names: Vec<String>, features: Array2<f64>) -> Cohort {
        debug_assert_eq!(features.nrows(), self.n_samples());
        debug_assert_eq!(features.ncols(), names.len());
        Cohort {
            sample_ids: self.sample_ids.clone(),
            feature_names: names,
            covariate_names: self.covariate_names.clone(),
            features,
            labels: self.labels.clone(),
            covariates: self.covariates.clone(),
        }
    }

    /// Same samples and features with relabelled diagnostic groups.
    pub fn with_labels(&self, labels: Vec<Label>) -> Cohort {
        debug_assert_eq!(labels.len(), self.n_samples());
        Cohort { labels, ..self.clone() }
    }
}
