//! Semi-supervised clustering of patient cohorts.
//!
//! The toolkit explains the patient (PT) distribution as `k` distinct
//! departures from a healthy-control (CN) reference group. It contains:
//!
//! - [`hydra`]: convex-polytope max-margin clustering built on the
//!   sample-weighted linear SVM in [`wsvm`];
//! - [`magic`]: multi-scale HYDRA over [`opnmf`] representations with
//!   co-occurrence consensus;
//! - [`chimera`]: a translation-only generative model fit by EM;
//! - [`baselines`]: unsupervised K-means, agglomerative clustering and
//!   NMF assignment;
//! - [`validation`]: semi-simulated cohorts, ARI, stability-based choice of
//!   `k`, split-half reproducibility and permutation tests.
//!
//! Labels follow the convention `+1` = patient, `-1` = control. Subtype
//! labels are zero-based internally and one-based in every file written by
//! the command-line front end.

pub mod baselines;
pub mod chimera;
pub mod cli;
pub mod cohort;
pub mod error;
pub mod hydra;
pub mod magic;
pub mod opnmf;
pub mod pipeline;
pub mod validation;
pub mod wsvm;

mod linalg;
mod seed;

pub use error::{Error, Result};
