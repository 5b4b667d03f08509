use thiserror::Error;

use crate::baselines::ClusterError;
use crate::chimera::ChimeraError;
use crate::cohort::CohortError;
use crate::hydra::HydraError;
use crate::magic::MagicError;
use crate::opnmf::NmfError;
use crate::validation::ValidationError;
use crate::wsvm::SvmError;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Hydra(#[from] HydraError),
    #[error(transparent)]
    Nmf(#[from] NmfError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Chimera(#[from] ChimeraError),
    #[error(transparent)]
    Magic(#[from] MagicError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("invalid model document: {0}")]
    Model(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
