//! End-to-end fitting: preprocessing, one clustering method, and a
//! self-contained model document that can label new cohorts.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::baselines::{cut_dendrogram, hierarchical, kmeans_with, nearest_centroid, KMeansOptions, Linkage};
use crate::chimera::{assign_chimera, fit_chimera, ChimeraModel, ChimeraOptions};
use crate::cohort::{fit_preprocess, fit_rescale, Cohort, PreprocessModel};
use crate::hydra::{assign_membership, fit_hydra, EmptyClusterPolicy, HydraConfig, Polytope};
use crate::magic::{default_scales, fit_magic, Branch, CoOccurrence, MagicConfig, ScaleModel};
use crate::opnmf::{cluster_by_loading, fit_opnmf, OpnmfOptions, ScaleBasis};
use crate::wsvm::{Hyperplane, SvmOptions};
use crate::{Error, Result};

pub const FORMAT: &str = "subtype-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Hydra,
    Magic,
    Chimera,
    Kmeans,
    Hierarchical,
    Nmf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Hydra => "hydra",
            Method::Magic => "magic",
            Method::Chimera => "chimera",
            Method::Kmeans => "kmeans",
            Method::Hierarchical => "hierarchical",
            Method::Nmf => "nmf",
        }
    }

    /// Methods that work on min-max rescaled features.
    fn needs_rescale(self) -> bool {
        matches!(self, Method::Magic | Method::Nmf)
    }
}

/// Every option of every method. Only the fields of `method` are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    pub mu: f64,
    /// Restarts of HYDRA and of the chimera EM.
    pub n_restarts: usize,
    pub max_alternations: usize,
    pub empty_cluster_policy: EmptyClusterPolicy,
    pub svm_tol: f64,
    pub svm_max_iter: usize,
    /// MAGIC scales; `None` picks the default schedule for the feature count.
    pub scales: Option<Vec<usize>>,
    pub nmf_max_iter: usize,
    pub nmf_tol: f64,
    pub em_max_iter: usize,
    pub em_tol: f64,
    pub sigma2_floor: f64,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub linkage: Linkage,
}

impl MethodConfig {
    pub fn new(method: Method, k: usize, seed: u64) -> Self {
        let hydra = HydraConfig::default();
        let nmf = OpnmfOptions::default();
        let em = ChimeraOptions::default();
        let km = KMeansOptions::new(k, seed);
        Self {
            method,
            k,
            seed,
            mu: hydra.mu,
            n_restarts: hydra.n_restarts,
            max_alternations: hydra.max_alternations,
            empty_cluster_policy: hydra.empty_cluster_policy,
            svm_tol: hydra.svm_tol,
            svm_max_iter: hydra.svm_max_iter,
            scales: None,
            nmf_max_iter: nmf.max_iter,
            nmf_tol: nmf.tol,
            em_max_iter: em.max_iter,
            em_tol: em.tol,
            sigma2_floor: em.sigma2_floor,
            kmeans_restarts: km.n_init,
            kmeans_max_iter: km.max_iter,
            linkage: Linkage::default(),
        }
    }

    pub fn with_k(&self, k: usize) -> Self {
        Self { k, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn hydra_config(&self) -> HydraConfig {
        HydraConfig {
            k: self.k,
            mu: self.mu,
            n_restarts: self.n_restarts,
            max_alternations: self.max_alternations,
            seed: self.seed,
            empty_cluster_policy: self.empty_cluster_policy,
            svm_tol: self.svm_tol,
            svm_max_iter: self.svm_max_iter,
        }
    }

    pub fn svm_options(&self) -> SvmOptions {
        SvmOptions { tol: self.svm_tol, max_iter: self.svm_max_iter }
    }

    pub fn opnmf_options(&self) -> OpnmfOptions {
        OpnmfOptions { max_iter: self.nmf_max_iter, tol: self.nmf_tol, seed: self.seed }
    }

    pub fn chimera_options(&self) -> ChimeraOptions {
        ChimeraOptions {
            k: self.k,
            seed: self.seed,
            max_iter: self.em_max_iter,
            tol: self.em_tol,
            n_restarts: self.n_restarts,
            sigma2_floor: self.sigma2_floor,
        }
    }

    pub fn kmeans_options(&self) -> KMeansOptions {
        KMeansOptions { k: self.k, seed: self.seed, max_iter: self.kmeans_max_iter, n_init: self.kmeans_restarts }
    }

    pub fn magic_config(&self, p: usize) -> MagicConfig {
        MagicConfig {
            scales: self.scales.clone().unwrap_or_else(|| default_scales(p)),
            k: self.k,
            hydra: self.hydra_config(),
            opnmf: self.opnmf_options(),
            consensus_seed: self.seed,
        }
    }
}

/// Method-specific part of a model document, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelKind {
    Hydra {
        faces: Vec<Hyperplane>,
    },
    Magic {
        scales: Vec<ScaleModel>,
        /// Index into `scales` of the space holding `faces`.
        reference_scale: usize,
        faces: Vec<Hyperplane>,
        scale_consistency: f64,
        /// Per-scale partitions, 1-based, in training patient order.
        scale_partitions: Vec<Vec<usize>>,
        branches: Vec<Branch>,
        cooccurrence: CoOccurrence,
    },
    Chimera {
        displacements: Vec<Vec<f64>>,
        sigma2: f64,
        log_likelihood: f64,
    },
    Kmeans {
        #[serde(with = "crate::linalg::matrix_rows")]
        centroids: Array2<f64>,
        wcss: f64,
    },
    Hierarchical {
        linkage: Linkage,
        /// Mean of each cut cluster, used to place new patients.
        #[serde(with = "crate::linalg::matrix_rows")]
        centroids: Array2<f64>,
    },
    Nmf {
        basis: ScaleBasis,
    },
}

impl ModelKind {
    pub fn method(&self) -> Method {
        match self {
            ModelKind::Hydra { .. } => Method::Hydra,
            ModelKind::Magic { .. } => Method::Magic,
            ModelKind::Chimera { .. } => Method::Chimera,
            ModelKind::Kmeans { .. } => Method::Kmeans,
            ModelKind::Hierarchical { .. } => Method::Hierarchical,
            ModelKind::Nmf { .. } => Method::Nmf,
        }
    }
}

/// Self-describing fitted model.
///
/// `training_labels` is the partition produced by the method itself;
/// `assignments` is the out-of-sample rule replayed on the training cohort,
/// which is what `assign` reproduces. Both use 1-based subtype numbers keyed
/// by sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub k: usize,
    pub config: MethodConfig,
    pub preprocess: PreprocessModel,
    #[serde(flatten)]
    pub model: ModelKind,
    pub objective: Option<f64>,
    pub converged: bool,
    pub training_labels: BTreeMap<String, usize>,
    pub assignments: BTreeMap<String, usize>,
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub document: ModelDocument,
    /// Method partition of the patients, 0-based, in cohort patient order.
    pub labels: Vec<usize>,
    pub converged: bool,
}

/// Fits preprocessing on `raw` and then the configured method on the
/// preprocessed patients and controls.
pub fn fit(raw: &Cohort, cfg: &MethodConfig) -> Result<FitOutcome> {
    raw.require_both_groups()?;
    let mut preprocess = fit_preprocess(raw)?;
    if cfg.method.needs_rescale() {
        preprocess.rescale = Some(fit_rescale(&preprocess.transform(raw)?));
    }
    let prep = preprocess.transform(raw)?;
    let controls = prep.controls();
    let patients = prep.patients();
    let mut config = cfg.clone();

    let (model, labels, objective, converged) = match cfg.method {
        Method::Hydra => {
            let fit = fit_hydra(controls.view(), patients.view(), &cfg.hydra_config())?;
            let converged = fit.converged && fit.svm_converged;
            (ModelKind::Hydra { faces: fit.polytope.faces }, fit.membership.labels, Some(fit.objective), converged)
        }
        Method::Magic => {
            let mcfg = cfg.magic_config(prep.n_features());
            config.scales = Some(mcfg.scales.clone());
            let fit = fit_magic(&prep, &mcfg)?;
            let converged = fit.converged();
            let model = ModelKind::Magic {
                scales: fit.scales,
                reference_scale: fit.reference_scale,
                faces: fit.polytope.faces,
                scale_consistency: fit.scale_consistency,
                scale_partitions: fit.scale_partitions.iter().map(|p| one_based(p)).collect(),
                branches: fit.branches,
                cooccurrence: fit.cooccurrence,
            };
            (model, fit.labels, None, converged)
        }
        Method::Chimera => {
            let fit = fit_chimera(controls.view(), patients.view(), &cfg.chimera_options())?;
            let labels = crate::chimera::labels_from_xi(&fit.xi);
            let model = ModelKind::Chimera {
                displacements: fit.displacements,
                sigma2: fit.sigma2,
                log_likelihood: fit.log_likelihood,
            };
            (model, labels, Some(-fit.log_likelihood), fit.converged)
        }
        Method::Kmeans => {
            let fit = kmeans_with(patients.view(), &cfg.kmeans_options())?;
            let model = ModelKind::Kmeans { centroids: fit.centroids, wcss: fit.wcss };
            (model, fit.labels, Some(fit.wcss), fit.converged)
        }
        Method::Hierarchical => {
            let tree = hierarchical(patients.view(), cfg.linkage)?;
            let labels = cut_dendrogram(&tree, cfg.k)?;
            let centroids = cluster_means(patients.view(), &labels, cfg.k);
            (ModelKind::Hierarchical { linkage: cfg.linkage, centroids }, labels, None, true)
        }
        Method::Nmf => {
            let xt = patients.t();
            let basis = fit_opnmf(xt, cfg.k, &cfg.opnmf_options())?;
            let labels = cluster_by_loading(&basis, xt)?;
            let converged = basis.converged;
            let objective = basis.trace.last().copied();
            (ModelKind::Nmf { basis }, labels, objective, converged)
        }
    };

    let mut document = ModelDocument {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        k: cfg.k,
        config,
        preprocess,
        model,
        objective,
        converged,
        training_labels: keyed(&prep.patient_ids(), &labels),
        assignments: BTreeMap::new(),
    };
    let replay = document.assign_preprocessed(&prep)?;
    document.assignments = keyed(&prep.patient_ids(), &replay);
    Ok(FitOutcome { document, labels, converged })
}

fn one_based(labels: &[usize]) -> Vec<usize> {
    labels.iter().map(|l| l + 1).collect()
}

fn keyed(ids: &[&str], labels: &[usize]) -> BTreeMap<String, usize> {
    ids.iter().zip(labels).map(|(id, l)| (id.to_string(), l + 1)).collect()
}

fn cluster_means(x: ArrayView2<f64>, labels: &[usize], k: usize) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((k, x.ncols()));
    let mut counts = vec![0usize; k];
    for (row, &l) in x.rows().into_iter().zip(labels) {
        let mut target = sums.row_mut(l);
        target += &row;
        counts[l] += 1;
    }
    for (mut row, &c) in sums.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            row.mapv_inplace(|v| v / c as f64);
        }
    }
    sums
}

impl ModelDocument {
    pub fn method(&self) -> Method {
        self.model.method()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != FORMAT {
            return Err(Error::Model(format!("unexpected format `{}`", doc.format)));
        }
        if doc.version != FORMAT_VERSION {
            return Err(Error::Model(format!("unsupported version {}", doc.version)));
        }
        Ok(doc)
    }

    /// Subtype (0-based) of every sample of a raw cohort; `None` for
    /// controls.
    pub fn assign(&self, raw: &Cohort) -> Result<Vec<Option<usize>>> {
        let prep = self.preprocess.transform(raw)?;
        let patient_labels = self.assign_preprocessed(&prep)?;
        let mut it = patient_labels.into_iter();
        Ok(prep.labels.iter().map(|l| if l.is_patient() { it.next() } else { None }).collect())
    }

    /// Subtypes of the patients of a raw cohort, in patient order.
    pub fn assign_patients(&self, raw: &Cohort) -> Result<Vec<usize>> {
        let prep = self.preprocess.transform(raw)?;
        self.assign_preprocessed(&prep)
    }

    fn assign_preprocessed(&self, prep: &Cohort) -> Result<Vec<usize>> {
        let patients = prep.patients();
        if patients.nrows() == 0 {
            return Ok(Vec::new());
        }
        let labels = match &self.model {
            ModelKind::Hydra { faces } => {
                assign_membership(&Polytope { faces: faces.clone() }, patients.view())?.labels
            }
            ModelKind::Magic { scales, reference_scale, faces, .. } => {
                let scale = scales
                    .get(*reference_scale)
                    .ok_or_else(|| Error::Model(format!("reference scale {reference_scale} out of range")))?;
                if scale.basis.n_features() != patients.ncols() {
                    return Err(Error::Model(format!(
                        "basis expects {} features, cohort has {}",
                        scale.basis.n_features(),
                        patients.ncols()
                    )));
                }
                let z = scale.loadings(patients.view());
                assign_membership(&Polytope { faces: faces.clone() }, z.view())?.labels
            }
            ModelKind::Chimera { displacements, sigma2, log_likelihood } => {
                let model = ChimeraModel {
                    displacements: displacements.clone(),
                    sigma2: *sigma2,
                    log_likelihood: *log_likelihood,
                    converged: self.converged,
                    iterations: 0,
                    xi: Array2::zeros((0, 0)),
                    trace: Vec::new(),
                    restart: 0,
                };
                assign_chimera(&model, patients.view(), prep.controls().view())?
            }
            ModelKind::Kmeans { centroids, .. } | ModelKind::Hierarchical { centroids, .. } => {
                if centroids.ncols() != patients.ncols() {
                    return Err(Error::Model(format!(
                        "centroids have {} features, cohort has {}",
                        centroids.ncols(),
                        patients.ncols()
                    )));
                }
                nearest_centroid(patients.view(), centroids.view())
            }
            ModelKind::Nmf { basis } => cluster_by_loading(basis, patients.t())?,
        };
        Ok(labels)
    }
}
