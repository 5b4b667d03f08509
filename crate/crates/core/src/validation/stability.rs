use std::collections::HashMap;

use log::warn;
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adjusted_rand_index, ValidationError};
use crate::cohort::Cohort;
use crate::pipeline::{fit, MethodConfig};
use crate::seed;

const NULL_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleOptions {
    pub n_resamples: usize,
    /// Fraction of patients drawn without replacement; controls are kept.
    pub subsample_fraction: f64,
    pub seed: u64,
}

impl Default for ResampleOptions {
    fn default() -> Self {
        Self { n_resamples: 10, subsample_fraction: 0.8, seed: 0 }
    }
}

/// Stability of one k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KStability {
    pub k: usize,
    /// Mean pairwise ARI; absent when no pair of fits could be compared.
    pub mean: Option<f64>,
    /// Sample standard deviation of the pairwise ARIs; absent below two pairs.
    pub dispersion: Option<f64>,
    pub pairwise: Vec<f64>,
    pub n_fits: usize,
    pub n_failed: usize,
    /// More than half of the fits failed.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub config: MethodConfig,
    pub resampling: ResampleOptions,
    pub k_min: usize,
    pub k_max: usize,
    pub per_k: Vec<KStability>,
    pub selected_k: Option<usize>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub k: usize,
    pub n_perm: usize,
    pub observed: f64,
    /// Statistic of every label shuffle; failed draws are `None` and count
    /// as at least as extreme as the observation.
    pub null: Vec<Option<f64>>,
    pub p_value: f64,
}

impl ResampleOptions {
    fn validate(&self) -> Result<(), ValidationError> {
        if self.n_resamples == 0 {
            return Err(ValidationError::InvalidRequest("n_resamples must be at least 1".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(ValidationError::InvalidRequest(format!(
                "subsample fraction {} outside (0, 1]",
                self.subsample_fraction
            )));
        }
        Ok(())
    }
}

/// Fits the method on a subset of samples and returns sample index to label.
fn fit_labels(cohort: &Cohort, rows: &[usize], cfg: &MethodConfig) -> crate::Result<HashMap<usize, usize>> {
    let sub = cohort.subset(rows);
    let out = fit(&sub, cfg)?;
    let patients: Vec<usize> = rows.iter().copied().filter(|&i| cohort.labels[i].is_patient()).collect();
    Ok(patients.into_iter().zip(out.labels).collect())
}

fn with_controls(cohort: &Cohort, patients: &[usize]) -> Vec<usize> {
    let mut rows = cohort.control_indices();
    rows.extend_from_slice(patients);
    rows.sort_unstable();
    rows
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

/// Mean pairwise ARI between fits on seeded patient subsamples, compared on
/// the patients each pair shares.
pub fn stability_at_k(cohort: &Cohort, cfg: &MethodConfig, opts: &ResampleOptions) -> Result<KStability, ValidationError> {
    opts.validate()?;
    let patients = cohort.patient_indices();
    let m = patients.len();
    let size = ((opts.subsample_fraction * m as f64).round() as usize).clamp(cfg.k.min(m), m);
    let fits: Vec<Option<HashMap<usize, usize>>> = (0..opts.n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::rng(seed::derive(opts.seed, r as u64));
            let chosen: Vec<usize> = index::sample(&mut rng, m, size).into_iter().map(|i| patients[i]).collect();
            let run_cfg = cfg.with_seed(seed::derive(cfg.seed, r as u64));
            match fit_labels(cohort, &with_controls(cohort, &chosen), &run_cfg) {
                Ok(labels) => Some(labels),
                Err(e) => {
                    warn!("k = {}: resample {r} failed: {e}", cfg.k);
                    None
                }
            }
        })
        .collect();
    let n_failed = fits.iter().filter(|f| f.is_none()).count();
    let skipped = 2 * n_failed > opts.n_resamples;
    let ok: Vec<&HashMap<usize, usize>> = fits.iter().flatten().collect();
    let mut pairwise = Vec::new();
    if !skipped {
        for a in 0..ok.len() {
            for b in a + 1..ok.len() {
                let mut shared: Vec<usize> = ok[a].keys().copied().filter(|i| ok[b].contains_key(i)).collect();
                shared.sort_unstable();
                let la: Vec<usize> = shared.iter().map(|i| ok[a][i]).collect();
                let lb: Vec<usize> = shared.iter().map(|i| ok[b][i]).collect();
                if let Ok(v) = adjusted_rand_index(&la, &lb) {
                    pairwise.push(v);
                }
            }
        }
    } else {
        warn!("k = {} skipped: {n_failed} of {} fits failed", cfg.k, opts.n_resamples);
    }
    let (mean, dispersion) = mean_sd(&pairwise);
    Ok(KStability { k: cfg.k, mean, dispersion, pairwise, n_fits: opts.n_resamples, n_failed, skipped })
}

/// Stability over `k_min..=k_max`; the selected k has the highest mean,
/// ties to the smaller k.
pub fn scan_k(
    cohort: &Cohort,
    cfg: &MethodConfig,
    k_min: usize,
    k_max: usize,
    opts: &ResampleOptions,
) -> Result<StabilityReport, ValidationError> {
    let m = cohort.n_patients();
    if k_min == 0 || k_min > k_max {
        return Err(ValidationError::InvalidRequest(format!("empty k range {k_min}..={k_max}")));
    }
    if k_max > m {
        return Err(ValidationError::InvalidRequest(format!("k_max {k_max} exceeds {m} patients")));
    }
    let per_k: Vec<KStability> =
        (k_min..=k_max).map(|k| stability_at_k(cohort, &cfg.with_k(k), opts)).collect::<Result<_, _>>()?;
    let mut selected: Option<(usize, f64)> = None;
    for s in &per_k {
        if let Some(mean) = s.mean {
            if selected.is_none_or(|(_, best)| mean > best) {
                selected = Some((s.k, mean));
            }
        }
    }
    Ok(StabilityReport {
        config: cfg.clone(),
        resampling: *opts,
        k_min,
        k_max,
        per_k,
        selected_k: selected.map(|(k, _)| k),
        p_value: None,
    })
}

/// Own-fit versus cross-fit agreement for explicit patient halves (sample
/// indices). Returns the ARI on half `a` followed by the ARI on half `b`.
pub fn split_half_with(cohort: &Cohort, cfg: &MethodConfig, a: &[usize], b: &[usize]) -> crate::Result<[f64; 2]> {
    let cohort_a = cohort.subset(&with_controls(cohort, a));
    let cohort_b = cohort.subset(&with_controls(cohort, b));
    let fit_a = fit(&cohort_a, cfg)?;
    let fit_b = fit(&cohort_b, cfg)?;
    let cross_a = fit_b.document.assign_patients(&cohort_a)?;
    let cross_b = fit_a.document.assign_patients(&cohort_b)?;
    Ok([adjusted_rand_index(&fit_a.labels, &cross_a)?, adjusted_rand_index(&fit_b.labels, &cross_b)?])
}

/// ARIs of `n_splits` random patient halvings, two per successful split.
pub fn split_half_reproducibility(
    cohort: &Cohort,
    cfg: &MethodConfig,
    n_splits: usize,
    seed: u64,
) -> Result<Vec<f64>, ValidationError> {
    let patients = cohort.patient_indices();
    let m = patients.len();
    if m < 2 * cfg.k {
        return Err(ValidationError::InvalidRequest(format!("{m} patients cannot be halved for k = {}", cfg.k)));
    }
    if n_splits == 0 {
        return Err(ValidationError::InvalidRequest("n_splits must be at least 1".into()));
    }
    let runs: Vec<Option<[f64; 2]>> = (0..n_splits)
        .into_par_iter()
        .map(|s| {
            let mut order = patients.clone();
            order.shuffle(&mut seed::rng(seed::derive(seed, s as u64)));
            let (a, b) = order.split_at(m / 2);
            let (mut a, mut b) = (a.to_vec(), b.to_vec());
            a.sort_unstable();
            b.sort_unstable();
            match split_half_with(cohort, cfg, &a, &b) {
                Ok(v) => Some(v),
                Err(e) => {
                    warn!("split {s} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let failed = runs.iter().filter(|r| r.is_none()).count();
    if 2 * failed > n_splits {
        return Err(ValidationError::TooManyFailures { k: cfg.k, failed, total: n_splits });
    }
    Ok(runs.into_iter().flatten().flatten().collect())
}

/// Add-one permutation p-value of `observed` against `null`; `None` entries
/// count as exceedances.
pub fn permutation_p_value(observed: f64, null: &[Option<f64>]) -> f64 {
    let exceed = null.iter().filter(|v| v.is_none_or(|v| v >= observed)).count();
    (1 + exceed) as f64 / (1 + null.len()) as f64
}

/// Stability at `cfg.k` against draws with the control/patient labels
/// shuffled among all samples.
pub fn permutation_test(
    cohort: &Cohort,
    cfg: &MethodConfig,
    opts: &ResampleOptions,
    n_perm: usize,
) -> Result<PermutationResult, ValidationError> {
    if n_perm < 19 {
        return Err(ValidationError::InvalidRequest(format!("n_perm must be at least 19, got {n_perm}")));
    }
    if opts.n_resamples < 2 {
        return Err(ValidationError::InvalidRequest("the statistic needs at least 2 resamples".into()));
    }
    let observed = stability_at_k(cohort, cfg, opts)?;
    let observed = observed.mean.ok_or(ValidationError::TooManyFailures {
        k: cfg.k,
        failed: observed.n_failed,
        total: observed.n_fits,
    })?;
    let null: Vec<Option<f64>> = (0..n_perm)
        .into_par_iter()
        .map(|t| {
            let mut labels = cohort.labels.clone();
            labels.shuffle(&mut seed::rng(seed::derive(opts.seed, NULL_STREAM + t as u64)));
            let shuffled = cohort.with_labels(labels);
            stability_at_k(&shuffled, cfg, opts).ok().and_then(|s| s.mean)
        })
        .collect();
    let p_value = permutation_p_value(observed, &null);
    Ok(PermutationResult { k: cfg.k, n_perm, observed, null, p_value })
}
