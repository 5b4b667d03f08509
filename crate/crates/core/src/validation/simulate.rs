use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ValidationError;
use crate::cohort::{Cohort, Label};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Affected features shift down (atrophy-like).
    #[default]
    Decrease,
    Increase,
    /// Even-numbered subtypes decrease, odd-numbered subtypes increase.
    Mixed,
}

/// Recipe for a semi-simulated cohort with planted subtypes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub k_planted: usize,
    /// Shift in units of the control standard deviation.
    pub effect_size: f64,
    /// Fraction of features affected in each subtype.
    pub affected_fraction: f64,
    /// Fraction of each affected set shared by all subtypes.
    pub overlap: f64,
    pub direction: Direction,
    pub n_controls: usize,
    pub n_patients: usize,
    pub p: usize,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            k_planted: 2,
            effect_size: 1.5,
            affected_fraction: 0.2,
            overlap: 0.0,
            direction: Direction::Decrease,
            n_controls: 200,
            n_patients: 200,
            p: 100,
            seed: 0,
        }
    }
}

/// Ground truth of a generated cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    /// Planted subtype of each patient, in cohort patient order.
    pub planted: Vec<usize>,
    /// Affected feature indices of each subtype.
    pub affected: Vec<Vec<usize>>,
}

impl SimSpec {
    /// Affected feature sets: a shared core followed by disjoint blocks.
    pub fn affected_sets(&self) -> Result<Vec<Vec<usize>>, ValidationError> {
        if self.k_planted == 0 {
            return Err(ValidationError::InvalidSpec("k_planted must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(ValidationError::InvalidSpec(format!("overlap {} outside [0, 1]", self.overlap)));
        }
        if !(self.effect_size >= 0.0 && self.effect_size.is_finite()) {
            return Err(ValidationError::InvalidSpec(format!("effect_size {} must be >= 0", self.effect_size)));
        }
        if !(self.affected_fraction * self.p as f64 >= 1.0) || self.affected_fraction > 1.0 {
            return Err(ValidationError::InvalidSpec(format!(
                "affected_fraction {} gives no affected feature out of {}",
                self.affected_fraction, self.p
            )));
        }
        let size = (self.affected_fraction * self.p as f64).round() as usize;
        let shared = (self.overlap * size as f64).round() as usize;
        let unique = size - shared;
        let needed = shared + self.k_planted * unique;
        if needed > self.p {
            return Err(ValidationError::InvalidSpec(format!(
                "{} subtypes with {size} affected features ({shared} shared) need {needed} features, p = {}",
                self.k_planted, self.p
            )));
        }
        Ok((0..self.k_planted)
            .map(|j| (0..shared).chain(shared + j * unique..shared + (j + 1) * unique).collect())
            .collect())
    }

    fn sign(&self, subtype: usize) -> f64 {
        match self.direction {
            Direction::Decrease => -1.0,
            Direction::Increase => 1.0,
            Direction::Mixed if subtype % 2 == 0 => -1.0,
            Direction::Mixed => 1.0,
        }
    }
}

/// Draws controls from a standard normal per feature and patients as fresh
/// control-like draws shifted on their subtype's affected features.
/// Subtypes are assigned in balanced contiguous blocks.
pub fn generate_semi_simulated(spec: &SimSpec) -> Result<(Cohort, SimTruth), ValidationError> {
    let affected = spec.affected_sets()?;
    let (q, m, p, k) = (spec.n_controls, spec.n_patients, spec.p, spec.k_planted);
    let n = q + m;
    let mut rng = seed::rng(spec.seed);
    let mut features = Array2::<f64>::zeros((n, p));
    for v in features.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let planted: Vec<usize> = (0..m).map(|i| i * k / m.max(1)).collect();
    for (i, &j) in planted.iter().enumerate() {
        let shift = spec.sign(j) * spec.effect_size;
        for &f in &affected[j] {
            features[[q + i, f]] += shift;
        }
    }

    let width = p.to_string().len().max(3);
    let id_width = n.to_string().len().max(4);
    let mut ids: Vec<String> = (0..q).map(|i| format!("CN{:0id_width$}", i + 1)).collect();
    ids.extend((0..m).map(|i| format!("PT{:0id_width$}", i + 1)));
    let mut labels = vec![Label::Control; q];
    labels.extend(std::iter::repeat_n(Label::Patient, m));
    let names = (0..p).map(|f| format!("f_{:0width$}", f + 1)).collect();
    let cohort = Cohort::new(ids, names, Vec::new(), features, labels, Array2::zeros((n, 0)))
        .expect("generated cohort satisfies invariants");
    Ok((cohort, SimTruth { planted, affected }))
}
