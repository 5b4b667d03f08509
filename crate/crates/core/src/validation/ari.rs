use std::collections::HashMap;
use std::hash::Hash;

use super::ValidationError;

/// Adjusted Rand index from the pair-counting contingency table.
///
/// Evaluated in exact integer arithmetic with a single final division, so
/// symmetric inputs give bit-identical results and simple fractions such as
/// `-0.5` come out exactly. Two partitions that are both trivial in the same
/// way (one cluster, or all singletons) score 1.
pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> Result<f64, ValidationError>
where
    A: Eq + Hash,
    B: Eq + Hash,
{
    if a.len() != b.len() {
        return Err(ValidationError::LengthMismatch { left: a.len(), right: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(ValidationError::TooFewSamples(n));
    }
    let mut joint: HashMap<(&A, &B), u64> = HashMap::new();
    let mut rows: HashMap<&A, u64> = HashMap::new();
    let mut cols: HashMap<&B, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let pairs = |c: u64| -> i128 { (c as i128) * (c as i128 - 1) / 2 };
    let index: i128 = joint.values().map(|&c| pairs(c)).sum();
    let sum_a: i128 = rows.values().map(|&c| pairs(c)).sum();
    let sum_b: i128 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(n as u64);
    // (index - sa*sb/total) / ((sa+sb)/2 - sa*sb/total), scaled by 2*total
    let num = 2 * (index * total - sum_a * sum_b);
    let den = (sum_a + sum_b) * total - 2 * sum_a * sum_b;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}
