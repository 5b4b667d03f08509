#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use subtype::cohort::{Cohort, Label};
use subtype::wsvm::BIAS_SCALE;

pub fn gaussian_matrix(rng: &mut impl Rng, n: usize, p: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, p), |_| rng.sample(StandardNormal))
}

/// Dual value of the bias-augmented weighted SVM by accelerated projected
/// gradient on the box `[0, mu c_i]`.
pub fn pg_dual_oracle(x: &Array2<f64>, y: &[f64], c: &[f64], mu: f64) -> f64 {
    let n = x.nrows();
    let q = Array2::from_shape_fn((n, n), |(i, j)| {
        y[i] * y[j] * (x.row(i).dot(&x.row(j)) + BIAS_SCALE * BIAS_SCALE)
    });
    let lipschitz = (0..n).map(|i| q.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let upper: Vec<f64> = c.iter().map(|w| w * mu).collect();
    let project = |v: &Array1<f64>| -> Array1<f64> {
        Array1::from_shape_fn(n, |i| v[i].clamp(0.0, upper[i]))
    };
    let value = |a: &Array1<f64>| a.sum() - 0.5 * a.dot(&q.dot(a));
    let mut alpha = Array1::<f64>::zeros(n);
    let mut z = alpha.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        let grad = Array1::from_elem(n, 1.0) - q.dot(&z);
        let next = project(&(&z + &(grad / lipschitz)));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &next + &((&next - &alpha) * ((t - 1.0) / t_next));
        z = project(&z);
        alpha = next;
        t = t_next;
    }
    value(&alpha)
}

pub fn wcss_of(x: &Array2<f64>, labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for j in 0..k {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == j).collect();
        if rows.is_empty() {
            continue;
        }
        for f in 0..x.ncols() {
            let mean = rows.iter().map(|&i| x[[i, f]]).sum::<f64>() / rows.len() as f64;
            total += rows.iter().map(|&i| (x[[i, f]] - mean).powi(2)).sum::<f64>();
        }
    }
    total
}

/// Controls from a standard normal; the first half of the patients are
/// copies of controls moved by `+v`, the second half by `-v`.
pub fn two_shift_fixture(seed: u64, q: usize, p: usize, norm: f64) -> (Array2<f64>, Array2<f64>, Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let controls = gaussian_matrix(&mut rng, q, p);
    let dir: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let v: Vec<f64> = dir.iter().map(|d| d / len * norm).collect();
    let mut patients = controls.clone();
    let mut planted = vec![0; q];
    for i in 0..q {
        let sign = if i < q / 2 { 1.0 } else { -1.0 };
        planted[i] = usize::from(i >= q / 2);
        for f in 0..p {
            patients[[i, f]] += sign * v[f];
        }
    }
    (controls, patients, v, planted)
}

/// Cohort from control and patient blocks without covariates.
pub fn cohort_from(controls: &Array2<f64>, patients: &Array2<f64>) -> Cohort {
    let (q, m, p) = (controls.nrows(), patients.nrows(), controls.ncols());
    let features = ndarray::concatenate![ndarray::Axis(0), *controls, *patients];
    let mut ids: Vec<String> = (0..q).map(|i| format!("CN{i:04}")).collect();
    ids.extend((0..m).map(|i| format!("PT{i:04}")));
    let mut labels = vec![Label::Control; q];
    labels.extend(vec![Label::Patient; m]);
    let names = (0..p).map(|f| format!("f_{f:03}")).collect();
    Cohort::new(ids, names, Vec::new(), features, labels, Array2::zeros((q + m, 0))).unwrap()
}

/// Non-negative cohort in which patient groups differ from the controls on
/// disjoint, strongly elevated feature blocks, so every scale sees the same
/// split.
pub fn unanimity_fixture(seed: u64) -> (Cohort, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (q, m, p) = (40, 40, 16);
    let controls = Array2::from_shape_fn((q, p), |_| 1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal));
    let mut patients = Array2::from_shape_fn((m, p), |_| 1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal));
    let planted: Vec<usize> = (0..m).map(|i| usize::from(i >= m / 2)).collect();
    for i in 0..m {
        let block = if planted[i] == 0 { 0..p / 2 } else { p / 2..p };
        for f in block {
            patients[[i, f]] += 3.0;
        }
    }
    (cohort_from(&controls, &patients), planted)
}
