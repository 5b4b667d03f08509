//! Independent reference computations for the numerical kernels.

mod common;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use subtype::baselines::{cut_dendrogram, hierarchical, kmeans, Linkage};
use subtype::chimera::{fit_chimera, responsibilities, ChimeraOptions};
use subtype::cohort::{fit_preprocess, Cohort, Label};
use subtype::hydra::{fit_hydra, HydraConfig};
use subtype::opnmf::{fit_opnmf, OpnmfOptions};
use subtype::validation::adjusted_rand_index;
use subtype::wsvm::{solve_weighted_svm, SvmOptions, WeightedProblem};

use common::{gaussian_matrix, pg_dual_oracle};

#[test]
fn svm_primal_matches_dual_oracle() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian_matrix(&mut rng, 10, 5);
        let y: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let c: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
        let problem = WeightedProblem::new(x.view(), &y, &c, 1.0).unwrap();
        let sol = solve_weighted_svm(&problem, &SvmOptions { tol: 1e-10, max_iter: 100_000 });
        let oracle = pg_dual_oracle(&x, &y, &c, 1.0);
        let rel = (sol.objective - oracle).abs() / oracle.abs().max(1e-12);
        assert!(rel <= 1e-6, "seed {seed}: solver {} oracle {oracle} rel {rel:e}", sol.objective);
        assert!((problem.augmented_objective(&sol.hyperplane) - sol.objective).abs() <= 1e-9 * sol.objective);
    }
}

#[test]
fn hydra_k1_is_the_single_weighted_svm() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let controls = gaussian_matrix(&mut rng, 15, 4);
        let patients = gaussian_matrix(&mut rng, 12, 4) + 1.0;
        let cfg = HydraConfig { seed, ..HydraConfig::with_k(1) };
        let fit = fit_hydra(controls.view(), patients.view(), &cfg).unwrap();

        let x = ndarray::concatenate![ndarray::Axis(0), controls, patients];
        let mut y = vec![-1.0; 15];
        y.extend([1.0; 12]);
        let c = vec![1.0; 27];
        let problem = WeightedProblem::new(x.view(), &y, &c, cfg.mu).unwrap();
        let sol = solve_weighted_svm(&problem, &SvmOptions::default());
        let face = &fit.polytope.faces[0];
        for row in x.rows() {
            let a = subtype::wsvm::decision_value(face, row).unwrap();
            let b = subtype::wsvm::decision_value(&sol.hyperplane, row).unwrap();
            assert!((a - b).abs() <= 1e-6, "seed {seed}: {a} vs {b}");
        }
    }
}

/// Solves the normal equations `A^T A beta = A^T y` by Gaussian elimination.
fn normal_equations(a: &Array2<f64>, y: &[f64]) -> Vec<f64> {
    let k = a.ncols();
    let ata = a.t().dot(a);
    let aty = a.t().dot(&Array1::from(y.to_vec()));
    let mut m = Array2::<f64>::zeros((k, k + 1));
    for i in 0..k {
        for j in 0..k {
            m[[i, j]] = ata[[i, j]];
        }
        m[[i, k]] = aty[i];
    }
    for col in 0..k {
        let pivot = (col..k).max_by(|&r, &s| m[[r, col]].abs().total_cmp(&m[[s, col]].abs())).unwrap();
        for j in 0..=k {
            m.swap([col, j], [pivot, j]);
        }
        for r in 0..k {
            if r != col {
                let f = m[[r, col]] / m[[col, col]];
                for j in col..=k {
                    m[[r, j]] -= f * m[[col, j]];
                }
            }
        }
    }
    (0..k).map(|i| m[[i, k]] / m[[i, i]]).collect()
}

#[test]
fn residualization_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 40;
    let cov = gaussian_matrix(&mut rng, n, 2);
    let mut features = gaussian_matrix(&mut rng, n, 3);
    for i in 0..n {
        features[[i, 0]] += 2.0 * cov[[i, 0]] - 0.5 * cov[[i, 1]] + 3.0;
        features[[i, 2]] += -1.5 * cov[[i, 1]];
    }
    let labels: Vec<Label> = (0..n).map(|i| if i < 25 { Label::Control } else { Label::Patient }).collect();
    let ids = (0..n).map(|i| format!("s{i}")).collect();
    let names = vec!["f_a".into(), "f_b".into(), "f_c".into()];
    let cohort = Cohort::new(ids, names, vec!["cov_1".into(), "cov_2".into()], features.clone(), labels, cov.clone())
        .unwrap();
    let model = fit_preprocess(&cohort).unwrap();

    let controls: Vec<usize> = (0..25).collect();
    let design = Array2::from_shape_fn((25, 3), |(r, j)| if j == 0 { 1.0 } else { cov[[controls[r], j - 1]] });
    for f in 0..3 {
        let y: Vec<f64> = controls.iter().map(|&i| features[[i, f]]).collect();
        let beta = normal_equations(&design, &y);
        for c in 0..2 {
            let got = model.coefficients[f][c];
            assert!((got - beta[c + 1]).abs() <= 1e-9, "feature {f} covariate {c}: {got} vs {}", beta[c + 1]);
        }
    }
}

/// Greedy Ward agglomeration on explicit cluster member lists.
fn brute_force_ward(x: &Array2<f64>, k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut clusters: Vec<Vec<usize>> = (0..x.nrows()).map(|i| vec![i]).collect();
    let mut heights = Vec::new();
    let centroid = |members: &[usize]| -> Vec<f64> {
        (0..x.ncols()).map(|f| members.iter().map(|&i| x[[i, f]]).sum::<f64>() / members.len() as f64).collect()
    };
    while clusters.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let (ca, cb) = (centroid(&clusters[a]), centroid(&clusters[b]));
                let (na, nb) = (clusters[a].len() as f64, clusters[b].len() as f64);
                let d2: f64 = ca.iter().zip(&cb).map(|(u, v)| (u - v) * (u - v)).sum();
                let d = (2.0 * na * nb / (na + nb) * d2).sqrt();
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        heights.push(best.0);
        if clusters.len() == k {
            break;
        }
        let merged = clusters.remove(best.2);
        clusters[best.1].extend(merged);
    }
    let mut labels = vec![0; x.nrows()];
    for (j, members) in clusters.iter().enumerate() {
        for &i in members {
            labels[i] = j;
        }
    }
    (labels, heights)
}

#[test]
fn ward_matches_brute_force_agglomeration() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let x = gaussian_matrix(&mut rng, 20, 3);
        let tree = hierarchical(x.view(), Linkage::Ward).unwrap();
        for k in [2, 3, 5] {
            let (oracle, _) = brute_force_ward(&x, k);
            let labels = cut_dendrogram(&tree, k).unwrap();
            assert_eq!(adjusted_rand_index(&labels, &oracle).unwrap(), 1.0, "seed {seed} k {k}");
        }
        let (_, heights) = brute_force_ward(&x, 1);
        for (m, h) in tree.merges.iter().zip(&heights) {
            assert!((m.distance - h).abs() <= 1e-9 * h.max(1.0));
        }
    }
}

#[test]
fn kmeans_reaches_exhaustive_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut x = gaussian_matrix(&mut rng, 12, 2);
    for i in 6..12 {
        x[[i, 0]] += 5.0;
    }
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << 11) {
        let labels: Vec<usize> = (0..12).map(|i| ((mask >> i) & 1) as usize).collect();
        best = best.min(common::wcss_of(&x, &labels, 2));
    }
    let fit = kmeans(x.view(), 2, 0, 300).unwrap();
    assert!(fit.wcss <= best * (1.0 + 1e-12), "{} vs {best}", fit.wcss);
}

#[test]
fn opnmf_error_matches_direct_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Array2::from_shape_fn((8, 20), |_| rng.random::<f64>());
    let basis = fit_opnmf(x.view(), 3, &OpnmfOptions::default()).unwrap();
    let c = &basis.components;
    let resid = &x - &c.dot(&c.t().dot(&x));
    let direct: f64 = resid.iter().map(|v| v * v).sum();
    let traced = *basis.trace.last().unwrap();
    assert!((direct - traced).abs() <= 1e-9 * direct.max(1.0), "{direct} vs {traced}");
}

#[test]
fn chimera_responsibilities_match_direct_densities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let controls = gaussian_matrix(&mut rng, 6, 2);
    let patients = gaussian_matrix(&mut rng, 9, 2) + 0.7;
    let model = fit_chimera(controls.view(), patients.view(), &ChimeraOptions { k: 2, ..Default::default() }).unwrap();
    let xi = responsibilities(&model, patients.view(), controls.view()).unwrap();
    for i in 0..9 {
        let mut dens = [0.0; 2];
        for (j, d) in model.displacements.iter().enumerate() {
            for c in 0..6 {
                let sq: f64 = (0..2).map(|f| (patients[[i, f]] - controls[[c, f]] - d[f]).powi(2)).sum();
                dens[j] += (-sq / (2.0 * model.sigma2)).exp();
            }
        }
        let total = dens[0] + dens[1];
        for j in 0..2 {
            assert!((xi[[i, j]] - dens[j] / total).abs() <= 1e-10);
        }
    }
}

#[test]
fn ari_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = rng.random_range(2..40);
        let a: Vec<u8> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let (mut both, mut only_a, mut only_b, mut neither) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => both += 1.0,
                    (true, false) => only_a += 1.0,
                    (false, true) => only_b += 1.0,
                    (false, false) => neither += 1.0,
                }
            }
        }
        let total: f64 = both + only_a + only_b + neither;
        let expected = (both + only_a) * (both + only_b) / total;
        let max = 0.5 * ((both + only_a) + (both + only_b));
        let oracle = if max == expected { 1.0 } else { (both - expected) / (max - expected) };
        let got = adjusted_rand_index(&a, &b).unwrap();
        assert!((got - oracle).abs() <= 1e-12, "{got} vs {oracle}");
    }
}
