mod common;

use ndarray::Array2;
use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use subtype::baselines::{cut_dendrogram, hierarchical, kmeans, Linkage};
use subtype::chimera::{fit_chimera, ChimeraOptions};
use subtype::cohort::{fit_preprocess, Cohort, Label};
use subtype::hydra::{assign_membership, fit_hydra, fit_hydra_from, hydra_objective, HydraConfig};
use subtype::magic::{fit_magic, spectral_clustering, CoOccurrence, MagicConfig};
use subtype::opnmf::{fit_opnmf, OpnmfOptions};
use subtype::validation::{adjusted_rand_index, generate_semi_simulated, permutation_p_value, SimSpec};
use subtype::wsvm::{solve_weighted_svm, Hyperplane, SvmOptions, WeightedProblem};

use common::gaussian_matrix;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn svm_instance(seed: u64, n: usize, p: usize) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_matrix(&mut rng, n, p);
    let y = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let c = (0..n).map(|i| 0.1 + (i % 3) as f64 * 0.4).collect();
    (x, y, c)
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn ari_symmetric_and_relabel_invariant(
        a in prop::collection::vec(0usize..4, 2..30),
        shift in 1usize..7,
    ) {
        let b: Vec<usize> = a.iter().enumerate().map(|(i, &l)| (l + i) % 3).collect();
        let ab = adjusted_rand_index(&a, &b).unwrap();
        prop_assert_eq!(ab, adjusted_rand_index(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&ab));
        let renamed: Vec<usize> = a.iter().map(|l| (l + shift) * 11).collect();
        prop_assert_eq!(adjusted_rand_index(&renamed, &b).unwrap(), ab);
        prop_assert_eq!(adjusted_rand_index(&a, &renamed).unwrap(), 1.0);
    }

    #[test]
    fn cooccurrence_invariants(
        parts in prop::collection::vec(prop::collection::vec(0usize..3, 12), 1..6),
    ) {
        let co = CoOccurrence::from_partitions(&parts).unwrap();
        for a in 0..12 {
            prop_assert_eq!(co.matrix[[a, a]], 1.0);
            for b in 0..12 {
                let v = co.matrix[[a, b]];
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert_eq!(v, co.matrix[[b, a]]);
            }
        }
        let renamed: Vec<Vec<usize>> = parts.iter().map(|p| p.iter().map(|l| 2 - l).collect()).collect();
        prop_assert_eq!(CoOccurrence::from_partitions(&renamed).unwrap(), co.clone());
        let once = spectral_clustering(co.matrix.view(), 2, 5).unwrap();
        prop_assert_eq!(spectral_clustering(co.matrix.view(), 2, 5).unwrap(), once);
    }

    #[test]
    fn p_value_bounds_and_monotone(
        null in prop::collection::vec(-1.0f64..1.0, 19..40),
        obs in -1.5f64..1.5,
        bump in 0.0f64..0.5,
    ) {
        let null: Vec<Option<f64>> = null.into_iter().map(Some).collect();
        let p = permutation_p_value(obs, &null);
        prop_assert!(p > 0.0 && p <= 1.0);
        prop_assert!(permutation_p_value(obs + bump, &null) <= p);
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn svm_contracts(seed in 0u64..10_000, scale in 0.1f64..10.0) {
        let (x, y, c) = svm_instance(seed, 16, 3);
        let mu = 1.0;
        let prob = WeightedProblem::new(x.view(), &y, &c, mu).unwrap();
        let opts = SvmOptions { tol: 1e-9, max_iter: 100_000 };
        let sol = solve_weighted_svm(&prob, &opts);
        // objective at the origin is mu * sum of weights
        let origin = prob.objective(&Hyperplane::zeros(3));
        prop_assert!((origin - mu * c.iter().sum::<f64>()).abs() < 1e-12);
        prop_assert!(prob.augmented_objective(&sol.hyperplane) <= origin + 1e-12);
        for w in sol.trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
        for (a, ci) in sol.alpha.iter().zip(&c) {
            prop_assert!(*a >= 0.0 && *a <= mu * ci);
        }

        // weights * t with mu / t leaves the minimizer in place
        let scaled: Vec<f64> = c.iter().map(|ci| ci * scale).collect();
        let prob2 = WeightedProblem::new(x.view(), &y, &scaled, mu / scale).unwrap();
        let sol2 = solve_weighted_svm(&prob2, &opts);
        for (a, b) in sol.hyperplane.w.iter().zip(&sol2.hyperplane.w) {
            prop_assert!((a - b).abs() < 1e-4, "{} vs {}", a, b);
        }
        prop_assert!((sol.hyperplane.b - sol2.hyperplane.b).abs() < 1e-3);
    }

    #[test]
    fn zero_weight_sample_is_neutral(seed in 0u64..10_000) {
        let (x, y, c) = svm_instance(seed, 12, 3);
        let base = WeightedProblem::new(x.view(), &y, &c, 1.0).unwrap();
        let sol = solve_weighted_svm(&base, &SvmOptions::default());
        let extra = ndarray::concatenate![ndarray::Axis(0), x, Array2::from_elem((1, 3), 50.0)];
        let mut y2 = y.clone();
        y2.push(-1.0);
        let mut c2 = c.clone();
        c2.push(0.0);
        let prob = WeightedProblem::new(extra.view(), &y2, &c2, 1.0).unwrap();
        let sol2 = solve_weighted_svm(&prob, &SvmOptions::default());
        prop_assert_eq!(sol.hyperplane, sol2.hyperplane);
    }

    #[test]
    fn opnmf_contracts(seed in 0u64..10_000, r in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((9, 14), |_| rand::Rng::random::<f64>(&mut rng));
        let opts = OpnmfOptions { seed, ..OpnmfOptions::default() };
        let basis = fit_opnmf(x.view(), r, &opts).unwrap();
        prop_assert!(basis.components.iter().all(|&v| v >= 0.0));
        for w in basis.trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-10));
        }
        prop_assert_eq!(fit_opnmf(x.view(), r, &opts).unwrap(), basis);
    }

    #[test]
    fn kmeans_monotone_fixed_point_and_row_order(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = gaussian_matrix(&mut rng, 30, 2);
        for i in 10..20 { x[[i, 0]] += 10.0; }
        for i in 20..30 { x[[i, 1]] += 10.0; }
        let fit = kmeans(x.view(), 3, seed, 300).unwrap();
        for w in fit.trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        prop_assert_eq!(subtype::baselines::nearest_centroid(x.view(), fit.centroids.view()), fit.labels.clone());
        let order: Vec<usize> = (0..30).rev().collect();
        let permuted = x.select(ndarray::Axis(0), &order);
        let fit2 = kmeans(permuted.view(), 3, seed, 300).unwrap();
        let back: Vec<usize> = (0..30).map(|i| fit2.labels[29 - i]).collect();
        prop_assert_eq!(adjusted_rand_index(&back, &fit.labels).unwrap(), 1.0);
    }

    #[test]
    fn dendrogram_nested_and_monotone(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian_matrix(&mut rng, 15, 2);
        for linkage in [Linkage::Single, Linkage::Complete, Linkage::Average, Linkage::Ward] {
            let tree = hierarchical(x.view(), linkage).unwrap();
            prop_assert_eq!(tree.merges.len(), 14);
            if linkage == Linkage::Ward {
                for w in tree.merges.windows(2) {
                    prop_assert!(w[1].distance >= w[0].distance - 1e-12);
                }
            }
            for k in 2..=15 {
                let fine = cut_dendrogram(&tree, k).unwrap();
                let coarse = cut_dendrogram(&tree, k - 1).unwrap();
                for a in 0..15 {
                    for b in 0..15 {
                        if fine[a] == fine[b] {
                            prop_assert_eq!(coarse[a], coarse[b]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn residualized_controls_carry_no_covariate_signal(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 30;
        let cov = gaussian_matrix(&mut rng, n, 2);
        let mut x = gaussian_matrix(&mut rng, n, 4);
        for i in 0..n {
            x[[i, 1]] += 3.0 * cov[[i, 0]];
            x[[i, 3]] -= 2.0 * cov[[i, 1]] + cov[[i, 0]];
        }
        let labels: Vec<Label> = (0..n).map(|i| if i % 3 == 0 { Label::Patient } else { Label::Control }).collect();
        let cohort = Cohort::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..4).map(|f| format!("f_{f}")).collect(),
            vec!["cov_a".into(), "cov_b".into()],
            x,
            labels.clone(),
            cov.clone(),
        ).unwrap();
        let model = fit_preprocess(&cohort).unwrap();
        let out = model.transform(&cohort).unwrap();
        prop_assert_eq!(&out.labels, &labels);
        prop_assert_eq!(model.transform(&cohort).unwrap(), out.clone());
        // refit on the residualized controls: slopes vanish
        let again = Cohort::new(
            out.sample_ids.clone(), out.feature_names.clone(), out.covariate_names.clone(),
            out.features.clone(), out.labels.clone(), cov,
        ).unwrap();
        let refit = fit_preprocess(&again).unwrap();
        for row in &refit.coefficients {
            for c in row {
                prop_assert!(c.abs() <= 1e-8, "{}", c);
            }
        }
    }

    #[test]
    fn chimera_em_contracts(seed in 0u64..10_000) {
        let (controls, patients, _, _) = common::two_shift_fixture(seed, 20, 3, 2.0);
        let noisy = &patients + &gaussian_matrix(&mut ChaCha8Rng::seed_from_u64(seed + 1), 20, 3).mapv(|v| 0.3 * v);
        let opts = ChimeraOptions { k: 2, seed, ..ChimeraOptions::default() };
        let model = fit_chimera(controls.view(), noisy.view(), &opts).unwrap();
        for w in model.trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
        for row in model.xi.rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
        prop_assert!(model.sigma2 > 0.0);
        // translating everything leaves the displacements alone
        let shift = 4.5;
        let moved = fit_chimera((&controls + shift).view(), (&noisy + shift).view(), &opts).unwrap();
        let close = |order: [usize; 2]| {
            (0..2).all(|j| {
                model.displacements[j].iter().zip(&moved.displacements[order[j]]).all(|(a, b)| (a - b).abs() <= 1e-6)
            })
        };
        prop_assert!(close([0, 1]) || close([1, 0]), "{:?} vs {:?}", model.displacements, moved.displacements);
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn hydra_alternation_contracts(seed in 0u64..10_000) {
        let spec = SimSpec { seed, n_controls: 30, n_patients: 30, p: 10, effect_size: 2.0, ..SimSpec::default() };
        let (cohort, _) = generate_semi_simulated(&spec).unwrap();
        let (controls, patients) = (cohort.controls(), cohort.patients());
        let cfg = HydraConfig { seed, n_restarts: 2, ..HydraConfig::with_k(2) };
        let fit = fit_hydra(controls.view(), patients.view(), &cfg).unwrap();

        prop_assert_eq!(&assign_membership(&fit.polytope, patients.view()).unwrap(), &fit.membership);
        for w in fit.trace.windows(2) {
            prop_assert!(w[1] - w[0] <= 10.0 * cfg.svm_tol * w[0].abs().max(1.0), "{:?}", fit.trace);
        }
        if fit.converged {
            let again = fit_hydra_from(controls.view(), patients.view(), &fit.membership, &cfg).unwrap();
            prop_assert_eq!(again.membership, fit.membership.clone());
        }
        // controls stay below the bound implied by the objective
        let obj = hydra_objective(&fit.polytope, controls.view(), patients.view(), &fit.membership, cfg.mu).unwrap();
        let bound = 2.0 * obj / cfg.mu - 1.0;
        for row in controls.rows() {
            for face in &fit.polytope.faces {
                prop_assert!(subtype::wsvm::decision_value(face, row).unwrap() <= bound + 1e-9);
            }
        }
    }

    #[test]
    fn hydra_ignores_patient_row_order(seed in 0u64..10_000) {
        let spec = SimSpec { seed, n_controls: 30, n_patients: 30, p: 50, effect_size: 3.0, ..SimSpec::default() };
        let (cohort, _) = generate_semi_simulated(&spec).unwrap();
        let (controls, patients) = (cohort.controls(), cohort.patients());
        let cfg = HydraConfig { seed, ..HydraConfig::with_k(2) };
        let fit = fit_hydra(controls.view(), patients.view(), &cfg).unwrap();
        let order: Vec<usize> = (0..30).rev().collect();
        let permuted = patients.select(ndarray::Axis(0), &order);
        let fit2 = fit_hydra(controls.view(), permuted.view(), &cfg).unwrap();
        let back: Vec<usize> = (0..30).map(|i| fit2.membership.labels[29 - i]).collect();
        prop_assert_eq!(adjusted_rand_index(&back, &fit.membership.labels).unwrap(), 1.0);
    }

    #[test]
    fn generator_reproducible(seed in any::<u64>()) {
        let spec = SimSpec { seed, n_controls: 8, n_patients: 8, p: 10, ..SimSpec::default() };
        let (a, ta) = generate_semi_simulated(&spec).unwrap();
        let (b, tb) = generate_semi_simulated(&spec).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(ta, tb);
    }
}

#[test]
fn affected_means_shift_by_effect_size() {
    for seed in 0..5 {
        let spec = SimSpec { seed, ..SimSpec::default() };
        let (cohort, truth) = generate_semi_simulated(&spec).unwrap();
        let controls = cohort.controls();
        let patients = cohort.patients();
        for (j, set) in truth.affected.iter().enumerate() {
            let rows: Vec<usize> = (0..patients.nrows()).filter(|&i| truth.planted[i] == j).collect();
            let gap = set
                .iter()
                .map(|&f| {
                    let pm = rows.iter().map(|&i| patients[[i, f]]).sum::<f64>() / rows.len() as f64;
                    controls.column(f).mean().unwrap() - pm
                })
                .sum::<f64>()
                / set.len() as f64;
            let se = ((1.0 / rows.len() as f64 + 1.0 / controls.nrows() as f64) / set.len() as f64).sqrt();
            assert!((gap - spec.effect_size).abs() <= 3.0 * se, "seed {seed} subtype {j}: {gap}");
        }
    }
}

#[test]
fn unanimous_scales_are_fully_consistent() {
    for seed in 0..3 {
        let (cohort, planted) = common::unanimity_fixture(seed);
        let mut cfg = MagicConfig::new(vec![2, 4, 8], 2);
        cfg.hydra.seed = seed;
        let fit = fit_magic(&cohort, &cfg).unwrap();
        assert_eq!(fit.scale_consistency, 1.0, "seed {seed}");
        assert_eq!(adjusted_rand_index(&fit.labels, &planted).unwrap(), 1.0);
    }
}

#[test]
fn single_scale_reduces_to_hydra_on_loadings() {
    for seed in 0..3 {
        let spec = SimSpec { seed, n_controls: 40, n_patients: 40, p: 12, effect_size: 2.0, ..SimSpec::default() };
        let (raw, _) = generate_semi_simulated(&spec).unwrap();
        let rescale = subtype::cohort::fit_rescale(&raw);
        let cohort = rescale.apply(&raw).unwrap();
        let mut cfg = MagicConfig::new(vec![3], 2);
        cfg.hydra.seed = seed;
        let fit = fit_magic(&cohort, &cfg).unwrap();
        let z = fit.scales[0].loadings(cohort.features.view());
        let xc = z.select(ndarray::Axis(0), &cohort.control_indices());
        let xp = z.select(ndarray::Axis(0), &cohort.patient_indices());
        let plain = fit_hydra(xc.view(), xp.view(), &HydraConfig { k: 2, ..cfg.hydra }).unwrap();
        assert!(plain.converged);
        assert_eq!(adjusted_rand_index(&fit.labels, &plain.membership.labels).unwrap(), 1.0, "seed {seed}");
    }
}
