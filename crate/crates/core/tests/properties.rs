//! Property tests for invariants of the building blocks.

mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use unimodal_hmm::constraints::{
    apply_constraint, beta_from_tilde, exact_penalty, project_unimodal, tilde_beta, unimodality_penalty,
};
use unimodal_hmm::emissions::{softmax, Emission, SplineEmission};
use unimodal_hmm::eval::{auc, switch_count};
use unimodal_hmm::hmm::{local_state_probs, log_likelihood, stationary_distribution, viterbi, DeltaMode, TransitionModel};
use unimodal_hmm::simulate::{derive_seed, DwellDistribution, SimConfig};
use unimodal_hmm::splines::{second_diff_penalty, SplineBasis};

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![(0u8..5).prop_map(|v| v as f64 / 4.0), 0.0f64..1.0], n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

fn log_joint(model: &unimodal_hmm::HmmModel, x: &[f64], path: &[usize]) -> f64 {
    let g = model.transition.gamma();
    let d = model.transition.delta();
    let mut lp = d[path[0]].ln() + model.emission.density(path[0], x[0]).ln();
    for t in 1..x.len() {
        lp += g[(path[t - 1], path[t])].ln() + model.emission.density(path[t], x[t]).ln();
    }
    lp
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_equals_mann_whitney((scores, truth) in scores_and_labels()) {
        prop_assume!(truth.iter().any(|&b| b) && truth.iter().any(|&b| !b));
        let a = auc(&scores, &truth).unwrap().auc;
        prop_assert!((a - mann_whitney(&scores, &truth)).abs() < 1e-12);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auc(&flipped, &truth).unwrap().auc - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn roc_is_monotone((scores, truth) in scores_and_labels()) {
        prop_assume!(truth.iter().any(|&b| b) && truth.iter().any(|&b| !b));
        let r = auc(&scores, &truth).unwrap();
        prop_assert_eq!((r.fpr[0], r.tpr[0]), (0.0, 0.0));
        prop_assert_eq!((*r.fpr.last().unwrap(), *r.tpr.last().unwrap()), (1.0, 1.0));
        for w in r.fpr.windows(2).chain(r.tpr.windows(2)) {
            prop_assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn switch_count_ignores_labels(states in prop::collection::vec(0usize..3, 0..80), perm in Just(vec![0usize, 1, 2]).prop_shuffle()) {
        let relabeled: Vec<usize> = states.iter().map(|&s| perm[s]).collect();
        prop_assert_eq!(switch_count(&states), switch_count(&relabeled));
        let direct = states.windows(2).filter(|w| w[0] != w[1]).count();
        prop_assert_eq!(switch_count(&states), direct);
    }

    #[test]
    fn forward_matches_enumeration(seed in any::<u64>(), n in 1usize..4, t in 1usize..6, spline in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, n, spline);
        let x = random_observations(&mut rng, t);
        let ll = log_likelihood(&model, &x).unwrap();
        let oracle = brute_force_loglik(&model, &x);
        prop_assert!((ll - oracle).abs() <= 1e-10 * oracle.abs().max(1.0));
    }

    #[test]
    fn local_probabilities_are_distributions(seed in any::<u64>(), n in 1usize..4, t in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, n, seed % 2 == 0);
        let x = random_observations(&mut rng, t);
        let p = local_state_probs(&model, &x).unwrap();
        for row in p.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-10);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        }
    }

    #[test]
    fn viterbi_path_is_most_probable(seed in any::<u64>(), n in 2usize..4, t in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, n, false);
        let x = random_observations(&mut rng, t);
        let path = viterbi(&model, &x).unwrap();
        let best = log_joint(&model, &x, &path);
        let mut idx = vec![0usize; t];
        loop {
            prop_assert!(log_joint(&model, &x, &idx) <= best + 1e-9);
            let mut pos = 0;
            while pos < t && idx[pos] == n - 1 {
                idx[pos] = 0;
                pos += 1;
            }
            if pos == t {
                break;
            }
            idx[pos] += 1;
        }
    }

    #[test]
    fn stationary_distribution_is_invariant(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_gamma(&mut rng, n);
        let d = stationary_distribution(&g);
        let dg = DMatrix::from_row_slice(1, n, &d) * &g;
        for i in 0..n {
            prop_assert!((dg[(0, i)] - d[i]).abs() < 1e-10);
        }
        let tm = TransitionModel::from_gamma(&g, DeltaMode::Stationary).unwrap();
        prop_assert!((tm.gamma() - &g).amax() < 1e-12);
    }

    #[test]
    fn spline_densities_integrate_to_one(seed in any::<u64>(), k in 4usize..25, lo in -5.0f64..5.0, width in 0.5f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = SplineBasis::new((lo, lo + width), k).unwrap();
        let beta: Vec<f64> = (0..k).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let e = SplineEmission::new(basis.clone(), vec![beta]).unwrap();
        let integral: f64 = basis.quadrature().iter().map(|(x, w)| w * e.density(0, *x)).sum();
        prop_assert!((integral - 1.0).abs() < 1e-10);
        let (a, b) = basis.knot_range();
        for g in 0..200 {
            prop_assert!(e.density(0, a + (b - a) * g as f64 / 199.0) >= 0.0);
        }
    }

    #[test]
    fn softmax_is_a_distribution(beta in prop::collection::vec(-30.0f64..30.0, 1..30), shift in -100.0f64..100.0) {
        let a = softmax(&beta);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = beta.iter().map(|b| b + shift).collect();
        for (u, v) in a.iter().zip(softmax(&shifted)) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn penalty_is_psd_and_kills_lines(beta in prop::collection::vec(-10.0f64..10.0, 3..30), a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let s = second_diff_penalty(beta.len()).unwrap();
        prop_assert!(s.quad_form(&beta) >= -1e-9);
        prop_assert_eq!(s.rank, beta.len() - 2);
        let line: Vec<f64> = (0..beta.len()).map(|k| a + b * k as f64).collect();
        prop_assert!(s.quad_form(&line).abs() < 1e-8 * (1.0 + b * b));
        let sum: Vec<f64> = beta.iter().zip(&line).map(|(u, v)| u + v).collect();
        prop_assert!((s.quad_form(&sum) - s.quad_form(&beta)).abs() < 1e-7 * (1.0 + s.quad_form(&beta)));
    }

    #[test]
    fn tilde_round_trip(seed in any::<u64>(), k in 4usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = SplineBasis::new((0.0, 3.0), k).unwrap();
        let mut beta: Vec<f64> = (0..k).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        beta[k - 1] = 0.0;
        let back = beta_from_tilde(&tilde_beta(&beta, &basis), &basis);
        for (u, v) in beta.iter().zip(back) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn unimodal_sequences_satisfy_constraints(k in 4usize..25, m_frac in 0.0f64..1.0, steps in prop::collection::vec(0.0f64..2.0, 25)) {
        let m = 1 + ((k - 1) as f64 * m_frac).round() as usize;
        // Rise to index m, fall afterwards.
        let mut seq = vec![0.0; k];
        for j in 1..k {
            seq[j] = if j < m { seq[j - 1] + steps[j] } else { seq[j - 1] - steps[j] };
        }
        prop_assert!(apply_constraint(&seq, m).iter().all(|&v| v >= -1e-12));
        let basis = SplineBasis::new((0.0, 1.0), k).unwrap();
        let beta = beta_from_tilde(&seq, &basis);
        prop_assert!(exact_penalty(&beta, &basis, m) < 1e-9);
    }

    #[test]
    fn smoothed_penalty_bounds_exact(seed in any::<u64>(), k in 4usize..20, rho in 1.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = SplineBasis::new((0.0, 1.0), k).unwrap();
        let beta: Vec<f64> = (0..k).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let m = rand::Rng::random_range(&mut rng, 1..=k);
        let exact = exact_penalty(&beta, &basis, m);
        let (smooth, _) = unimodality_penalty(&beta, &basis, m, rho).unwrap();
        // softplus(z)/rho lies between max(0, z)/rho and that plus log(2)/rho.
        prop_assert!(smooth >= exact - 1e-9);
        prop_assert!(smooth <= exact + (k - 1) as f64 * std::f64::consts::LN_2 / rho + 1e-9);
    }

    #[test]
    fn projection_is_feasible(seed in any::<u64>(), k in 4usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = SplineBasis::new((0.0, 1.0), k).unwrap();
        let beta: Vec<f64> = (0..k).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let m = rand::Rng::random_range(&mut rng, 1..=k);
        let p = project_unimodal(&beta, &basis, m, 0.4);
        prop_assert!(exact_penalty(&p, &basis, m) < 1e-12);
        prop_assert_eq!(p.len(), k);
        let e = SplineEmission::new(basis, vec![p]).unwrap();
        let grid: Vec<f64> = (0..500).map(|g| g as f64 / 499.0).collect();
        prop_assert_eq!(unimodal_hmm::emissions::count_local_maxima(&e.density_on(0, &grid)), 1);
    }

    #[test]
    fn dwell_pmfs_sum_to_one(p in 0.05f64..0.95, rate in 0.1f64..20.0, w in 0.0f64..1.0) {
        for d in [
            DwellDistribution::Geometric { p },
            DwellDistribution::ShiftedPoisson { rate },
            DwellDistribution::PoissonMixture { weights: vec![w, 1.0 - w], rates: vec![rate, rate / 3.0] },
        ] {
            let total: f64 = (1..2000).map(|k| d.pmf(k)).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert_eq!(d.pmf(0), 0.0);
            let mean: f64 = (1..2000).map(|k| k as f64 * d.pmf(k)).sum();
            prop_assert!((mean - d.mean()).abs() < 1e-6 * d.mean());
        }
    }

    #[test]
    fn derived_seeds_are_deterministic_and_distinct(seed in any::<u64>(), i in 0u64..1000) {
        prop_assert_eq!(derive_seed(seed, i), derive_seed(seed, i));
        prop_assert_ne!(derive_seed(seed, i), derive_seed(seed, i + 1));
    }
}

#[test]
fn replicates_are_reproducible_and_differ() {
    let cfg = SimConfig::sim2();
    let a = cfg.replicate(3).unwrap();
    assert_eq!(a, cfg.replicate(3).unwrap());
    assert_ne!(a.x, cfg.replicate(4).unwrap().x);
    let all = SimConfig { n_replicates: 5, ..cfg.clone() }.replicates().unwrap();
    assert_eq!(all[3], a);
}

#[test]
fn spline_emission_density_matrix_matches_pointwise() {
    let basis = SplineBasis::new((0.0, 2.0), 9).unwrap();
    let beta = normal_betas(&basis, &[(0.5, 0.3), (1.4, 0.2)]);
    let e = Emission::Spline(SplineEmission::new(basis, beta).unwrap());
    let x = [0.1, 0.7, 1.3, 1.9];
    let m = e.density_matrix(&x).unwrap();
    for (t, &xt) in x.iter().enumerate() {
        for i in 0..2 {
            assert!((m[(t, i)] - e.density(i, xt)).abs() < 1e-14);
        }
    }
}
