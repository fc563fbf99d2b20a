//! Oracles and random-model helpers shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use unimodal_hmm::emissions::{init_from_target, Emission, ParametricDensity, ParametricEmission, SplineEmission, TargetFamily};
use unimodal_hmm::hmm::{DeltaMode, HmmModel, TransitionModel};
use unimodal_hmm::splines::SplineBasis;

/// Likelihood by summing over every state path.
pub fn brute_force_loglik(model: &HmmModel, x: &[f64]) -> f64 {
    let n = model.n_states();
    let t = x.len();
    let gamma = model.transition.gamma();
    let delta = model.transition.delta();
    let dens: Vec<Vec<f64>> = x
        .iter()
        .map(|&v| (0..n).map(|i| model.emission.density(i, v)).collect())
        .collect();
    let mut total = 0.0;
    let mut path = vec![0usize; t];
    loop {
        let mut p = delta[path[0]] * dens[0][path[0]];
        for s in 1..t {
            p *= gamma[(path[s - 1], path[s])] * dens[s][path[s]];
        }
        total += p;
        // Next path in lexicographic order.
        let mut k = t;
        loop {
            if k == 0 {
                return total.ln();
            }
            k -= 1;
            path[k] += 1;
            if path[k] < n {
                break;
            }
            path[k] = 0;
        }
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, by comparing all pairs.
pub fn mann_whitney(scores: &[f64], truth: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !truth[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if truth[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

pub fn random_gamma(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut g = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.05..1.0));
    for i in 0..n {
        g[(i, i)] += rng.random_range(0.0..2.0);
        let s: f64 = g.row(i).sum();
        for j in 0..n {
            g[(i, j)] /= s;
        }
    }
    g
}

pub fn random_delta(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|a| a / s).collect()
}

pub fn random_parametric(rng: &mut ChaCha8Rng) -> ParametricDensity {
    match rng.random_range(0..4) {
        0 => ParametricDensity::Normal {
            mean: rng.random_range(-2.0..2.0),
            sd: rng.random_range(0.5..2.0),
        },
        1 => ParametricDensity::Gamma {
            mean: rng.random_range(0.5..3.0),
            sd: rng.random_range(0.5..2.0),
        },
        2 => ParametricDensity::SkewNormal {
            xi: rng.random_range(-1.0..1.0),
            omega: rng.random_range(0.5..2.0),
            alpha: rng.random_range(-4.0..4.0),
        },
        _ => ParametricDensity::StudentT {
            mu: rng.random_range(-1.0..1.0),
            sigma: rng.random_range(0.5..2.0),
            nu: rng.random_range(1.5..10.0),
        },
    }
}

/// A random model with either parametric or spline emissions on (0, 5).
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, spline: bool) -> HmmModel {
    let transition = TransitionModel::from_gamma(&random_gamma(rng, n), DeltaMode::Fixed(random_delta(rng, n))).unwrap();
    let emission = if spline {
        let basis = SplineBasis::new((0.0, 5.0), rng.random_range(5..12)).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let beta = (0..n)
            .map(|_| (0..basis.len()).map(|_| normal.sample(rng)).collect())
            .collect();
        Emission::Spline(SplineEmission::new(basis, beta).unwrap())
    } else {
        Emission::Parametric(ParametricEmission::new((0..n).map(|_| random_parametric(rng)).collect()).unwrap())
    };
    HmmModel::new(transition, emission).unwrap()
}

/// Positive observations that lie inside the spline range used above.
pub fn random_observations(rng: &mut ChaCha8Rng, t: usize) -> Vec<f64> {
    (0..t).map(|_| rng.random_range(0.2..4.8)).collect()
}

/// Spline coefficients matching normal targets, for building start models.
pub fn normal_betas(basis: &SplineBasis, targets: &[(f64, f64)]) -> Vec<Vec<f64>> {
    targets
        .iter()
        .map(|&(m, s)| init_from_target(basis, TargetFamily::Normal, m, s).unwrap())
        .collect()
}
