//! The doubly penalized log-likelihood over a flat parameter vector.
//!
//! Layout of `theta`: the `N (N - 1)` transition logits (row-major), then
//! each state's emission parameters in turn: `beta_1 .. beta_{K-1}` for
//! spline states (`beta_K` is pinned to zero) or the family's unconstrained
//! parameters for parametric states.

use nalgebra::DMatrix;

use crate::constraints::{self, smoothed_penalty_from_differences};
use crate::emissions::{softmax, Emission, Family, ParametricDensity, ParametricEmission, SplineEmission};
use crate::error::Result;
use crate::hmm::{self, gamma_from_eta, offdiag_col, DeltaMode, HmmModel, TransitionModel};
use crate::splines::{BasisRow, PenaltyMatrix, SplineBasis, second_diff_penalty};

#[derive(Debug, Clone)]
pub(crate) enum Layout {
    Spline {
        basis: SplineBasis,
        design: Vec<BasisRow>,
        penalty: PenaltyMatrix,
    },
    Parametric {
        families: Vec<Family>,
    },
}

/// Objective value split into its parts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Components {
    pub loglik: f64,
    /// `sum_i lambda_i beta_i' S beta_i`.
    pub smoothness: f64,
    /// `sum_i P~_i` (without the kappa weight).
    pub smoothed_unimodality: f64,
    /// `sum_i P_i`, the unsmoothed constraint violation.
    pub exact_unimodality: f64,
}

impl Components {
    pub fn penalized(&self, kappa: f64) -> f64 {
        self.loglik - self.smoothness - kappa * self.smoothed_unimodality
    }
}

#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub x: &'a [f64],
    pub n: usize,
    pub delta_mode: DeltaMode,
    pub(crate) layout: Layout,
    pub lambda: Vec<f64>,
    pub kappa: f64,
    pub rho: f64,
    /// Per-state 1-based coefficient modes; `None` = unconstrained.
    pub modes: Vec<Option<usize>>,
}

impl<'a> Problem<'a> {
    pub fn spline(x: &'a [f64], n: usize, basis: SplineBasis, delta_mode: DeltaMode) -> Result<Self> {
        let design = basis.design(x);
        let penalty = second_diff_penalty(basis.len())?;
        Ok(Problem {
            x,
            n,
            delta_mode,
            layout: Layout::Spline {
                basis,
                design,
                penalty,
            },
            lambda: vec![0.0; n],
            kappa: 0.0,
            rho: constraints::DEFAULT_RHO,
            modes: vec![None; n],
        })
    }

    pub fn parametric(x: &'a [f64], families: Vec<Family>, delta_mode: DeltaMode) -> Self {
        let n = families.len();
        Problem {
            x,
            n,
            delta_mode,
            layout: Layout::Parametric { families },
            lambda: vec![0.0; n],
            kappa: 0.0,
            rho: constraints::DEFAULT_RHO,
            modes: vec![None; n],
        }
    }

    pub fn n_eta(&self) -> usize {
        self.n * (self.n - 1)
    }

    /// Offset and length of state `i`'s emission block in `theta`.
    pub fn block(&self, i: usize) -> (usize, usize) {
        match &self.layout {
            Layout::Spline { basis, .. } => {
                let len = basis.len() - 1;
                (self.n_eta() + i * len, len)
            }
            Layout::Parametric { families } => {
                let start = self.n_eta()
                    + families[..i]
                        .iter()
                        .map(|f| ParametricDensity::n_params(*f))
                        .sum::<usize>();
                (start, ParametricDensity::n_params(families[i]))
            }
        }
    }

    pub fn dim(&self) -> usize {
        let (start, len) = self.block(self.n - 1);
        start + len
    }

    pub fn basis(&self) -> Option<&SplineBasis> {
        match &self.layout {
            Layout::Spline { basis, .. } => Some(basis),
            Layout::Parametric { .. } => None,
        }
    }

    pub fn penalty(&self) -> Option<&PenaltyMatrix> {
        match &self.layout {
            Layout::Spline { penalty, .. } => Some(penalty),
            Layout::Parametric { .. } => None,
        }
    }

    /// Full coefficient vector (with the pinned zero) of spline state `i`.
    pub fn beta(&self, theta: &[f64], i: usize) -> Vec<f64> {
        let (start, len) = self.block(i);
        let mut b = theta[start..start + len].to_vec();
        b.push(0.0);
        b
    }

    pub fn pack(&self, model: &HmmModel) -> Vec<f64> {
        let mut theta = model.transition.eta.clone();
        match &model.emission {
            Emission::Spline(e) => {
                for row in &e.beta {
                    let last = row[row.len() - 1];
                    theta.extend(row[..row.len() - 1].iter().map(|b| b - last));
                }
            }
            Emission::Parametric(e) => {
                for d in &e.states {
                    theta.extend(d.unconstrained());
                }
            }
        }
        theta
    }

    pub fn unpack(&self, theta: &[f64]) -> HmmModel {
        let transition = TransitionModel {
            n: self.n,
            eta: theta[..self.n_eta()].to_vec(),
            delta_mode: self.delta_mode.clone(),
        };
        let emission = match &self.layout {
            Layout::Spline { basis, .. } => Emission::Spline(SplineEmission {
                basis: basis.clone(),
                beta: (0..self.n).map(|i| self.beta(theta, i)).collect(),
            }),
            Layout::Parametric { families } => Emission::Parametric(ParametricEmission {
                states: families
                    .iter()
                    .enumerate()
                    .map(|(i, f)| {
                        let (start, len) = self.block(i);
                        ParametricDensity::from_unconstrained(*f, &theta[start..start + len])
                    })
                    .collect(),
            }),
        };
        HmmModel { transition, emission }
    }

    fn delta(&self, gamma: &[f64]) -> (Vec<f64>, bool) {
        match &self.delta_mode {
            DeltaMode::Fixed(d) => (d.clone(), false),
            DeltaMode::Stationary => {
                let g = DMatrix::from_row_slice(self.n, self.n, gamma);
                match hmm::try_stationary(&g) {
                    Some(d) => (d, true),
                    None => (vec![1.0 / self.n as f64; self.n], false),
                }
            }
        }
    }

    /// Penalty parts for the current parameters.
    fn penalties(&self, theta: &[f64], grad: Option<&mut [f64]>) -> (f64, f64, f64) {
        let Layout::Spline { basis, penalty, .. } = &self.layout else {
            return (0.0, 0.0, 0.0);
        };
        let mut smooth = 0.0;
        let mut smoothed_uni = 0.0;
        let mut exact_uni = 0.0;
        let mut grad = grad;
        for i in 0..self.n {
            let beta = self.beta(theta, i);
            let (start, len) = self.block(i);
            if self.lambda[i] != 0.0 {
                smooth += self.lambda[i] * penalty.quad_form(&beta);
                if let Some(g) = grad.as_deref_mut() {
                    let sb = penalty.apply(&beta);
                    for j in 0..len {
                        g[start + j] -= 2.0 * self.lambda[i] * sb[j];
                    }
                }
            }
            if let Some(m) = self.modes[i] {
                let y = constraints::apply_constraint(&constraints::tilde_beta(&beta, basis), m);
                let (p, pg) = smoothed_penalty_from_differences(&y, m, self.rho, beta.len());
                smoothed_uni += p;
                exact_uni += y.iter().map(|&v| (-v).max(0.0)).sum::<f64>();
                if let Some(g) = grad.as_deref_mut() {
                    if self.kappa != 0.0 {
                        for j in 0..len {
                            g[start + j] -= self.kappa * pg[j];
                        }
                    }
                }
            }
        }
        (smooth, smoothed_uni, exact_uni)
    }

    /// Row-major densities and, when requested, per-entry derivatives of the
    /// parametric densities with respect to their parameters.
    fn densities(&self, theta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let t_len = self.x.len();
        let n = self.n;
        let mut dens = vec![0.0; t_len * n];
        let mut alphas = Vec::new();
        match &self.layout {
            Layout::Spline { design, .. } => {
                for i in 0..n {
                    alphas.push(softmax(&self.beta(theta, i)));
                }
                for (t, row) in design.iter().enumerate() {
                    for (i, alpha) in alphas.iter().enumerate() {
                        dens[t * n + i] = row.iter().map(|(k, v)| alpha[k] * v).sum();
                    }
                }
            }
            Layout::Parametric { .. } => {
                let model = self.unpack(theta);
                let Emission::Parametric(e) = &model.emission else {
                    unreachable!()
                };
                for (t, &xt) in self.x.iter().enumerate() {
                    for (i, d) in e.states.iter().enumerate() {
                        dens[t * n + i] = d.pdf(xt);
                    }
                }
            }
        }
        (dens, alphas)
    }

    pub fn components(&self, theta: &[f64]) -> Components {
        let gamma = gamma_from_eta(self.n, &theta[..self.n_eta()]);
        let (delta, _) = self.delta(&gamma);
        let (dens, _) = self.densities(theta);
        let loglik = match hmm::forward(&delta, &gamma, &dens, self.n) {
            Ok((ll, _, _)) => ll,
            Err(_) => f64::NEG_INFINITY,
        };
        let (smoothness, smoothed_unimodality, exact_unimodality) = self.penalties(theta, None);
        Components {
            loglik,
            smoothness,
            smoothed_unimodality,
            exact_unimodality,
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.components(theta).penalized(self.kappa)
    }

    /// Penalized log-likelihood and its gradient; `None` when the
    /// likelihood is zero.
    pub fn value_grad(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let n = self.n;
        let n_eta = self.n_eta();
        let gamma = gamma_from_eta(n, &theta[..n_eta]);
        let (delta, stationary) = self.delta(&gamma);
        let (dens, alphas) = self.densities(theta);
        let lg = hmm::loglik_grad(&delta, &gamma, &dens, n).ok()?;
        let mut grad = vec![0.0; theta.len()];

        // Transition logits, including the path through the stationary
        // initial distribution: d delta = delta dGamma A^{-1},
        // A = I - Gamma + 1 1'.
        let mut d_gamma = lg.d_gamma.clone();
        if stationary && n > 1 {
            let a = DMatrix::from_fn(n, n, |i, j| {
                f64::from(u8::from(i == j)) - gamma[i * n + j] + 1.0
            });
            if let Some(inv) = a.try_inverse() {
                let w = inv * nalgebra::DVector::from_column_slice(&lg.d_delta);
                for i in 0..n {
                    for j in 0..n {
                        d_gamma[i * n + j] += delta[i] * w[j];
                    }
                }
            }
        }
        for i in 0..n {
            let row_dot: f64 = (0..n).map(|l| d_gamma[i * n + l] * gamma[i * n + l]).sum();
            for slot in 0..n - 1 {
                let j = offdiag_col(i, slot);
                grad[i * (n - 1) + slot] = gamma[i * n + j] * (d_gamma[i * n + j] - row_dot);
            }
        }

        match &self.layout {
            Layout::Spline { design, basis, .. } => {
                let k = basis.len();
                let mut acc = vec![0.0; n * k];
                for (t, row) in design.iter().enumerate() {
                    for i in 0..n {
                        let w = lg.d_dens[t * n + i];
                        if w == 0.0 {
                            continue;
                        }
                        for (kk, v) in row.iter() {
                            acc[i * k + kk] += w * v;
                        }
                    }
                }
                for i in 0..n {
                    let alpha = &alphas[i];
                    let total: f64 = (0..k).map(|kk| alpha[kk] * acc[i * k + kk]).sum();
                    let (start, len) = self.block(i);
                    for kk in 0..len {
                        grad[start + kk] = alpha[kk] * (acc[i * k + kk] - total);
                    }
                }
            }
            Layout::Parametric { .. } => {
                let model = self.unpack(theta);
                let Emission::Parametric(e) = &model.emission else {
                    unreachable!()
                };
                let mut buf = [0.0; 3];
                for i in 0..n {
                    let (start, len) = self.block(i);
                    for (t, &xt) in self.x.iter().enumerate() {
                        let p = dens[t * n + i];
                        let w = lg.d_dens[t * n + i] * p;
                        if w == 0.0 {
                            continue;
                        }
                        e.states[i].ln_pdf_grad(xt, &mut buf[..len]);
                        for j in 0..len {
                            grad[start + j] += w * buf[j];
                        }
                    }
                }
            }
        }

        let (smooth, smoothed_uni, _) = self.penalties(theta, Some(&mut grad));
        let value = lg.loglik - smooth - self.kappa * smoothed_uni;
        value.is_finite().then_some((value, grad))
    }

    /// Negative Hessian of the penalized objective by central differences
    /// of the analytic gradient, symmetrized.
    pub fn neg_hessian(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let d = theta.len();
        let mut h = DMatrix::zeros(d, d);
        let mut probe = theta.to_vec();
        for j in 0..d {
            let step = 1e-5 * theta[j].abs().max(1.0);
            probe[j] = theta[j] + step;
            let (_, gp) = self.value_grad(&probe)?;
            probe[j] = theta[j] - step;
            let (_, gm) = self.value_grad(&probe)?;
            probe[j] = theta[j];
            for i in 0..d {
                h[(i, j)] = -(gp[i] - gm[i]) / (2.0 * step);
            }
        }
        Some(0.5 * (&h + h.transpose()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emissions::init_from_target;
    use crate::emissions::TargetFamily;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_check(problem: &Problem, theta: &[f64]) {
        let (_, g) = problem.value_grad(theta).unwrap();
        for j in 0..theta.len() {
            let mut up = theta.to_vec();
            up[j] += 1e-6;
            let mut dn = theta.to_vec();
            dn[j] -= 1e-6;
            let fd = (problem.value(&up) - problem.value(&dn)) / 2e-6;
            let scale = fd.abs().max(g[j].abs()).max(1e-2);
            assert!((fd - g[j]).abs() / scale < 1e-5, "j={j}: fd={fd} analytic={}", g[j]);
        }
    }

    #[test]
    fn spline_gradient_with_penalties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..10.0)).collect();
        let basis = SplineBasis::new((0.0, 10.0), 9).unwrap();
        let mut p = Problem::spline(&x, 3, basis, DeltaMode::Stationary).unwrap();
        p.lambda = vec![0.3, 1.2, 0.05];
        p.kappa = 5.0;
        p.modes = vec![Some(1), None, Some(6)];
        let theta: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        fd_check(&p, &theta);
    }

    #[test]
    fn parametric_gradient_mixed_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..6.0)).collect();
        let p = Problem::parametric(
            &x,
            vec![Family::SkewNormal, Family::StudentT],
            DeltaMode::Fixed(vec![0.5, 0.5]),
        );
        let theta = vec![-1.5, -2.0, 0.1, 0.2, 3.0, 3.1, 0.1, 1.0];
        fd_check(&p, &theta);
    }

    #[test]
    fn zero_penalties_equal_loglik() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..40).map(|_| rng.random_range(1.0..4.0)).collect();
        let basis = SplineBasis::new((1.0, 4.0), 8).unwrap();
        let p = Problem::spline(&x, 2, basis.clone(), DeltaMode::Stationary).unwrap();
        let mut theta = vec![-2.0, -1.5];
        for mean in [1.8, 3.2] {
            let b = init_from_target(&basis, TargetFamily::Normal, mean, 0.5).unwrap();
            theta.extend(&b[..7]);
        }
        let model = p.unpack(&theta);
        let ll = hmm::log_likelihood(&model, &x).unwrap();
        assert!((p.value(&theta) - ll).abs() < 1e-10);
        assert_eq!(p.pack(&model), theta);
    }

    #[test]
    fn affine_coefficients_cost_nothing() {
        let x = [0.5, 1.5, 2.5];
        let basis = SplineBasis::new((0.0, 3.0), 6).unwrap();
        let mut p = Problem::spline(&x, 1, basis, DeltaMode::Stationary).unwrap();
        p.lambda = vec![1e3];
        let theta: Vec<f64> = (0..5).map(|k| 0.4 * (k as f64 - 5.0)).collect();
        let c = p.components(&theta);
        assert!(c.smoothness.abs() < 1e-20);
    }
}
