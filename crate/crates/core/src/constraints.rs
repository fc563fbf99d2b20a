//! Unimodality of the B-spline coefficient sequence, enforced through a
//! smooth penalty on violated first differences.
//!
//! Coefficient modes `m` are 1-based throughout: `m = 1` is a monotone
//! decreasing sequence and `m = K` a monotone increasing one.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splines::SplineBasis;

pub const DEFAULT_RHO: f64 = 20.0;
pub const DEFAULT_KAPPA: f64 = 1e4;

/// Per-state mode indices (`None` leaves a state unconstrained) together with
/// the softplus sharpness `rho` and the penalty weight `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnimodalPenaltySpec {
    pub modes: Vec<Option<usize>>,
    pub rho: f64,
    pub kappa: f64,
}

impl UnimodalPenaltySpec {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::invalid(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::invalid(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        for m in self.modes.iter().flatten() {
            check_mode(k, *m)?;
        }
        Ok(())
    }
}

fn check_mode(k: usize, m: usize) -> Result<()> {
    if m == 0 || m > k {
        return Err(Error::invalid(format!("mode index {m} outside 1..={k}")));
    }
    Ok(())
}

/// `(K-1) x K` matrix whose rows are nonnegative exactly when the sequence
/// is nondecreasing up to index `m` and nonincreasing after it.
pub fn constraint_matrix(k: usize, m: usize) -> Result<DMatrix<f64>> {
    if k < 2 {
        return Err(Error::invalid("constraint matrix needs K >= 2"));
    }
    check_mode(k, m)?;
    let mut c = DMatrix::zeros(k - 1, k);
    for r in 0..k - 1 {
        if r + 1 < m {
            c[(r, r)] = -1.0;
            c[(r, r + 1)] = 1.0;
        } else {
            c[(r, r)] = 1.0;
            c[(r, r + 1)] = -1.0;
        }
    }
    Ok(c)
}

/// `C_m v` without forming the matrix.
pub fn apply_constraint(v: &[f64], m: usize) -> Vec<f64> {
    (0..v.len().saturating_sub(1))
        .map(|r| {
            if r + 1 < m {
                v[r + 1] - v[r]
            } else {
                v[r] - v[r + 1]
            }
        })
        .collect()
}

/// Coefficients of the unnormalized B-splines on the log-ratio scale:
/// `beta~_k = beta_k + log(nu_k / nu_K)`.
pub fn tilde_beta(beta: &[f64], basis: &SplineBasis) -> Vec<f64> {
    let nu = basis.nu();
    let last = nu[nu.len() - 1];
    beta.iter().zip(nu).map(|(b, n)| b + (n / last).ln()).collect()
}

/// Inverse of [`tilde_beta`], re-pinned so that the last entry is zero.
pub fn beta_from_tilde(tilde: &[f64], basis: &SplineBasis) -> Vec<f64> {
    let nu = basis.nu();
    let last = nu[nu.len() - 1];
    let mut beta: Vec<f64> = tilde.iter().zip(nu).map(|(b, n)| b - (n / last).ln()).collect();
    let pin = beta[beta.len() - 1];
    beta.iter_mut().for_each(|b| *b -= pin);
    beta
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Smoothed penalty `sum_r softplus(-rho (C_m beta~)_r) / rho` and its
/// gradient with respect to `beta`.
pub fn unimodality_penalty(
    beta: &[f64],
    basis: &SplineBasis,
    m: usize,
    rho: f64,
) -> Result<(f64, Vec<f64>)> {
    if beta.len() != basis.len() {
        return Err(Error::invalid("coefficient length does not match basis"));
    }
    check_mode(beta.len(), m)?;
    if !(rho > 0.0) {
        return Err(Error::invalid("rho must be positive"));
    }
    let y = apply_constraint(&tilde_beta(beta, basis), m);
    Ok(smoothed_penalty_from_differences(&y, m, rho, beta.len()))
}

/// Penalty and gradient given `y = C_m beta~` (gradient w.r.t. beta of
/// length `k`).
pub(crate) fn smoothed_penalty_from_differences(
    y: &[f64],
    m: usize,
    rho: f64,
    k: usize,
) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; k];
    for (r, &yr) in y.iter().enumerate() {
        value += softplus(-rho * yr) / rho;
        let d = -sigmoid(-rho * yr);
        if r + 1 < m {
            grad[r] -= d;
            grad[r + 1] += d;
        } else {
            grad[r] += d;
            grad[r + 1] -= d;
        }
    }
    (value, grad)
}

/// Unsmoothed penalty `sum_r -min((C_m beta~)_r, 0)`: zero exactly when the
/// coefficient sequence is unimodal at `m`.
pub fn exact_penalty(beta: &[f64], basis: &SplineBasis, m: usize) -> f64 {
    apply_constraint(&tilde_beta(beta, basis), m)
        .iter()
        .map(|&y| (-y).max(0.0))
        .sum()
}

/// Lowers coefficients so that `beta~` is strictly unimodal at `m` with every
/// first difference at least `margin`, keeping the peak value.
pub fn project_unimodal(beta: &[f64], basis: &SplineBasis, m: usize, margin: f64) -> Vec<f64> {
    let mut t = tilde_beta(beta, basis);
    let peak = m - 1;
    for j in (0..peak).rev() {
        t[j] = t[j].min(t[j + 1] - margin);
    }
    for j in peak + 1..t.len() {
        t[j] = t[j].min(t[j - 1] - margin);
    }
    beta_from_tilde(&t, basis)
}

/// 1-based positions of local maxima of a coefficient sequence (plateaus
/// merged; the first index of a plateau is reported).
pub fn coefficient_modes(seq: &[f64]) -> Vec<usize> {
    let mut modes = Vec::new();
    let n = seq.len();
    let mut j = 0;
    while j < n {
        let mut end = j;
        while end + 1 < n && seq[end + 1] == seq[j] {
            end += 1;
        }
        let left = j == 0 || seq[j] > seq[j - 1];
        let right = end + 1 == n || seq[j] > seq[end + 1];
        if left && right {
            modes.push(j + 1);
        }
        j = end + 1;
    }
    modes
}
