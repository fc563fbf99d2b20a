//! Transition model, scaled forward/backward recursions, local and global
//! decoding.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::emissions::Emission;
use crate::error::{Error, Result};

/// How the initial distribution is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// Stationary distribution of the transition matrix.
    Stationary,
    Fixed(Vec<f64>),
}

/// Transition probabilities parameterized row-wise by a multinomial logit
/// with the diagonal as reference category: `eta[i][j']` is the logit of the
/// `j'`-th off-diagonal entry of row `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionModel {
    pub n: usize,
    /// Row-major `n x (n - 1)`.
    pub eta: Vec<f64>,
    pub delta_mode: DeltaMode,
}

/// Column index in the full matrix of off-diagonal slot `slot` in row `i`.
#[inline]
pub(crate) fn offdiag_col(i: usize, slot: usize) -> usize {
    if slot < i {
        slot
    } else {
        slot + 1
    }
}

impl TransitionModel {
    /// Parameterizes a given transition matrix. Diagonal entries must be
    /// positive; zero off-diagonal entries map to `eta = -inf`.
    pub fn from_gamma(gamma: &DMatrix<f64>, delta_mode: DeltaMode) -> Result<Self> {
        let n = gamma.nrows();
        if n == 0 || gamma.ncols() != n {
            return Err(Error::invalid("transition matrix must be square and non-empty"));
        }
        for i in 0..n {
            let row_sum: f64 = (0..n).map(|j| gamma[(i, j)]).sum();
            if (row_sum - 1.0).abs() > 1e-8 
                || !(gamma[(i, i)] > 0.0)
                || (0..n).any(|j| !(gamma[(i, j)] >= 0.0))
            {
                return Err(Error::invalid(format!(
                    "row {i} of the transition matrix must be nonnegative with a positive diagonal and sum to 1"
                )));
            }
        }
        let mut eta = Vec::with_capacity(n * (n - 1));
        for i in 0..n {
            for slot in 0..n - 1 {
                eta.push((gamma[(i, offdiag_col(i, slot))] / gamma[(i, i)]).ln());
            }
        }
        let tm = TransitionModel { n, eta, delta_mode };
        tm.validate_delta()?;
        Ok(tm)
    }

    /// Matrix with `diag` on the diagonal and the remainder spread evenly.
    pub fn persistent(n: usize, diag: f64, delta_mode: DeltaMode) -> Result<Self> {
        if n == 1 {
            return Self::from_gamma(&DMatrix::from_element(1, 1, 1.0), delta_mode);
        }
        if !(diag > 0.0 && diag < 1.0) {
            return Err(Error::invalid("diagonal probability must lie in (0, 1)"));
        }
        let off = (1.0 - diag) / (n - 1) as f64;
        let gamma = DMatrix::from_fn(n, n, |i, j| if i == j { diag } else { off });
        Self::from_gamma(&gamma, delta_mode)
    }

    fn validate_delta(&self) -> Result<()> {
        if let DeltaMode::Fixed(d) = &self.delta_mode {
            let s: f64 = d.iter().sum();
            if d.len() != self.n || d.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > 1e-8 {
                return Err(Error::invalid("fixed initial distribution must be a probability vector"));
            }
        }
        Ok(())
    }

    pub fn gamma(&self) -> DMatrix<f64> {
        let flat = gamma_from_eta(self.n, &self.eta);
        DMatrix::from_row_slice(self.n, self.n, &flat)
    }

    pub fn delta(&self) -> Vec<f64> {
        match &self.delta_mode {
            DeltaMode::Fixed(d) => d.clone(),
            DeltaMode::Stationary => stationary_distribution(&self.gamma()),
        }
    }
}

/// Row-major transition matrix from the logit parameters.
pub(crate) fn gamma_from_eta(n: usize, eta: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        let row_eta = &eta[i * (n - 1)..(i + 1) * (n - 1)];
        let max = row_eta.iter().cloned().fold(0.0_f64, f64::max);
        let mut total = (-max).exp();
        g[i * n + i] = total;
        for (slot, &e) in row_eta.iter().enumerate() {
            let v = (e - max).exp();
            g[i * n + offdiag_col(i, slot)] = v;
            total += v;
        }
        for j in 0..n {
            g[i * n + j] /= total;
        }
    }
    g
}

/// Solves `delta (Gamma - I) = 0`, `sum(delta) = 1` by replacing the last
/// balance equation with the normalization. Returns `None` when the system
/// is singular (reducible chain).
pub(crate) fn try_stationary(gamma: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = gamma.nrows();
    if n == 1 {
        return Some(vec![1.0]);
    }
    let mut a = (gamma - DMatrix::identity(n, n)).transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let lu = a.lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() < 1e-12 {
        return None;
    }
    let sol = lu.solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite() || *v < -1e-10) {
        return None;
    }
    Some(sol.iter().map(|v| v.max(0.0)).collect())
}

/// Stationary distribution of a row-stochastic matrix; falls back to the
/// uniform distribution (with a warning) for reducible chains.
pub fn stationary_distribution(gamma: &DMatrix<f64>) -> Vec<f64> {
    match try_stationary(gamma) {
        Some(d) => d,
        None => {
            log::warn!("transition matrix is reducible; using a uniform initial distribution");
            vec![1.0 / gamma.nrows() as f64; gamma.nrows()]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmmModel {
    pub transition: TransitionModel,
    pub emission: Emission,
}

impl HmmModel {
    pub fn new(transition: TransitionModel, emission: Emission) -> Result<Self> {
        if transition.n != emission.n_states() {
            return Err(Error::invalid(format!(
                "transition model has {} states but emission has {}",
                transition.n,
                emission.n_states()
            )));
        }
        Ok(HmmModel { transition, emission })
    }

    pub fn n_states(&self) -> usize {
        self.transition.n
    }

    /// Row-major `T x N` densities.
    pub(crate) fn dens_rows(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.emission.density_matrix(x)?;
        Ok(to_row_major(&m))
    }
}

pub(crate) fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// Scaled forward pass: returns `(log L, a, c)` with `a` the row-major
/// normalized forward vectors and `c` the per-step scale factors, or the
/// first time index at which every state has zero density.
pub(crate) fn forward(
    delta: &[f64],
    gamma: &[f64],
    dens: &[f64],
    n: usize,
) -> std::result::Result<(f64, Vec<f64>, Vec<f64>), usize> {
    let t_len = dens.len() / n;
    let mut a = vec![0.0; t_len * n];
    let mut c = vec![0.0; t_len];
    let mut ll = 0.0;
    for t in 0..t_len {
        let p = &dens[t * n..(t + 1) * n];
        let mut total = 0.0;
        for j in 0..n {
            let pred = if t == 0 {
                delta[j]
            } else {
                let prev = &a[(t - 1) * n..t * n];
                (0..n).map(|i| prev[i] * gamma[i * n + j]).sum()
            };
            let v = pred * p[j];
            a[t * n + j] = v;
            total += v;
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(t);
        }
        for j in 0..n {
            a[t * n + j] /= total;
        }
        c[t] = total;
        ll += total.ln();
    }
    Ok((ll, a, c))
}

/// Scaled backward pass matching [`forward`]: `sum_i a_t(i) b_t(i) = 1`.
pub(crate) fn backward(gamma: &[f64], dens: &[f64], c: &[f64], n: usize) -> Vec<f64> {
    let t_len = c.len();
    let mut b = vec![0.0; t_len * n];
    for j in 0..n {
        b[(t_len - 1) * n + j] = 1.0;
    }
    let mut tmp = vec![0.0; n];
    for t in (0..t_len - 1).rev() {
        for j in 0..n {
            tmp[j] = dens[(t + 1) * n + j] * b[(t + 1) * n + j];
        }
        for i in 0..n {
            let s: f64 = (0..n).map(|j| gamma[i * n + j] * tmp[j]).sum();
            b[t * n + i] = s / c[t + 1];
        }
    }
    b
}

/// Log-likelihood with partial derivatives with respect to the initial
/// distribution, the transition matrix (row-major) and every density value.
pub(crate) struct LoglikGrad {
    pub loglik: f64,
    pub d_delta: Vec<f64>,
    pub d_gamma: Vec<f64>,
    pub d_dens: Vec<f64>,
}

pub(crate) fn loglik_grad(
    delta: &[f64],
    gamma: &[f64],
    dens: &[f64],
    n: usize,
) -> std::result::Result<LoglikGrad, usize> {
    let (ll, a, c) = forward(delta, gamma, dens, n)?;
    let b = backward(gamma, dens, &c, n);
    let t_len = c.len();
    let mut d_delta = vec![0.0; n];
    let mut d_gamma = vec![0.0; n * n];
    let mut d_dens = vec![0.0; t_len * n];
    for i in 0..n {
        d_delta[i] = dens[i] * b[i] / c[0];
        d_dens[i] = delta[i] * b[i] / c[0];
    }
    let mut pred = vec![0.0; n];
    for t in 1..t_len {
        let prev = &a[(t - 1) * n..t * n];
        for j in 0..n {
            pred[j] = (0..n).map(|i| prev[i] * gamma[i * n + j]).sum();
        }
        for j in 0..n {
            let w = b[t * n + j] / c[t];
            d_dens[t * n + j] = pred[j] * w;
            let pw = dens[t * n + j] * w;
            for i in 0..n {
                d_gamma[i * n + j] += prev[i] * pw;
            }
        }
    }
    Ok(LoglikGrad {
        loglik: ll,
        d_delta,
        d_gamma,
        d_dens,
    })
}

fn gamma_rows(model: &HmmModel) -> Vec<f64> {
    gamma_from_eta(model.transition.n, &model.transition.eta)
}

/// Log-likelihood by the scaled forward recursion. Returns `-inf` (with a
/// warning naming the time index) when some observation has zero density
/// under every state.
pub fn log_likelihood(model: &HmmModel, x: &[f64]) -> Result<f64> {
    let dens = model.dens_rows(x)?;
    let delta = model.transition.delta();
    match forward(&delta, &gamma_rows(model), &dens, model.n_states()) {
        Ok((ll, _, _)) => Ok(ll),
        Err(t) => {
            log::warn!("observation {t} has zero density under every state");
            Ok(f64::NEG_INFINITY)
        }
    }
}

fn zero_density_error(t: usize) -> Error {
    Error::InvalidData {
        index: t,
        reason: "observation has zero density under every state".into(),
    }
}

/// Posterior state probabilities `Pr(S_t = j | x_1..x_T)` as a `T x N` matrix.
pub fn local_state_probs(model: &HmmModel, x: &[f64]) -> Result<DMatrix<f64>> {
    let n = model.n_states();
    let dens = model.dens_rows(x)?;
    let gamma = gamma_rows(model);
    let delta = model.transition.delta();
    let (_, a, c) = forward(&delta, &gamma, &dens, n).map_err(zero_density_error)?;
    let b = backward(&gamma, &dens, &c, n);
    let t_len = x.len();
    let mut out = DMatrix::zeros(t_len, n);
    for t in 0..t_len {
        let total: f64 = (0..n).map(|j| a[t * n + j] * b[t * n + j]).sum();
        for j in 0..n {
            out[(t, j)] = a[t * n + j] * b[t * n + j] / total;
        }
    }
    Ok(out)
}

/// Most probable state path (0-based states); ties go to the lower index.
pub fn viterbi(model: &HmmModel, x: &[f64]) -> Result<Vec<usize>> {
    let n = model.n_states();
    let t_len = x.len();
    if t_len == 0 {
        return Ok(Vec::new());
    }
    let dens = model.dens_rows(x)?;
    let log_gamma: Vec<f64> = gamma_rows(model).iter().map(|g| g.ln()).collect();
    let delta = model.transition.delta();
    let mut score: Vec<f64> = (0..n).map(|j| delta[j].ln() + dens[j].ln()).collect();
    if score.iter().all(|s| *s == f64::NEG_INFINITY) {
        return Err(zero_density_error(0));
    }
    let mut back = vec![0usize; t_len * n];
    let mut next = vec![0.0; n];
    for t in 1..t_len {
        for j in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..n {
                let s = score[i] + log_gamma[i * n + j];
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            back[t * n + j] = arg;
            next[j] = best + dens[t * n + j].ln();
        }
        if next.iter().all(|s| *s == f64::NEG_INFINITY) {
            return Err(zero_density_error(t));
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut state = 0;
    for j in 1..n {
        if score[j] > score[state] {
            state = j;
        }
    }
    let mut path = vec![0; t_len];
    path[t_len - 1] = state;
    for t in (1..t_len).rev() {
        state = back[t * n + state];
        path[t - 1] = state;
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emissions::{ParametricDensity, ParametricEmission};
    use approx::assert_relative_eq;

    fn normal_model(gamma: DMatrix<f64>, delta: DeltaMode, means: &[f64], sd: f64) -> HmmModel {
        let tm = TransitionModel::from_gamma(&gamma, delta).unwrap();
        let states = means
            .iter()
            .map(|&mean| ParametricDensity::Normal { mean, sd })
            .collect();
        HmmModel::new(tm, Emission::Parametric(ParametricEmission::new(states).unwrap())).unwrap()
    }

    #[test]
    fn stationary_examples() {
        let g = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let d = stationary_distribution(&g);
        assert_relative_eq!(d[0], 0.5, epsilon = 1e-14);
        let g = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.25, 0.75]);
        let d = stationary_distribution(&g);
        // Oracle: 0.5 d1 = 0.25 d2 and d1 + d2 = 1.
        assert_relative_eq!(d[0], 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(d[1], 2.0 / 3.0, epsilon = 1e-14);
        let d = stationary_distribution(&DMatrix::identity(3, 3));
        assert_eq!(d, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn eta_round_trip() {
        let g = DMatrix::from_row_slice(3, 3, &[0.8, 0.15, 0.05, 0.1, 0.7, 0.2, 0.3, 0.3, 0.4]);
        let tm = TransitionModel::from_gamma(&g, DeltaMode::Stationary).unwrap();
        assert_relative_eq!(tm.gamma(), g, epsilon = 1e-14);
        let bad = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.9]);
        assert!(TransitionModel::from_gamma(&bad, DeltaMode::Stationary).is_err());
    }

    #[test]
    fn single_state_is_iid() {
        let m = normal_model(DMatrix::from_element(1, 1, 1.0), DeltaMode::Stationary, &[1.0], 2.0);
        let x = [0.3, 1.7, -2.0, 4.1];
        let d = ParametricDensity::Normal { mean: 1.0, sd: 2.0 };
        let expect: f64 = x.iter().map(|&v| d.ln_pdf(v)).sum();
        assert_relative_eq!(log_likelihood(&m, &x).unwrap(), expect, epsilon = 1e-12);
        let p = local_state_probs(&m, &x).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert_eq!(viterbi(&m, &x).unwrap(), vec![0; 4]);
    }

    #[test]
    fn absorbing_start() {
        // Gamma = I cannot be parameterized with positive entries; use a
        // near-identity matrix and fixed delta to emulate it.
        let eps = 1e-300;
        let g = DMatrix::from_row_slice(2, 2, &[1.0 - eps, eps, eps, 1.0 - eps]);
        let m = normal_model(g, DeltaMode::Fixed(vec![1.0, 0.0]), &[0.0, 3.0], 1.0);
        let x = [0.1, 2.5, -0.4];
        let d = ParametricDensity::Normal { mean: 0.0, sd: 1.0 };
        let expect: f64 = x.iter().map(|&v| d.ln_pdf(v)).sum();
        assert_relative_eq!(log_likelihood(&m, &x).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_model_gives_uniform_posteriors() {
        let g = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.3, 0.7]);
        let m = normal_model(g, DeltaMode::Fixed(vec![0.5, 0.5]), &[1.0, 1.0], 1.0);
        let p = local_state_probs(&m, &[0.0, 2.0, 1.0, -1.0]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.5).abs() < 1e-14));
    }

    #[test]
    fn separated_emissions_viterbi_thresholds() {
        let g = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let m = normal_model(g, DeltaMode::Stationary, &[-100.0, 100.0], 1.0);
        let x = [-99.0, -101.0, 100.5, 99.0, -100.2, 101.0];
        let path = viterbi(&m, &x).unwrap();
        let expect: Vec<usize> = x.iter().map(|&v| usize::from(v > 0.0)).collect();
        assert_eq!(path, expect);
    }

    #[test]
    fn zero_density_is_reported() {
        let tm = TransitionModel::persistent(2, 0.9, DeltaMode::Stationary).unwrap();
        let e = Emission::Parametric(
            ParametricEmission::new(vec![
                ParametricDensity::Gamma { mean: 1.0, sd: 1.0 },
                ParametricDensity::Gamma { mean: 5.0, sd: 1.0 },
            ])
            .unwrap(),
        );
        let m = HmmModel::new(tm, e).unwrap();
        assert_eq!(log_likelihood(&m, &[1.0, -1.0, 2.0]).unwrap(), f64::NEG_INFINITY);
        match local_state_probs(&m, &[1.0, -1.0]) {
            Err(Error::InvalidData { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(viterbi(&m, &[1.0, 2.0, -3.0]).is_err());
    }

    #[test]
    fn mismatched_state_counts_rejected() {
        let tm = TransitionModel::persistent(3, 0.9, DeltaMode::Stationary).unwrap();
        let e = Emission::Parametric(
            ParametricEmission::new(vec![ParametricDensity::Normal { mean: 0.0, sd: 1.0 }]).unwrap(),
        );
        assert!(HmmModel::new(tm, e).is_err());
    }
}
