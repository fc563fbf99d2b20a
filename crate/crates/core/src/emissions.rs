//! State-dependent densities: softmax-weighted B-spline mixtures and the
//! parametric families used for simulation, comparison fits and
//! initialization targets.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::splines::SplineBasis;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_2: f64 = std::f64::consts::LN_2;
/// Floor applied to target densities before taking logs during initialization.
pub const TARGET_DENSITY_FLOOR: f64 = 1e-300;
/// Initial log coefficients are kept within this many nats of their maximum.
pub const INIT_LOG_RANGE: f64 = 25.0;

pub(crate) fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - 0.5 * LN_2PI).exp()
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `(log Phi(u), phi(u) / Phi(u))`, accurate far into the lower tail.
fn ln_normal_cdf_and_mills(u: f64) -> (f64, f64) {
    if u > -30.0 {
        let cdf = std_normal_cdf(u);
        (cdf.ln(), std_normal_pdf(u) / cdf)
    } else {
        // Asymptotic expansion of the lower tail.
        let v = 1.0 / (u * u);
        let series = 1.0 - v * (1.0 - 3.0 * v * (1.0 - 5.0 * v * (1.0 - 7.0 * v)));
        let ln_pdf = -0.5 * u * u - 0.5 * LN_2PI;
        (ln_pdf - (-u).ln() + series.ln(), -u / series)
    }
}

/// A parametric density family. Variants carry their natural parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParametricDensity {
    Normal { mean: f64, sd: f64 },
    /// Parameterized by mean and standard deviation; shape = mean^2 / sd^2,
    /// scale = sd^2 / mean.
    Gamma { mean: f64, sd: f64 },
    SkewNormal { xi: f64, omega: f64, alpha: f64 },
    /// Location-scale Student t.
    StudentT { mu: f64, sigma: f64, nu: f64 },
}

/// Family tag without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Normal,
    Gamma,
    SkewNormal,
    StudentT,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Family::Normal),
            "gamma" => Ok(Family::Gamma),
            "skew_normal" => Ok(Family::SkewNormal),
            "student_t" | "t" => Ok(Family::StudentT),
            other => Err(Error::invalid(format!("unknown family `{other}`"))),
        }
    }
}

impl ParametricDensity {
    pub fn family(&self) -> Family {
        match self {
            ParametricDensity::Normal { .. } => Family::Normal,
            ParametricDensity::Gamma { .. } => Family::Gamma,
            ParametricDensity::SkewNormal { .. } => Family::SkewNormal,
            ParametricDensity::StudentT { .. } => Family::StudentT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ParametricDensity::Normal { mean, sd } => mean.is_finite() && sd > 0.0,
            ParametricDensity::Gamma { mean, sd } => mean > 0.0 && sd > 0.0,
            ParametricDensity::SkewNormal { xi, omega, alpha } => {
                xi.is_finite() && omega > 0.0 && alpha.is_finite()
            }
            ParametricDensity::StudentT { mu, sigma, nu } => {
                mu.is_finite() && sigma > 0.0 && nu > 0.0
            }
        };
        if ok && self.unconstrained().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid density parameters {self:?}")))
        }
    }

    /// Gamma (shape, scale) for the gamma family.
    pub fn gamma_shape_scale(mean: f64, sd: f64) -> (f64, f64) {
        (mean * mean / (sd * sd), sd * sd / mean)
    }

    pub fn n_params(family: Family) -> usize {
        match family {
            Family::Normal | Family::Gamma => 2,
            Family::SkewNormal | Family::StudentT => 3,
        }
    }

    /// Unconstrained working parameters:
    /// normal (mean, log sd), gamma (log mean, log sd),
    /// skew-normal (xi, log omega, alpha), t (mu, log sigma, log nu).
    pub fn unconstrained(&self) -> Vec<f64> {
        match *self {
            ParametricDensity::Normal { mean, sd } => vec![mean, sd.ln()],
            ParametricDensity::Gamma { mean, sd } => vec![mean.ln(), sd.ln()],
            ParametricDensity::SkewNormal { xi, omega, alpha } => vec![xi, omega.ln(), alpha],
            ParametricDensity::StudentT { mu, sigma, nu } => vec![mu, sigma.ln(), nu.ln()],
        }
    }

    pub fn from_unconstrained(family: Family, u: &[f64]) -> Self {
        match family {
            Family::Normal => ParametricDensity::Normal {
                mean: u[0],
                sd: u[1].exp(),
            },
            Family::Gamma => ParametricDensity::Gamma {
                mean: u[0].exp(),
                sd: u[1].exp(),
            },
            Family::SkewNormal => ParametricDensity::SkewNormal {
                xi: u[0],
                omega: u[1].exp(),
                alpha: u[2],
            },
            Family::StudentT => ParametricDensity::StudentT {
                mu: u[0],
                sigma: u[1].exp(),
                nu: u[2].exp(),
            },
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            ParametricDensity::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
            }
            ParametricDensity::Gamma { mean, sd } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let (a, s) = Self::gamma_shape_scale(mean, sd);
                (a - 1.0) * x.ln() - x / s - a * s.ln() - ln_gamma(a)
            }
            ParametricDensity::SkewNormal { xi, omega, alpha } => {
                let z = (x - xi) / omega;
                let (ln_cdf, _) = ln_normal_cdf_and_mills(alpha * z);
                LN_2 - omega.ln() - 0.5 * LN_2PI - 0.5 * z * z + ln_cdf
            }
            ParametricDensity::StudentT { mu, sigma, nu } => {
                let z = (x - mu) / sigma;
                ln_gamma(0.5 * (nu + 1.0))
                    - ln_gamma(0.5 * nu)
                    - 0.5 * (nu * std::f64::consts::PI).ln()
                    - sigma.ln()
                    - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
            }
        }
    }

    /// Log density and its gradient with respect to the unconstrained
    /// parameters (written into `grad`). Outside the support the log density
    /// is `-inf` and the gradient is zero.
    pub fn ln_pdf_grad(&self, x: f64, grad: &mut [f64]) -> f64 {
        match *self {
            ParametricDensity::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                grad[0] = z / sd;
                grad[1] = z * z - 1.0;
                -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
            }
            ParametricDensity::Gamma { mean, sd } => {
                if x <= 0.0 {
                    grad[0] = 0.0;
                    grad[1] = 0.0;
                    return f64::NEG_INFINITY;
                }
                let (a, s) = Self::gamma_shape_scale(mean, sd);
                let d_shape = x.ln() - s.ln() - digamma(a);
                let d_scale = x / (s * s) - a / s;
                grad[0] = d_shape * 2.0 * a - d_scale * s;
                grad[1] = -d_shape * 2.0 * a + d_scale * 2.0 * s;
                (a - 1.0) * x.ln() - x / s - a * s.ln() - ln_gamma(a)
            }
            ParametricDensity::SkewNormal { xi, omega, alpha } => {
                let z = (x - xi) / omega;
                let (ln_cdf, mills) = ln_normal_cdf_and_mills(alpha * z);
                let dz = -z + alpha * mills;
                grad[0] = -dz / omega;
                grad[1] = -1.0 - dz * z;
                grad[2] = z * mills;
                LN_2 - omega.ln() - 0.5 * LN_2PI - 0.5 * z * z + ln_cdf
            }
            ParametricDensity::StudentT { mu, sigma, nu } => {
                let z = (x - mu) / sigma;
                let z2 = z * z;
                let denom = nu + z2;
                grad[0] = (nu + 1.0) * z / (denom * sigma);
                grad[1] = -1.0 + (nu + 1.0) * z2 / denom;
                let d_nu = 0.5 * digamma(0.5 * (nu + 1.0))
                    - 0.5 * digamma(0.5 * nu)
                    - 0.5 / nu
                    - 0.5 * (z2 / nu).ln_1p()
                    + 0.5 * (nu + 1.0) * z2 / (nu * denom);
                grad[2] = d_nu * nu;
                ln_gamma(0.5 * (nu + 1.0))
                    - ln_gamma(0.5 * nu)
                    - 0.5 * (nu * std::f64::consts::PI).ln()
                    - sigma.ln()
                    - 0.5 * (nu + 1.0) * (z2 / nu).ln_1p()
            }
        }
    }

    /// Mean and standard deviation, when finite.
    pub fn moments(&self) -> Option<(f64, f64)> {
        match *self {
            ParametricDensity::Normal { mean, sd } | ParametricDensity::Gamma { mean, sd } => {
                Some((mean, sd))
            }
            ParametricDensity::SkewNormal { xi, omega, alpha } => {
                let delta = alpha / (1.0 + alpha * alpha).sqrt();
                let mean = xi + omega * delta * (2.0 / std::f64::consts::PI).sqrt();
                let var = omega * omega * (1.0 - 2.0 * delta * delta / std::f64::consts::PI);
                Some((mean, var.sqrt()))
            }
            ParametricDensity::StudentT { mu, sigma, nu } => {
                (nu > 2.0).then(|| (mu, sigma * (nu / (nu - 2.0)).sqrt()))
            }
        }
    }

    /// Location of the maximum, found by golden-section search on the log
    /// density for the skewed families.
    pub fn mode(&self) -> f64 {
        match *self {
            ParametricDensity::Normal { mean, .. } => mean,
            ParametricDensity::StudentT { mu, .. } => mu,
            ParametricDensity::Gamma { mean, sd } => {
                let (a, s) = Self::gamma_shape_scale(mean, sd);
                ((a - 1.0) * s).max(0.0)
            }
            ParametricDensity::SkewNormal { xi, omega, .. } => {
                let (mut a, mut b) = (xi - 3.0 * omega, xi + 3.0 * omega);
                let g = 0.5 * (5f64.sqrt() - 1.0);
                for _ in 0..200 {
                    let c = b - g * (b - a);
                    let d = a + g * (b - a);
                    if self.ln_pdf(c) > self.ln_pdf(d) {
                        b = d;
                    } else {
                        a = c;
                    }
                }
                0.5 * (a + b)
            }
        }
    }

    /// Draws one value. Panics if the parameters are invalid; see
    /// [`ParametricDensity::validate`].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        use crate::simulate::samplers;
        let draw = match *self {
            ParametricDensity::Normal { mean, sd } => samplers::normal(rng, mean, sd),
            ParametricDensity::Gamma { mean, sd } => samplers::gamma_mean_sd(rng, mean, sd),
            ParametricDensity::SkewNormal { xi, omega, alpha } => {
                samplers::skew_normal(rng, xi, omega, alpha)
            }
            ParametricDensity::StudentT { mu, sigma, nu } => {
                samplers::student_t(rng, mu, sigma, nu)
            }
        };
        draw.expect("density parameters are validated on construction")
    }
}

/// One parametric density per state; families may differ between states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParametricEmission {
    pub states: Vec<ParametricDensity>,
}

impl ParametricEmission {
    pub fn new(states: Vec<ParametricDensity>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::invalid("emission needs at least one state"));
        }
        for s in &states {
            s.validate()?;
        }
        Ok(ParametricEmission { states })
    }
}

/// Numerically stable softmax.
pub fn softmax(beta: &[f64]) -> Vec<f64> {
    let max = beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = beta.iter().map(|b| (b - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Spline densities `p_i(x) = sum_k alpha_k^(i) phi_k(x)` with
/// `alpha^(i) = softmax(beta^(i))` and the last coefficient pinned to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplineEmission {
    pub basis: SplineBasis,
    /// Row `i` holds `beta^(i)`, length K, last entry 0.
    pub beta: Vec<Vec<f64>>,
}

impl SplineEmission {
    /// Builds an emission; each row is shifted so that its last entry is 0,
    /// which leaves the densities unchanged.
    pub fn new(basis: SplineBasis, beta: Vec<Vec<f64>>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::invalid("emission needs at least one state"));
        }
        let k = basis.len();
        let mut rows = Vec::with_capacity(beta.len());
        for (i, row) in beta.into_iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(format!(
                    "state {i}: expected {k} coefficients, got {}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("state {i}: non-finite coefficient")));
            }
            let last = row[k - 1];
            rows.push(row.into_iter().map(|v| v - last).collect());
        }
        Ok(SplineEmission { basis, beta: rows })
    }

    pub fn n_states(&self) -> usize {
        self.beta.len()
    }

    pub fn alpha(&self, state: usize) -> Vec<f64> {
        softmax(&self.beta[state])
    }

    pub fn density(&self, state: usize, x: f64) -> f64 {
        let alpha = self.alpha(state);
        self.basis.row(x).iter().map(|(k, v)| alpha[k] * v).sum()
    }

    /// Density of `state` on every point of `grid`.
    pub fn density_on(&self, state: usize, grid: &[f64]) -> Vec<f64> {
        let alpha = self.alpha(state);
        grid.iter()
            .map(|&x| self.basis.row(x).iter().map(|(k, v)| alpha[k] * v).sum())
            .collect()
    }

    /// Draws from state `state`: pick a basis function by its weight, then
    /// draw from that cubic B-spline (a translate of the sum of four
    /// uniforms).
    pub fn sample<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> f64 {
        let alpha = self.alpha(state);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = alpha.len() - 1;
        for (j, a) in alpha.iter().enumerate() {
            acc += a;
            if u < acc {
                k = j;
                break;
            }
        }
        let s: f64 = (0..4).map(|_| rng.random::<f64>()).sum();
        self.basis.knots()[k] + self.basis.spacing() * s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Emission {
    Spline(SplineEmission),
    Parametric(ParametricEmission),
}

impl Emission {
    pub fn n_states(&self) -> usize {
        match self {
            Emission::Spline(e) => e.n_states(),
            Emission::Parametric(e) => e.states.len(),
        }
    }

    pub fn density(&self, state: usize, x: f64) -> f64 {
        match self {
            Emission::Spline(e) => e.density(state, x),
            Emission::Parametric(e) => e.states[state].pdf(x),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> f64 {
        match self {
            Emission::Spline(e) => e.sample(state, rng),
            Emission::Parametric(e) => e.states[state].sample(rng),
        }
    }

    /// `T x N` matrix of `p_i(x_t)`.
    pub fn density_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_finite(x)?;
        let n = self.n_states();
        let mut out = DMatrix::zeros(x.len(), n);
        match self {
            Emission::Spline(e) => {
                let alphas: Vec<Vec<f64>> = (0..n).map(|i| e.alpha(i)).collect();
                for (t, &xt) in x.iter().enumerate() {
                    let row = e.basis.row(xt);
                    for (i, alpha) in alphas.iter().enumerate() {
                        out[(t, i)] = row.iter().map(|(k, v)| alpha[k] * v).sum();
                    }
                }
            }
            Emission::Parametric(e) => {
                for (t, &xt) in x.iter().enumerate() {
                    for (i, d) in e.states.iter().enumerate() {
                        out[(t, i)] = d.pdf(xt);
                    }
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::InvalidData {
            index,
            reason: format!("non-finite observation {}", x[index]),
        }),
        None => Ok(()),
    }
}

/// Families available as initialization targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetFamily {
    Normal,
    Gamma,
}

/// Coefficients of a spline density close to a parametric target:
/// `beta_k = log p*(x_k) - log p*(x_K)` at the basis means `x_k`.
pub fn init_from_target(
    basis: &SplineBasis,
    family: TargetFamily,
    mean: f64,
    sd: f64,
) -> Result<Vec<f64>> {
    if !(sd > 0.0 && mean.is_finite()) {
        return Err(Error::invalid(format!("invalid target mean={mean} sd={sd}")));
    }
    let target = match family {
        TargetFamily::Normal => ParametricDensity::Normal { mean, sd },
        TargetFamily::Gamma => {
            if mean <= 0.0 {
                return Err(Error::invalid("gamma target needs a positive mean"));
            }
            ParametricDensity::Gamma { mean, sd }
        }
    };
    Ok(init_from_density(basis, |x| target.pdf(x)))
}

/// As [`init_from_target`] for an arbitrary target density.
pub fn init_from_density(basis: &SplineBasis, target: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut logs: Vec<f64> = basis
        .basis_means()
        .iter()
        .map(|&x| target(x).max(TARGET_DENSITY_FLOOR).ln())
        .collect();
    let floor = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max) - INIT_LOG_RANGE;
    for l in &mut logs {
        *l = l.max(floor);
    }
    let last = logs[logs.len() - 1];
    logs.iter().map(|l| l - last).collect()
}

/// Counts local maxima of a sampled function. Neighbouring values that
/// differ by less than `1e-9` times the maximum are merged into a plateau; a
/// plateau counts as a maximum when it exceeds all of its neighbours
/// (one neighbour at the ends of the grid).
pub fn count_local_maxima(values: &[f64]) -> usize {
    if values.is_empty() {
        return 0;
    }
    let scale = values.iter().cloned().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tol = 1e-9 * scale;
    let mut levels: Vec<f64> = Vec::new();
    for &v in values {
        match levels.last() {
            Some(&last) if (v - last).abs() <= tol => {}
            _ => levels.push(v),
        }
    }
    if levels.len() == 1 {
        return 1;
    }
    (0..levels.len())
        .filter(|&j| {
            let left = j == 0 || levels[j] > levels[j - 1];
            let right = j + 1 == levels.len() || levels[j] > levels[j + 1];
            left && right
        })
        .count()
}

/// Number of local maxima of `p_state` on a uniform grid over the knot range.
pub fn mode_count(emission: &SplineEmission, state: usize, grid_size: usize) -> Result<usize> {
    if grid_size < 100 {
        return Err(Error::invalid("mode counting needs a grid of at least 100 points"));
    }
    let (lo, hi) = emission.basis.knot_range();
    let grid: Vec<f64> = (0..grid_size)
        .map(|j| lo + (hi - lo) * j as f64 / (grid_size - 1) as f64)
        .collect();
    Ok(count_local_maxima(&emission.density_on(state, &grid)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn basis(lo: f64, hi: f64, k: usize) -> SplineBasis {
        SplineBasis::new((lo, hi), k).unwrap()
    }

    fn integrate(e: &SplineEmission, state: usize) -> f64 {
        let rule = e.basis.quadrature();
        rule.iter().map(|&(x, w)| w * e.density(state, x)).sum()
    }

    #[test]
    fn uniform_coefficients_average_basis() {
        let b = basis(0.0, 4.0, 8);
        let e = SplineEmission::new(b.clone(), vec![vec![0.0; 8]]).unwrap();
        for &x in &[-0.5, 0.3, 2.0, 3.99, 5.0] {
            let expect: f64 = b.row(x).iter().map(|(_, v)| v / 8.0).sum();
            assert_relative_eq!(e.density(0, x), expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn standard_normal_at_zero() {
        let d = ParametricDensity::Normal { mean: 0.0, sd: 1.0 };
        assert_relative_eq!(d.pdf(0.0), 0.398_942_280_401_432_7, epsilon = 1e-15);
    }

    #[test]
    fn skew_normal_closed_form() {
        let d = ParametricDensity::SkewNormal { xi: 0.0, omega: 1.0, alpha: 6.0 };
        for j in 0..41 {
            let x = -2.0 + 0.1 * j as f64;
            let oracle = 2.0 * std_normal_pdf(x) * std_normal_cdf(6.0 * x);
            assert_relative_eq!(d.pdf(x), oracle, max_relative = 1e-12);
        }
        // Deep lower tail stays finite on the log scale.
        assert!(d.ln_pdf(-20.0).is_finite());
    }

    #[test]
    fn gamma_density_matches_statrs() {
        use statrs::distribution::{Continuous, Gamma};
        let d = ParametricDensity::Gamma { mean: 15.0, sd: 4.0 };
        let (a, s) = ParametricDensity::gamma_shape_scale(15.0, 4.0);
        let g = Gamma::new(a, 1.0 / s).unwrap();
        for &x in &[0.5, 5.0, 15.0, 30.0] {
            assert_relative_eq!(d.pdf(x), g.pdf(x), max_relative = 1e-12);
        }
        assert_eq!(d.pdf(-1.0), 0.0);
    }

    #[test]
    fn student_t_matches_statrs() {
        use statrs::distribution::{Continuous, StudentsT};
        let d = ParametricDensity::StudentT { mu: 3.0, sigma: 1.0, nu: 3.0 };
        let t = StudentsT::new(3.0, 1.0, 3.0).unwrap();
        for &x in &[-4.0, 0.0, 3.0, 7.5] {
            assert_relative_eq!(d.pdf(x), t.pdf(x), max_relative = 1e-12);
        }
    }

    #[test]
    fn ln_pdf_gradients_match_finite_differences() {
        let cases = [
            ParametricDensity::Normal { mean: 0.4, sd: 1.3 },
            ParametricDensity::Gamma { mean: 2.0, sd: 1.5 },
            ParametricDensity::SkewNormal { xi: 0.1, omega: 0.8, alpha: 4.0 },
            ParametricDensity::StudentT { mu: 3.0, sigma: 1.2, nu: 3.5 },
        ];
        for d in cases {
            let u = d.unconstrained();
            for &x in &[-1.2, 0.3, 1.7, 4.0] {
                let mut grad = vec![0.0; u.len()];
                let lp = d.ln_pdf_grad(x, &mut grad);
                if !lp.is_finite() {
                    continue;
                }
                assert_relative_eq!(lp, d.ln_pdf(x), max_relative = 1e-13);
                for j in 0..u.len() {
                    let step = 1e-6;
                    let mut up = u.clone();
                    up[j] += step;
                    let mut dn = u.clone();
                    dn[j] -= step;
                    let fd = (ParametricDensity::from_unconstrained(d.family(), &up).ln_pdf(x)
                        - ParametricDensity::from_unconstrained(d.family(), &dn).ln_pdf(x))
                        / (2.0 * step);
                    assert!(
                        (fd - grad[j]).abs() <= 1e-6 * fd.abs().max(1.0),
                        "{d:?} x={x} j={j}: fd={fd} analytic={}",
                        grad[j]
                    );
                }
            }
        }
    }

    #[test]
    fn init_symmetric_normal() {
        let b = basis(-5.0, 5.0, 11);
        let beta = init_from_target(&b, TargetFamily::Normal, 0.0, 1.5).unwrap();
        assert_eq!(beta[10], 0.0);
        for j in 0..11 {
            assert_relative_eq!(beta[j], beta[10 - j], epsilon = 1e-9);
        }
        let peak = (0..11).max_by(|&a, &c| beta[a].total_cmp(&beta[c])).unwrap();
        assert_eq!(peak, 5);
        assert!(beta[..=5].windows(2).all(|w| w[0] < w[1]));
        assert!(beta[5..].windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn init_gamma_peaks_near_mode() {
        let b = basis(0.0, 30.0, 30);
        let beta = init_from_target(&b, TargetFamily::Gamma, 15.0, 4.0).unwrap();
        // Oracle: mode = (shape - 1) * scale.
        let (a, s) = ParametricDensity::gamma_shape_scale(15.0, 4.0);
        let mode = (a - 1.0) * s;
        assert_relative_eq!(mode, 13.933_333_333_333_334, epsilon = 1e-12);
        let peak = (0..30).max_by(|&i, &j| beta[i].total_cmp(&beta[j])).unwrap();
        let closest = (0..30)
            .min_by(|&i, &j| {
                (b.basis_means()[i] - mode)
                    .abs()
                    .total_cmp(&(b.basis_means()[j] - mode).abs())
            })
            .unwrap();
        assert!((peak as i64 - closest as i64).abs() <= 1);
    }

    #[test]
    fn init_constant_target_is_zero() {
        let b = basis(0.0, 1.0, 9);
        let beta = init_from_density(&b, |_| 0.7);
        assert!(beta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_floor_avoids_infinite_logs() {
        let b = basis(0.0, 200.0, 20);
        let beta = init_from_target(&b, TargetFamily::Normal, 0.0, 0.1).unwrap();
        assert!(beta.iter().all(|v| v.is_finite()));
        assert_eq!(beta[19], 0.0);
        let max = beta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = beta.iter().copied().fold(f64::INFINITY, f64::min);
        assert_relative_eq!(max - min, INIT_LOG_RANGE, epsilon = 1e-9);
    }

    #[test]
    fn mode_count_examples() {
        let b = basis(0.0, 10.0, 30);
        let mut single = vec![0.0; 30];
        single[12] = 12.0;
        let e = SplineEmission::new(b.clone(), vec![single]).unwrap();
        assert_eq!(mode_count(&e, 0, 1000).unwrap(), 1);

        // Equal weight on basis functions 3 and K-3 (1-based), tiny elsewhere.
        let mut two = vec![-30.0; 30];
        two[2] = 0.0;
        two[26] = 0.0;
        let e = SplineEmission::new(b.clone(), vec![two]).unwrap();
        assert_eq!(mode_count(&e, 0, 1000).unwrap(), 2);

        let dec: Vec<f64> = (0..30).map(|k| -0.3 * k as f64).collect();
        let e = SplineEmission::new(b, vec![dec]).unwrap();
        assert_eq!(mode_count(&e, 0, 1000).unwrap(), 1);
        assert!(mode_count(&e, 0, 50).is_err());
    }

    #[test]
    fn count_local_maxima_plateaus() {
        assert_eq!(count_local_maxima(&[0.0, 1.0, 1.0, 1.0, 0.0]), 1);
        assert_eq!(count_local_maxima(&[3.0, 2.0, 1.0]), 1);
        assert_eq!(count_local_maxima(&[0.0, 2.0, 1.0, 2.0, 0.0]), 2);
        assert_eq!(count_local_maxima(&[1.0, 1.0]), 1);
    }

    #[test]
    fn density_matrix_rejects_non_finite() {
        let e = Emission::Parametric(
            ParametricEmission::new(vec![ParametricDensity::Normal { mean: 0.0, sd: 1.0 }])
                .unwrap(),
        );
        match e.density_matrix(&[0.0, f64::NAN, 1.0]) {
            Err(Error::InvalidData { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spline_density_integrates_to_one() {
        let b = basis(-3.0, 8.0, 25);
        let beta: Vec<f64> = (0..25).map(|k| ((k * 37 % 11) as f64 - 5.0) * 0.7).collect();
        let e = SplineEmission::new(b, vec![beta]).unwrap();
        assert_relative_eq!(integrate(&e, 0), 1.0, epsilon = 1e-12);
        assert_eq!(e.beta[0][24], 0.0);
    }

    #[test]
    fn spline_sampler_mean() {
        use rand::SeedableRng;
        let b = basis(0.0, 10.0, 14);
        let beta = init_from_target(&b, TargetFamily::Normal, 4.0, 1.0).unwrap();
        let e = SplineEmission::new(b.clone(), vec![beta]).unwrap();
        let rule = b.quadrature();
        let mean: f64 = rule.iter().map(|&(x, w)| w * x * e.density(0, x)).sum();
        let second: f64 = rule.iter().map(|&(x, w)| w * x * x * e.density(0, x)).sum();
        let sd = (second - mean * mean).sqrt();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| e.sample(0, &mut rng)).collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        assert!((m - mean).abs() < 3.0 * sd / (n as f64).sqrt());
    }
}
