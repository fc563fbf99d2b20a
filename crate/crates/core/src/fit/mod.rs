//! Maximum penalized likelihood estimation: inner quasi-Newton fits, the
//! smoothing-parameter loop, coefficient-mode search and multi-start
//! orchestration.
//!
//! The maximized objective is
//!
//! ```text
//! log L(theta) - sum_i lambda_i beta_i' S beta_i - kappa sum_i P~_i(m_i)
//! ```
//!
//! with the smoothness weights `lambda_i` chosen by a Fellner-Schall-type
//! fixed-point iteration and the coefficient modes `m_i` chosen by a pruned
//! grid search around the modes of an unconstrained fit.

mod objective;
pub mod optim;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{self, coefficient_modes, project_unimodal, tilde_beta};
use crate::emissions::{
    check_finite, init_from_target, mode_count, Emission, ParametricDensity, SplineEmission,
    TargetFamily,
};
use crate::error::{Error, Result};
use crate::hmm::{DeltaMode, HmmModel, TransitionModel};
use crate::simulate::derive_seed;
use crate::splines::SplineBasis;

pub use objective::{Components, Problem as Objective};
pub use optim::OptimOptions;

/// Grid size used to verify unimodality of fitted densities.
pub const MODE_GRID: usize = 1000;

/// Newton iterations allowed after BFGS stops short of the tolerance.
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Parametric state-dependent densities; families come from `init`.
    Parametric,
    /// Penalized spline densities without shape constraints.
    Spline,
    /// Penalized spline densities with unimodal coefficient sequences.
    Unimodal,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Parametric => "parametric",
            ModelKind::Spline => "spline",
            ModelKind::Unimodal => "unimodal",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parametric" => Ok(ModelKind::Parametric),
            "spline" => Ok(ModelKind::Spline),
            "unimodal" => Ok(ModelKind::Unimodal),
            other => Err(Error::invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

/// How the coefficient mode of one state is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeChoice {
    /// Candidates derived from the unconstrained fit.
    Auto,
    /// Fixed at the largest rescaled coefficient of the unconstrained fit.
    Peak,
    Fixed(usize),
    Candidates(Vec<usize>),
    /// No unimodality penalty for this state.
    Unconstrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeSearchSpec {
    /// One entry per state; empty means `auto` for every state.
    pub per_state: Vec<ModeChoice>,
    /// Indices explored on each side of a single dominant coefficient mode.
    pub half_width: usize,
    /// Secondary modes whose weight is at least this fraction of the
    /// primary one count as competing.
    pub ratio: f64,
    /// Search every ordered combination `m_1 <= ... <= m_N` instead.
    pub full_grid: bool,
}

impl Default for ModeSearchSpec {
    fn default() -> Self {
        ModeSearchSpec {
            per_state: Vec::new(),
            half_width: 1,
            ratio: 0.5,
            full_grid: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterSpec {
    /// Standard deviation of the mean jitter, as a multiple of the sd.
    pub mean: f64,
    /// Standard deviation of the log-sd jitter.
    pub log_sd: f64,
    /// Standard deviation of jitter on other unconstrained parameters.
    pub param: f64,
}

impl Default for JitterSpec {
    fn default() -> Self {
        JitterSpec {
            mean: 0.25,
            log_sd: 0.2,
            param: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingSpec {
    /// Keep `lambda_init` fixed and skip the selection loop.
    pub fixed: bool,
    pub max_outer: usize,
    /// Stop when every `|delta log lambda_i|` falls below this.
    pub tol: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for SmoothingSpec {
    fn default() -> Self {
        SmoothingSpec {
            fixed: false,
            max_outer: 50,
            tol: 1e-3,
            lambda_min: 1e-4,
            lambda_max: 1e7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSpec {
    pub model: ModelKind,
    /// Initial per-state densities. For parametric fits they fix the
    /// families; for spline fits their mean and sd define the targets.
    pub init: Vec<ParametricDensity>,
    pub target_family: TargetFamily,
    /// Number of basis functions per state.
    pub k: usize,
    /// Basis range; defaults to the data range.
    pub range: Option<[f64; 2]>,
    /// Initial smoothing weights (one value is broadcast to every state).
    pub lambda_init: Vec<f64>,
    pub kappa: f64,
    pub rho: f64,
    /// Raise kappa geometrically from `kappa / 1e4` before the final fit.
    pub anneal_kappa: bool,
    pub modes: ModeSearchSpec,
    pub n_starts: usize,
    pub jitter: JitterSpec,
    /// Initial self-transition probability.
    pub gamma_diag: f64,
    pub delta: DeltaMode,
    pub optimizer: OptimOptions,
    pub smoothing: SmoothingSpec,
    /// Largest unsmoothed unimodality violation accepted after fitting.
    pub unimodal_tol: f64,
    pub seed: u64,
}

impl Default for FitSpec {
    fn default() -> Self {
        FitSpec {
            model: ModelKind::Spline,
            init: Vec::new(),
            target_family: TargetFamily::Normal,
            k: 30,
            range: None,
            lambda_init: vec![1.0],
            kappa: constraints::DEFAULT_KAPPA,
            rho: constraints::DEFAULT_RHO,
            anneal_kappa: false,
            modes: ModeSearchSpec::default(),
            n_starts: 5,
            jitter: JitterSpec::default(),
            gamma_diag: 0.9,
            delta: DeltaMode::Stationary,
            optimizer: OptimOptions::default(),
            smoothing: SmoothingSpec::default(),
            unimodal_tol: 1e-6,
            seed: 1,
        }
    }
}

impl FitSpec {
    pub fn n_states(&self) -> usize {
        self.init.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.init.is_empty() {
            return Err(Error::Config("`init` must list one density per state".into()));
        }
        for d in &self.init {
            d.validate()?;
        }
        if self.n_starts == 0 {
            return Err(Error::Config("n_starts must be at least 1".into()));
        }
        if self.model != ModelKind::Parametric && self.k < 4 {
            return Err(Error::Config("spline fits need k >= 4".into()));
        }
        if !(self.lambda_init.len() == 1 || self.lambda_init.len() == self.n_states())
            || self.lambda_init.iter().any(|l| !(*l > 0.0))
        {
            return Err(Error::Config(
                "lambda_init must hold one positive value or one per state".into(),
            ));
        }
        if !(self.rho > 0.0 && self.kappa >= 0.0) {
            return Err(Error::Config("need rho > 0 and kappa >= 0".into()));
        }
        if !(self.gamma_diag > 0.0 && self.gamma_diag < 1.0) && self.n_states() > 1 {
            return Err(Error::Config("gamma_diag must lie in (0, 1)".into()));
        }
        if !self.modes.per_state.is_empty() && self.modes.per_state.len() != self.n_states() {
            return Err(Error::Config("modes.per_state needs one entry per state".into()));
        }
        for choice in &self.modes.per_state {
            match choice {
                ModeChoice::Fixed(m) if *m == 0 || *m > self.k => {
                    return Err(Error::Config(format!("fixed mode {m} outside 1..={}", self.k)))
                }
                ModeChoice::Candidates(c) if c.is_empty() || c.iter().any(|m| *m == 0 || *m > self.k) => {
                    return Err(Error::Config("mode candidates must lie in 1..=k".into()))
                }
                _ => {}
            }
        }
        let s = &self.smoothing;
        if !(s.lambda_min > 0.0 && s.lambda_min < s.lambda_max && s.max_outer >= 1) {
            return Err(Error::Config("invalid smoothing settings".into()));
        }
        Ok(())
    }

    fn lambda0(&self) -> Vec<f64> {
        if self.lambda_init.len() == 1 {
            vec![self.lambda_init[0]; self.n_states()]
        } else {
            self.lambda_init.clone()
        }
    }

    fn mode_choice(&self, state: usize) -> ModeChoice {
        self.modes
            .per_state
            .get(state)
            .cloned()
            .unwrap_or(ModeChoice::Auto)
    }

    /// Basis covering the configured range or the data range.
    pub fn basis_for(&self, x: &[f64]) -> Result<SplineBasis> {
        let (lo, hi) = match self.range {
            Some([lo, hi]) => (lo, hi),
            None => x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            }),
        };
        SplineBasis::new((lo, hi), self.k)
    }
}

/// One iterate of the smoothing loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingIterate {
    pub lambda: Vec<f64>,
    pub penalized_loglik: f64,
    /// `penalized loglik + 1/2 sum_i rank(S) log lambda_i - 1/2 log det H`.
    pub criterion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub start: usize,
    pub modes: Vec<Option<usize>>,
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: ModelKind,
    pub model: HmmModel,
    pub lambda: Vec<f64>,
    pub modes: Vec<Option<usize>>,
    pub penalized_loglik: f64,
    pub loglik: f64,
    pub smoothness_penalty: f64,
    /// Unsmoothed violation `sum_i P_i(m_i)`; zero when every constrained
    /// coefficient sequence is unimodal.
    pub unimodality_penalty: f64,
    /// Smoothed penalty `sum_i P~_i(m_i)` as it enters the objective
    /// (before the kappa weight).
    pub smoothed_unimodality_penalty: f64,
    pub converged: bool,
    pub n_outer_iterations: usize,
    pub n_inner_iterations: usize,
    pub smoothing_trace: Vec<SmoothingIterate>,
    pub starts: Vec<StartRecord>,
    /// Number of distinct mode combinations searched (0 when no search ran).
    pub n_mode_combinations: usize,
    /// Number of constrained fits executed during the mode search.
    pub n_constrained_fits: usize,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn gamma(&self) -> DMatrix<f64> {
        self.model.transition.gamma()
    }

    /// Mode counts of every fitted spline density on the verification grid.
    pub fn mode_counts(&self) -> Option<Vec<usize>> {
        match &self.model.emission {
            Emission::Spline(e) => Some(
                (0..e.n_states())
                    .map(|i| mode_count(e, i, MODE_GRID).unwrap_or(0))
                    .collect(),
            ),
            Emission::Parametric(_) => None,
        }
    }
}

/// Result of one quasi-Newton maximization at fixed smoothing weights.
#[derive(Debug, Clone)]
pub struct InnerFit {
    pub theta: Vec<f64>,
    pub penalized_loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Negative Hessian of the penalized objective at `theta`.
    pub neg_hessian: Option<DMatrix<f64>>,
}

impl<'a> Objective<'a> {
    /// Objective for `spec` on `x` with the given smoothing weights and modes.
    pub fn new(
        spec: &FitSpec,
        x: &'a [f64],
        lambda: &[f64],
        modes: &[Option<usize>],
    ) -> Result<Self> {
        check_finite(x)?;
        if x.is_empty() {
            return Err(Error::invalid("no observations"));
        }
        let n = spec.n_states();
        let mut obj = match spec.model {
            ModelKind::Parametric => Objective::parametric(
                x,
                spec.init.iter().map(|d| d.family()).collect(),
                spec.delta.clone(),
            ),
            ModelKind::Spline | ModelKind::Unimodal => {
                Objective::spline(x, n, spec.basis_for(x)?, spec.delta.clone())?
            }
        };
        if obj.basis().is_some() {
            obj.lambda = lambda.to_vec();
            if spec.model == ModelKind::Unimodal {
                obj.modes = modes.to_vec();
                obj.kappa = spec.kappa;
                obj.rho = spec.rho;
                if let Some(basis) = obj.basis() {
                    constraints::UnimodalPenaltySpec {
                        modes: modes.to_vec(),
                        rho: spec.rho,
                        kappa: spec.kappa,
                    }
                    .validate(basis.len())?;
                }
            }
        }
        Ok(obj)
    }

    /// Penalized objective and gradient at `theta` (`None` if not finite).
    pub fn penalized_objective(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.value_grad(theta)
    }
}

/// Maximizes the penalized objective from `theta0`.
pub fn fit_inner(obj: &Objective, theta0: &[f64], opts: &OptimOptions) -> Result<InnerFit> {
    let bfgs_opts = OptimOptions {
        max_iter: opts.max_iter.min(opts.newton_after),
        ..*opts
    };
    let out = optim::minimize(
        |th| obj.value_grad(th).map(|(f, g)| (-f, g.into_iter().map(|v| -v).collect())),
        theta0,
        &bfgs_opts,
    )
    .ok_or_else(|| Error::invalid("objective is not finite at the starting point"))?;
    let mut out = out;
    if !out.converged {
        // Stiff unimodality penalties slow BFGS down near the optimum.
        let polished = optim::newton_polish(
            |th| obj.value_grad(th).map(|(f, g)| (-f, g.into_iter().map(|v| -v).collect())),
            |th| obj.neg_hessian(th),
            &out.x,
            opts,
            NEWTON_MAX_ITER,
        );
        if let Some(p) = polished {
            out.iterations += p.iterations;
            out.x = p.x;
            out.f = p.f;
            out.converged = p.converged;
        }
    }
    let neg_hessian = obj.neg_hessian(&out.x);
    Ok(InnerFit {
        penalized_loglik: -out.f,
        theta: out.x,
        converged: out.converged,
        iterations: out.iterations,
        neg_hessian,
    })
}

/// Symmetric eigen-decomposition based inverse and log-determinant, with
/// eigenvalues floored to keep the matrix positive definite.
fn pd_inverse_logdet(h: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let eig = h.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let floor = (max * 1e-12).max(1e-12);
    let mut logdet = 0.0;
    let mut inv_diag = nalgebra::DVector::zeros(h.nrows());
    for (j, &v) in eig.eigenvalues.iter().enumerate() {
        let v = v.max(floor);
        logdet += v.ln();
        inv_diag[j] = 1.0 / v;
    }
    let q = &eig.eigenvectors;
    (q * DMatrix::from_diagonal(&inv_diag) * q.transpose(), logdet)
}

struct SmoothOutcome {
    theta: Vec<f64>,
    lambda: Vec<f64>,
    converged: bool,
    outer: usize,
    inner_iterations: usize,
    trace: Vec<SmoothingIterate>,
    warnings: Vec<String>,
}

/// Alternates inner fits with smoothing-weight updates
/// `lambda_i <- (r - 2 lambda_i tr(V_i S)) / (2 beta_i' S beta_i)`,
/// the Fellner-Schall fixed point for a penalty of the form
/// `lambda beta' S beta`, with `V_i` the `beta_i` block of the inverse
/// negative Hessian and `r = rank(S)`.
fn smooth_loop(obj: &mut Objective, theta0: Vec<f64>, spec: &FitSpec) -> Result<SmoothOutcome> {
    let mut theta = theta0;
    let mut warnings = Vec::new();
    let mut inner_iterations = 0;
    let mut trace = Vec::new();

    if spec.anneal_kappa && obj.modes.iter().any(Option::is_some) && obj.kappa > 0.0 {
        let final_kappa = obj.kappa;
        for exp in (1..=4).rev() {
            obj.kappa = final_kappa / 10f64.powi(exp);
            let inner = fit_inner(obj, &theta, &spec.optimizer)?;
            inner_iterations += inner.iterations;
            theta = inner.theta;
        }
        obj.kappa = final_kappa;
    }

    let Some(penalty) = obj.penalty().cloned() else {
        let inner = fit_inner(obj, &theta, &spec.optimizer)?;
        return Ok(SmoothOutcome {
            theta: inner.theta,
            lambda: obj.lambda.clone(),
            converged: inner.converged,
            outer: 0,
            inner_iterations: inner_iterations + inner.iterations,
            trace,
            warnings,
        });
    };
    let rank = penalty.rank as f64;
    let s = &spec.smoothing;
    let mut outer = 0;
    let mut accepted: Option<Accepted> = None;
    let mut step = 1.0;
    let mut prev_raw: Option<Vec<f64>> = None;
    loop {
        let inner = fit_inner(obj, &theta, &spec.optimizer)?;
        inner_iterations += inner.iterations;
        theta = inner.theta;
        if s.fixed {
            return Ok(SmoothOutcome {
                theta,
                lambda: obj.lambda.clone(),
                converged: inner.converged,
                outer: 0,
                inner_iterations,
                trace,
                warnings,
            });
        }
        outer += 1;
        let Some(h) = inner.neg_hessian else {
            warnings.push("Hessian not finite; smoothing weights left unchanged".into());
            return Ok(SmoothOutcome {
                theta,
                lambda: obj.lambda.clone(),
                converged: false,
                outer,
                inner_iterations,
                trace,
                warnings,
            });
        };
        let (v, logdet) = pd_inverse_logdet(&h);
        let criterion = inner.penalized_loglik
            + 0.5 * rank * obj.lambda.iter().map(|l| l.ln()).sum::<f64>()
            - 0.5 * logdet;
        trace.push(SmoothingIterate {
            lambda: obj.lambda.clone(),
            penalized_loglik: inner.penalized_loglik,
            criterion,
        });

        // An update that lowers the criterion is rejected and retried with
        // half the log-step; without this the update can cycle. Shortened
        // steps get no slack, or the loop re-accepts points near the last one.
        if let Some(acc) = &accepted {
            let slack = if step < 1.0 { 0.0 } else { CRITERION_SLACK };
            if criterion < acc.criterion - slack {
                step *= 0.5;
                let change = step * max_abs(&acc.direction);
                if change < BACKTRACK_TOL || outer >= s.max_outer {
                    obj.lambda = acc.lambda.clone();
                    let theta = acc.theta.clone();
                    let done = change < BACKTRACK_TOL;
                    return final_refit(obj, theta, spec, outer, done, inner_iterations, trace, warnings);
                }
                obj.lambda = scaled_step(&acc.lambda, &acc.direction, step);
                theta = acc.theta.clone();
                continue;
            }
        }

        let mut new_lambda = obj.lambda.clone();
        for i in 0..obj.n {
            let (start, len) = obj.block(i);
            let beta = obj.beta(&theta, i);
            let q = penalty.quad_form(&beta);
            if q < 1e-12 {
                let msg = format!("state {}: coefficients are affine; lambda set to maximum", i + 1);
                if !warnings.contains(&msg) {
                    warnings.push(msg);
                }
                new_lambda[i] = s.lambda_max;
                continue;
            }
            let mut tr = 0.0;
            for a in 0..len {
                for b in 0..len {
                    tr += v[(start + a, start + b)] * penalty.s[(b, a)];
                }
            }
            let l = obj.lambda[i];
            let update = (rank - 2.0 * l * tr) / (2.0 * q);
            // A non-positive update means the Hessian is not dominated by the
            // penalty; shrink instead of jumping to the lower bound.
            new_lambda[i] = if update.is_finite() && update > 0.0 {
                update.clamp(s.lambda_min, s.lambda_max)
            } else {
                (l / 10.0).max(s.lambda_min)
            };
        }
        let raw: Vec<f64> = new_lambda
            .iter()
            .zip(&obj.lambda)
            .map(|(a, b)| a.ln() - b.ln())
            .collect();
        let change = max_abs(&raw);
        // Slow geometric convergence or a steady drift towards a bound:
        // jump ahead along the tail.
        let mut ahead = raw.clone();
        if let Some(prev) = &prev_raw {
            for (d, p) in ahead.iter_mut().zip(prev) {
                let q = *d / p;
                if q.is_finite() && q > 0.0 {
                    *d *= if q < 1.0 { (1.0 / (1.0 - q)).min(MAX_EXTRAPOLATION) } else { MAX_EXTRAPOLATION };
                }
            }
        }
        let next: Vec<f64> = obj
            .lambda
            .iter()
            .zip(&ahead)
            .map(|(l, d)| (l.ln() + d).exp().clamp(s.lambda_min, s.lambda_max))
            .collect();
        let direction: Vec<f64> = next.iter().zip(&obj.lambda).map(|(a, b)| a.ln() - b.ln()).collect();
        prev_raw = Some(raw);
        step = 1.0;
        accepted = Some(Accepted {
            lambda: std::mem::replace(&mut obj.lambda, next),
            theta: theta.clone(),
            criterion,
            direction,
        });
        if change < s.tol || outer >= s.max_outer {
            return final_refit(obj, theta, spec, outer, change < s.tol, inner_iterations, trace, warnings);
        }
    }
}

const CRITERION_SLACK: f64 = 1e-2;
/// Backtracking stops once the log-step is this small.
const BACKTRACK_TOL: f64 = 1e-2;
const MAX_EXTRAPOLATION: f64 = 10.0;

struct Accepted {
    lambda: Vec<f64>,
    theta: Vec<f64>,
    criterion: f64,
    /// Log-scale update proposed at this iterate.
    direction: Vec<f64>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, d| m.max(d.abs()))
}

fn scaled_step(lambda: &[f64], direction: &[f64], step: f64) -> Vec<f64> {
    lambda.iter().zip(direction).map(|(l, d)| l * (step * d).exp()).collect()
}

#[allow(clippy::too_many_arguments)]
fn final_refit(
    obj: &mut Objective,
    theta: Vec<f64>,
    spec: &FitSpec,
    outer: usize,
    converged_outer: bool,
    mut inner_iterations: usize,
    trace: Vec<SmoothingIterate>,
    mut warnings: Vec<String>,
) -> Result<SmoothOutcome> {
    if !converged_outer {
        let recent: Vec<String> = trace
            .iter()
            .rev()
            .take(3)
            .map(|it| format!("{:.3?}", it.lambda))
            .collect();
        warnings.push(format!(
            "smoothing loop stopped after {outer} iterations (recent lambda {})",
            recent.join(" ")
        ));
    }
    let last = fit_inner(obj, &theta, &spec.optimizer)?;
    inner_iterations += last.iterations;
    Ok(SmoothOutcome {
        theta: last.theta,
        lambda: obj.lambda.clone(),
        converged: last.converged && converged_outer,
        outer,
        inner_iterations,
        trace,
        warnings,
    })
}

fn finish(
    obj: &Objective,
    spec: &FitSpec,
    kind: ModelKind,
    outcome: SmoothOutcome,
) -> FitResult {
    let comps = obj.components(&outcome.theta);
    let model = obj.unpack(&outcome.theta);
    let mut warnings = outcome.warnings;
    let mut converged = outcome.converged;
    if kind == ModelKind::Unimodal {
        if comps.exact_unimodality > spec.unimodal_tol {
            warnings.push(format!(
                "unimodality violation {:.3e} exceeds tolerance; consider a larger kappa",
                comps.exact_unimodality
            ));
            converged = false;
        }
        if let Emission::Spline(e) = &model.emission {
            for (i, m) in obj.modes.iter().enumerate() {
                if m.is_some() && mode_count(e, i, MODE_GRID).unwrap_or(0) != 1 {
                    warnings.push(format!("state {}: fitted density is not unimodal", i + 1));
                    converged = false;
                }
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    FitResult {
        kind,
        model,
        lambda: if obj.basis().is_some() { outcome.lambda } else { Vec::new() },
        modes: obj.modes.clone(),
        penalized_loglik: comps.penalized(obj.kappa),
        loglik: comps.loglik,
        smoothness_penalty: comps.smoothness,
        unimodality_penalty: comps.exact_unimodality,
        smoothed_unimodality_penalty: comps.smoothed_unimodality,
        converged,
        n_outer_iterations: outcome.outer,
        n_inner_iterations: outcome.inner_iterations,
        smoothing_trace: outcome.trace,
        starts: Vec::new(),
        n_mode_combinations: 0,
        n_constrained_fits: 0,
        warnings,
    }
}

/// Fits at the given modes, selecting smoothing weights unless
/// `spec.smoothing.fixed` is set. `lambda` overrides `spec.lambda_init`.
pub fn select_smoothing(
    spec: &FitSpec,
    x: &[f64],
    modes: &[Option<usize>],
    start: &HmmModel,
    lambda: Option<&[f64]>,
) -> Result<FitResult> {
    spec.validate()?;
    let lambda0 = lambda.map(<[f64]>::to_vec).unwrap_or_else(|| spec.lambda0());
    let kind = if modes.iter().any(Option::is_some) {
        ModelKind::Unimodal
    } else if spec.model == ModelKind::Parametric {
        ModelKind::Parametric
    } else {
        ModelKind::Spline
    };
    let mut obj = Objective::new(spec, x, &lambda0, modes)?;
    let theta0 = obj.pack(start);
    if theta0.len() != obj.dim() {
        return Err(Error::invalid("starting model does not match the fit specification"));
    }
    let outcome = smooth_loop(&mut obj, theta0, spec)?;
    Ok(finish(&obj, spec, kind, outcome))
}

/// Deterministic starting models: start 0 uses `spec.init` as given, later
/// starts jitter it with seeds derived from `spec.seed`.
pub fn start_models(spec: &FitSpec, x: &[f64]) -> Result<Vec<HmmModel>> {
    spec.validate()?;
    let n = spec.n_states();
    let basis = match spec.model {
        ModelKind::Parametric => None,
        _ => Some(spec.basis_for(x)?),
    };
    (0..spec.n_starts)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, s as u64));
            let densities: Vec<ParametricDensity> = spec
                .init
                .iter()
                .map(|d| if s == 0 { *d } else { jitter_density(d, &spec.jitter, &mut rng) })
                .collect();
            let transition = TransitionModel::persistent(n, spec.gamma_diag, spec.delta.clone())?;
            let emission = match &basis {
                None => Emission::Parametric(crate::emissions::ParametricEmission::new(densities)?),
                Some(basis) => {
                    let beta = densities
                        .iter()
                        .map(|d| {
                            let (mean, sd) = d.moments().ok_or_else(|| {
                                Error::Config(format!("initial density {d:?} has no finite sd"))
                            })?;
                            init_from_target(basis, spec.target_family, mean, sd)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Emission::Spline(SplineEmission::new(basis.clone(), beta)?)
                }
            };
            HmmModel::new(transition, emission)
        })
        .collect()
}

fn jitter_density(d: &ParametricDensity, jitter: &JitterSpec, rng: &mut ChaCha8Rng) -> ParametricDensity {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    match *d {
        ParametricDensity::Normal { mean, sd } => ParametricDensity::Normal {
            mean: mean + jitter.mean * sd * std.sample(rng),
            sd: sd * (jitter.log_sd * std.sample(rng)).exp(),
        },
        ParametricDensity::Gamma { mean, sd } => {
            let m = mean + jitter.mean * sd * std.sample(rng);
            ParametricDensity::Gamma {
                mean: if m > 0.0 { m } else { mean * 0.5 },
                sd: sd * (jitter.log_sd * std.sample(rng)).exp(),
            }
        }
        other => {
            let u: Vec<f64> = other
                .unconstrained()
                .iter()
                .map(|v| v + jitter.param * std.sample(rng))
                .collect();
            ParametricDensity::from_unconstrained(other.family(), &u)
        }
    }
}

fn best_of(results: Vec<(usize, Result<FitResult>)>) -> Result<(FitResult, Vec<StartRecord>)> {
    let n_starts = results.len();
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut best: Option<FitResult> = None;
    for (start, r) in results {
        match r {
            Ok(fit) => {
                records.push(StartRecord {
                    start,
                    modes: fit.modes.clone(),
                    loglik: fit.loglik,
                    penalized_loglik: fit.penalized_loglik,
                    converged: fit.converged,
                });
                let better = match &best {
                    None => true,
                    Some(b) => fit.penalized_loglik > b.penalized_loglik,
                };
                if better && fit.penalized_loglik.is_finite() {
                    best = Some(fit);
                }
            }
            Err(e) => diagnostics.push(format!("start {start}: {e}")),
        }
    }
    match best {
        Some(b) => Ok((b, records)),
        None => Err(Error::AllStartsFailed {
            n_starts,
            diagnostics,
        }),
    }
}

/// Runs the requested fit from every start and keeps the best by penalized
/// log-likelihood (ties go to the earlier start).
pub fn multi_start(spec: &FitSpec, x: &[f64]) -> Result<FitResult> {
    spec.validate()?;
    check_finite(x)?;
    if spec.model == ModelKind::Unimodal {
        return search_modes(spec, x);
    }
    let starts = start_models(spec, x)?;
    let no_modes = vec![None; spec.n_states()];
    let results: Vec<(usize, Result<FitResult>)> = starts
        .par_iter()
        .enumerate()
        .map(|(s, m)| (s, select_smoothing(spec, x, &no_modes, m, None)))
        .collect();
    let (mut best, records) = best_of(results)?;
    best.starts = records;
    Ok(best)
}

/// Candidate coefficient modes (1-based) for each state, derived from an
/// unconstrained spline fit.
pub fn mode_candidates(spec: &FitSpec, unconstrained: &SplineEmission) -> Vec<Vec<Option<usize>>> {
    let k = unconstrained.basis.len();
    (0..unconstrained.n_states())
        .map(|i| match spec.mode_choice(i) {
            ModeChoice::Unconstrained => vec![None],
            ModeChoice::Fixed(m) => vec![Some(m)],
            ModeChoice::Candidates(c) => c.into_iter().map(Some).collect(),
            ModeChoice::Peak => {
                let t = tilde_beta(&unconstrained.beta[i], &unconstrained.basis);
                let m = (0..k).max_by(|&a, &b| t[a].total_cmp(&t[b])).unwrap_or(0);
                vec![Some(m + 1)]
            }
            ModeChoice::Auto => {
                let t = tilde_beta(&unconstrained.beta[i], &unconstrained.basis);
                auto_candidates(&t, spec.modes.half_width, spec.modes.ratio)
                    .into_iter()
                    .filter(|m| (1..=k).contains(m))
                    .map(Some)
                    .collect()
            }
        })
        .collect()
}

/// Pruning rule on a `beta~` sequence: a lone boundary mode is kept as is;
/// a single dominant mode is widened by `half_width` on each side; several
/// competing modes span every index between the outermost ones.
pub fn auto_candidates(tilde: &[f64], half_width: usize, ratio: f64) -> Vec<usize> {
    let k = tilde.len();
    let modes = coefficient_modes(tilde);
    if modes.len() == 1 && (modes[0] == 1 || modes[0] == k) {
        return modes;
    }
    let max = tilde.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weight = |m: usize| (tilde[m - 1] - max).exp();
    let primary = *modes
        .iter()
        .max_by(|a, b| weight(**a).total_cmp(&weight(**b)).then(b.cmp(a)))
        .expect("every sequence has a maximum");
    let competing: Vec<usize> = modes
        .iter()
        .copied()
        .filter(|&m| weight(m) >= ratio * weight(primary))
        .collect();
    if competing.len() > 1 {
        let lo = *competing.iter().min().unwrap();
        let hi = *competing.iter().max().unwrap();
        (lo..=hi).collect()
    } else {
        let lo = primary.saturating_sub(half_width).max(1);
        let hi = (primary + half_width).min(k);
        (lo..=hi).collect()
    }
}

/// Cartesian product of per-state candidates.
pub fn mode_combinations(candidates: &[Vec<Option<usize>>]) -> Vec<Vec<Option<usize>>> {
    let mut combos: Vec<Vec<Option<usize>>> = vec![Vec::new()];
    for cands in candidates {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                cands.iter().map(move |c| {
                    let mut next = prefix.clone();
                    next.push(*c);
                    next
                })
            })
            .collect();
    }
    combos
}

/// Every ordered combination `1 <= m_1 <= ... <= m_n <= k`.
pub fn ordered_grid(n: usize, k: usize) -> Vec<Vec<Option<usize>>> {
    fn rec(n: usize, k: usize, from: usize, prefix: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for m in from..=k {
            prefix.push(Some(m));
            rec(n, k, m, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, k, 1, &mut Vec::new(), &mut out);
    out
}

/// Starting coefficients moved onto the constraint set with a margin of
/// `8 / rho` on every first difference.
fn project_start(model: &HmmModel, modes: &[Option<usize>], rho: f64) -> HmmModel {
    let mut out = model.clone();
    if let Emission::Spline(e) = &mut out.emission {
        for (i, m) in modes.iter().enumerate() {
            if let Some(m) = m {
                e.beta[i] = project_unimodal(&e.beta[i], &e.basis, *m, 8.0 / rho);
            }
        }
    }
    out
}

/// Unconstrained multi-start fit followed by the constrained mode search.
pub fn search_modes(spec: &FitSpec, x: &[f64]) -> Result<FitResult> {
    let unconstrained_spec = FitSpec {
        model: ModelKind::Spline,
        ..spec.clone()
    };
    let unconstrained = multi_start(&unconstrained_spec, x)?;
    search_modes_from(spec, x, &unconstrained)
}

/// Constrained fits for every candidate mode combination, started from the
/// projected unconstrained fit and from the projected jittered starts.
pub fn search_modes_from(spec: &FitSpec, x: &[f64], unconstrained: &FitResult) -> Result<FitResult> {
    spec.validate()?;
    let Emission::Spline(e) = &unconstrained.model.emission else {
        return Err(Error::invalid("mode search needs an unconstrained spline fit"));
    };
    let combos = if spec.modes.full_grid {
        ordered_grid(spec.n_states(), e.basis.len())
    } else {
        mode_combinations(&mode_candidates(spec, e))
    };
    let spline_spec = FitSpec {
        model: ModelKind::Unimodal,
        ..spec.clone()
    };
    let mut starts = vec![unconstrained.model.clone()];
    let spline_starts = FitSpec {
        model: ModelKind::Spline,
        ..spec.clone()
    };
    starts.extend(start_models(&spline_starts, x)?.into_iter().skip(1));

    let jobs: Vec<(usize, usize)> = (0..combos.len())
        .flat_map(|c| (0..starts.len()).map(move |s| (c, s)))
        .collect();
    let results: Vec<(usize, Result<FitResult>)> = jobs
        .par_iter()
        .enumerate()
        .map(|(j, &(c, s))| {
            let modes = &combos[c];
            let start = project_start(&starts[s], modes, spec.rho);
            let lambda = (s == 0).then_some(unconstrained.lambda.as_slice());
            (j, select_smoothing(&spline_spec, x, modes, &start, lambda))
        })
        .collect();
    let (mut best, records) = best_of_with_tiebreak(results)?;
    best.starts = records;
    best.n_mode_combinations = combos.len();
    best.n_constrained_fits = jobs.len();
    Ok(best)
}

/// As [`best_of`], breaking exact objective ties toward smaller mode sums.
fn best_of_with_tiebreak(results: Vec<(usize, Result<FitResult>)>) -> Result<(FitResult, Vec<StartRecord>)> {
    let mode_sum = |f: &FitResult| f.modes.iter().flatten().sum::<usize>();
    let n_starts = results.len();
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut best: Option<FitResult> = None;
    for (start, r) in results {
        match r {
            Ok(fit) => {
                records.push(StartRecord {
                    start,
                    modes: fit.modes.clone(),
                    loglik: fit.loglik,
                    penalized_loglik: fit.penalized_loglik,
                    converged: fit.converged,
                });
                if !fit.penalized_loglik.is_finite() {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some(b) => {
                        fit.penalized_loglik > b.penalized_loglik
                            || (fit.penalized_loglik == b.penalized_loglik && mode_sum(&fit) < mode_sum(b))
                    }
                };
                if better {
                    best = Some(fit);
                }
            }
            Err(e) => diagnostics.push(format!("fit {start}: {e}")),
        }
    }
    best.map(|b| (b, records)).ok_or(Error::AllStartsFailed {
        n_starts,
        diagnostics,
    })
}

/// Fits the model described by `spec`.
pub fn fit(spec: &FitSpec, x: &[f64]) -> Result<FitResult> {
    multi_start(spec, x)
}
