//! Synthetic data: Markov-chain HMM sequences, semi-Markov sequences with
//! arbitrary dwell-time distributions, and the two simulation presets.
//!
//! All randomness flows from ChaCha8 generators seeded through
//! [`derive_seed`], so each replicate has its own independent stream.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emissions::{Emission, ParametricDensity, ParametricEmission};
use crate::error::{Error, Result};
use crate::hmm::{DeltaMode, HmmModel, TransitionModel};

pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.9), splitmix64-derived sub-seeds";

/// Sub-seed for stream `index` of `seed` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub mod samplers {
    //! Scalar samplers. Invalid parameters give `Error::InvalidArgument`.

    use rand::Rng;
    use rand_distr::{ChiSquared, Distribution, Gamma, Geometric, Poisson, StandardNormal};

    use crate::error::{Error, Result};

    fn positive(name: &str, v: f64) -> Result<()> {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
        }
    }

    fn finite(name: &str, v: f64) -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("{name} must be finite, got {v}")))
        }
    }

    pub fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> Result<f64> {
        finite("mean", mean)?;
        positive("sd", sd)?;
        let z: f64 = StandardNormal.sample(rng);
        Ok(mean + sd * z)
    }

    /// Gamma draw parameterized by mean and standard deviation.
    pub fn gamma_mean_sd<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> Result<f64> {
        positive("mean", mean)?;
        positive("sd", sd)?;
        let shape = mean * mean / (sd * sd);
        let scale = sd * sd / mean;
        let g = Gamma::new(shape, scale).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(g.sample(rng))
    }

    /// `xi + omega (d |U0| + sqrt(1 - d^2) U1)` with `d = alpha / sqrt(1 + alpha^2)`.
    pub fn skew_normal<R: Rng + ?Sized>(rng: &mut R, xi: f64, omega: f64, alpha: f64) -> Result<f64> {
        finite("xi", xi)?;
        positive("omega", omega)?;
        finite("alpha", alpha)?;
        let d = alpha / (1.0 + alpha * alpha).sqrt();
        let u0: f64 = StandardNormal.sample(rng);
        let u1: f64 = StandardNormal.sample(rng);
        Ok(xi + omega * (d * u0.abs() + (1.0 - d * d).sqrt() * u1))
    }

    /// Location-scale t as a normal over the root of a scaled chi-square.
    pub fn student_t<R: Rng + ?Sized>(rng: &mut R, mu: f64, sigma: f64, nu: f64) -> Result<f64> {
        finite("mu", mu)?;
        positive("sigma", sigma)?;
        positive("nu", nu)?;
        let z: f64 = StandardNormal.sample(rng);
        let chi = ChiSquared::new(nu).map_err(|e| Error::invalid(e.to_string()))?;
        let v: f64 = chi.sample(rng);
        Ok(mu + sigma * z / (v / nu).sqrt())
    }

    pub fn poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> Result<u64> {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::invalid(format!("Poisson rate must be >= 0, got {rate}")));
        }
        if rate == 0.0 {
            return Ok(0);
        }
        let p = Poisson::new(rate).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(p.sample(rng) as u64)
    }

    /// Number of trials up to and including the first success (support 1, 2, ...).
    pub fn geometric<R: Rng + ?Sized>(rng: &mut R, p: f64) -> Result<u64> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid(format!("success probability must lie in (0, 1], got {p}")));
        }
        let g = Geometric::new(p).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(g.sample(rng) + 1)
    }
}

/// Observations with optional true states (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    pub x: Vec<f64>,
    pub states: Option<Vec<usize>>,
}

impl LabeledSeries {
    pub fn unlabeled(x: Vec<f64>) -> Self {
        LabeledSeries { x, states: None }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Sojourn-length distribution on {1, 2, ...}. Poisson components are
/// shifted by one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DwellDistribution {
    Geometric { p: f64 },
    PoissonMixture { weights: Vec<f64>, rates: Vec<f64> },
    ShiftedPoisson { rate: f64 },
}

impl DwellDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            DwellDistribution::Geometric { p } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    return Err(Error::invalid("geometric p must lie in (0, 1]"));
                }
            }
            DwellDistribution::PoissonMixture { weights, rates } => {
                if weights.is_empty() || weights.len() != rates.len() {
                    return Err(Error::invalid("mixture needs matching non-empty weights and rates"));
                }
                if weights.iter().any(|w| !(*w > 0.0 && *w <= 1.0))
                    || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
                {
                    return Err(Error::invalid("mixture weights must lie in (0, 1] and sum to 1"));
                }
                if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                    return Err(Error::invalid("Poisson rates must be >= 0"));
                }
            }
            DwellDistribution::ShiftedPoisson { rate } => {
                if !(rate.is_finite() && *rate >= 0.0) {
                    return Err(Error::invalid("Poisson rate must be >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Probability of a sojourn of exactly `d` steps.
    pub fn pmf(&self, d: u64) -> f64 {
        if d == 0 {
            return 0.0;
        }
        let pois = |rate: f64, k: u64| {
            if rate == 0.0 {
                return if k == 0 { 1.0 } else { 0.0 };
            }
            let k = k as f64;
            (k * rate.ln() - rate - statrs::function::gamma::ln_gamma(k + 1.0)).exp()
        };
        match self {
            DwellDistribution::Geometric { p } => p * (1.0 - p).powi((d - 1) as i32),
            DwellDistribution::PoissonMixture { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| w * pois(*r, d - 1))
                .sum(),
            DwellDistribution::ShiftedPoisson { rate } => pois(*rate, d - 1),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            DwellDistribution::Geometric { p } => 1.0 / p,
            DwellDistribution::PoissonMixture { weights, rates } => {
                1.0 + weights.iter().zip(rates).map(|(w, r)| w * r).sum::<f64>()
            }
            DwellDistribution::ShiftedPoisson { rate } => 1.0 + rate,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u64> {
        match self {
            DwellDistribution::Geometric { p } => samplers::geometric(rng, *p),
            DwellDistribution::PoissonMixture { weights, rates } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut j = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        j = i;
                        break;
                    }
                }
                Ok(1 + samplers::poisson(rng, rates[j])?)
            }
            DwellDistribution::ShiftedPoisson { rate } => Ok(1 + samplers::poisson(rng, *rate)?),
        }
    }
}

/// Draws `S_1 ~ delta`, `S_t | S_{t-1}` from the rows of Gamma and
/// `X_t | S_t` from the emission.
pub fn simulate_hmm(model: &HmmModel, t: usize, delta: &[f64], seed: u64) -> Result<LabeledSeries> {
    let n = model.n_states();
    if delta.len() != n || delta.iter().any(|d| !(*d >= 0.0)) || (delta.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("delta must be a probability vector over the states"));
    }
    let gamma = model.transition.gamma();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(t);
    let mut states = Vec::with_capacity(t);
    let mut s = draw_index(&mut rng, delta.iter().copied());
    for step in 0..t {
        if step > 0 {
            s = draw_index(&mut rng, gamma.row(s).iter().copied());
        }
        states.push(s);
        x.push(model.emission.sample(s, &mut rng));
    }
    Ok(LabeledSeries {
        x,
        states: Some(states),
    })
}

fn draw_index<R: Rng + ?Sized>(rng: &mut R, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Semi-Markov sequence cycling through the states in order; each sojourn
/// length is drawn from that state's dwell distribution and the final
/// sojourn is cut at `t`. The first state is uniform.
pub fn simulate_hsmm(
    dwells: &[DwellDistribution],
    emission: &Emission,
    t: usize,
    seed: u64,
) -> Result<LabeledSeries> {
    let n = dwells.len();
    if n < 2 || emission.n_states() != n {
        return Err(Error::invalid("need at least two states with one dwell distribution each"));
    }
    for d in dwells {
        d.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = rng.random_range(0..n);
    let mut x = Vec::with_capacity(t);
    let mut states = Vec::with_capacity(t);
    while states.len() < t {
        let d = dwells[s].sample(&mut rng)?;
        for _ in 0..d {
            if states.len() == t {
                break;
            }
            states.push(s);
            x.push(emission.sample(s, &mut rng));
        }
        s = (s + 1) % n;
    }
    Ok(LabeledSeries {
        x,
        states: Some(states),
    })
}

/// Sojourn lengths of a state sequence, excluding the final (censored) run.
pub fn sojourns(states: &[usize]) -> Vec<(usize, u64)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < states.len() {
        let mut j = i;
        while j < states.len() && states[j] == states[i] {
            j += 1;
        }
        if j < states.len() {
            out.push((states[i], (j - i) as u64));
        }
        i = j;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    Hmm {
        gamma: Vec<Vec<f64>>,
        delta: Vec<f64>,
        emissions: Vec<ParametricDensity>,
    },
    Hsmm {
        dwells: Vec<DwellDistribution>,
        emissions: Vec<ParametricDensity>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub generator: Generator,
    pub t: usize,
    pub n_replicates: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

impl SimConfig {
    /// Skew-normal / t emissions under a persistent two-state Markov chain.
    pub fn sim1() -> Self {
        SimConfig {
            generator: Generator::Hmm {
                gamma: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
                delta: vec![0.5, 0.5],
                emissions: vec![
                    ParametricDensity::SkewNormal {
                        xi: 0.0,
                        omega: 1.0,
                        alpha: 6.0,
                    },
                    ParametricDensity::StudentT {
                        mu: 3.0,
                        sigma: 1.0,
                        nu: 3.0,
                    },
                ],
            },
            t: 500,
            n_replicates: 100,
            seed: 1,
        }
    }

    /// Gamma emissions under a two-state semi-Markov chain with a bimodal
    /// dwell distribution in state 1.
    pub fn sim2() -> Self {
        SimConfig {
            generator: Generator::Hsmm {
                dwells: vec![
                    DwellDistribution::PoissonMixture {
                        weights: vec![0.7, 0.3],
                        rates: vec![0.1, 15.0],
                    },
                    DwellDistribution::Geometric { p: 0.1 },
                ],
                emissions: vec![
                    ParametricDensity::Gamma { mean: 1.0, sd: 1.0 },
                    ParametricDensity::Gamma { mean: 15.0, sd: 4.0 },
                ],
            },
            t: 1000,
            n_replicates: 100,
            seed: 1,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "sim1" | "experiment1" => Ok(Self::sim1()),
            "sim2" | "experiment2" => Ok(Self::sim2()),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected sim1 or sim2)"))),
        }
    }

    pub fn emissions(&self) -> &[ParametricDensity] {
        match &self.generator {
            Generator::Hmm { emissions, .. } | Generator::Hsmm { emissions, .. } => emissions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.n_replicates == 0 {
            return Err(Error::Config("t and n_replicates must be at least 1".into()));
        }
        for e in self.emissions() {
            e.validate()?;
        }
        match &self.generator {
            Generator::Hmm { gamma, delta, emissions } => {
                let n = emissions.len();
                if gamma.len() != n || gamma.iter().any(|r| r.len() != n) || delta.len() != n {
                    return Err(Error::Config("gamma and delta must match the number of emissions".into()));
                }
                self.hmm_model().map(|_| ())
            }
            Generator::Hsmm { dwells, emissions } => {
                if dwells.len() != emissions.len() || dwells.len() < 2 {
                    return Err(Error::Config("need one dwell distribution per state (at least two)".into()));
                }
                dwells.iter().try_for_each(DwellDistribution::validate)
            }
        }
    }

    /// The generating HMM for Markov-chain configurations.
    pub fn hmm_model(&self) -> Result<HmmModel> {
        let Generator::Hmm { gamma, delta, emissions } = &self.generator else {
            return Err(Error::Config("not a Markov-chain generator".into()));
        };
        let n = emissions.len();
        let g = DMatrix::from_fn(n, n, |i, j| gamma[i][j]);
        HmmModel::new(
            TransitionModel::from_gamma(&g, DeltaMode::Fixed(delta.clone()))?,
            Emission::Parametric(ParametricEmission::new(emissions.clone())?),
        )
    }

    /// Replicate `index` (0-based).
    pub fn replicate(&self, index: usize) -> Result<LabeledSeries> {
        let seed = derive_seed(self.seed, index as u64);
        match &self.generator {
            Generator::Hmm { delta, .. } => simulate_hmm(&self.hmm_model()?, self.t, delta, seed),
            Generator::Hsmm { dwells, emissions } => simulate_hsmm(
                dwells,
                &Emission::Parametric(ParametricEmission::new(emissions.clone())?),
                self.t,
                seed,
            ),
        }
    }

    /// All replicates, generated in parallel.
    pub fn replicates(&self) -> Result<Vec<LabeledSeries>> {
        self.validate()?;
        (0..self.n_replicates)
            .into_par_iter()
            .map(|r| self.replicate(r))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimMetadata {
    pub config: SimConfig,
    pub rng: String,
    pub files: Vec<String>,
    pub package_version: String,
}

/// Writes `<prefix>_r<index>.csv` (1-based index) for every replicate plus
/// `<prefix>_metadata.json`.
pub fn write_replicates(config: &SimConfig, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let series = config.replicates()?;
    std::fs::create_dir_all(dir)?;
    let width = config.n_replicates.to_string().len().max(3);
    let mut paths = Vec::with_capacity(series.len());
    for (r, s) in series.iter().enumerate() {
        let path = dir.join(format!("{prefix}_r{:0width$}.csv", r + 1));
        crate::io::write_series(&path, s)?;
        paths.push(path);
    }
    let meta = SimMetadata {
        config: config.clone(),
        rng: RNG_NAME.to_string(),
        files: paths
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
        package_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    std::fs::write(
        dir.join(format!("{prefix}_metadata.json")),
        serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(paths)
}
