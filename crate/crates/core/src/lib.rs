//! Hidden Markov models whose state-dependent densities are penalized
//! cubic B-spline mixtures, optionally constrained to be unimodal.
//!
//! Modules roughly follow the estimation pipeline:
//!
//! * [`splines`]: equidistant cubic B-spline bases and difference penalties
//! * [`emissions`]: spline and parametric state-dependent densities
//! * [`constraints`]: unimodality constraints and their smooth penalty
//! * [`hmm`]: transition model, forward/backward, decoding
//! * [`fit`]: penalized likelihood, smoothing selection, mode search
//! * [`simulate`], [`eval`], [`experiment`]: data generation and scoring
//! * [`config`], [`io`], [`cli`]: files and the `unihmm` command

pub mod cli;
pub mod config;
pub mod constraints;
pub mod emissions;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fit;
pub mod hmm;
pub mod io;
pub mod simulate;
pub mod splines;

pub use emissions::{Emission, ParametricDensity, SplineEmission};
pub use error::{Error, Result};
pub use fit::{FitResult, FitSpec, ModelKind};
pub use hmm::{HmmModel, TransitionModel};
pub use simulate::LabeledSeries;
pub use splines::SplineBasis;
