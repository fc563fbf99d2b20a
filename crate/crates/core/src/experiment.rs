//! Replicate-experiment drivers: simulate, fit every model kind, score and
//! aggregate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::emissions::{ParametricDensity, TargetFamily};
use crate::error::{Error, Result};
use crate::eval::{self, SummaryRow};
use crate::fit::{self, FitResult, FitSpec, ModelKind};
use crate::hmm::{local_state_probs, stationary_distribution, viterbi, HmmModel};
use crate::simulate::{derive_seed, LabeledSeries, SimConfig};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Sim1,
    Sim2,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim1" | "experiment1" => Ok(Preset::Sim1),
            "sim2" | "experiment2" => Ok(Preset::Sim2),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected sim1 or sim2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub replicates: usize,
    pub starts: usize,
    pub seed: u64,
    /// Series length; defaults to the preset's.
    pub t: Option<usize>,
    /// Basis size; 40 for sim1 and 30 for sim2 by default.
    pub k: Option<usize>,
    pub kappa: f64,
    pub rho: f64,
    pub half_width: usize,
    pub mode_grid: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preset: Preset::Sim1,
            replicates: 20,
            starts: 5,
            seed: 1,
            t: None,
            k: None,
            kappa: crate::constraints::DEFAULT_KAPPA,
            rho: crate::constraints::DEFAULT_RHO,
            half_width: 1,
            mode_grid: fit::MODE_GRID,
        }
    }
}

impl ExperimentConfig {
    pub fn new(preset: Preset) -> Self {
        ExperimentConfig {
            preset,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.starts == 0 {
            return Err(Error::Config("replicates and starts must be at least 1".into()));
        }
        if self.mode_grid < 100 {
            return Err(Error::Config("mode_grid must be at least 100".into()));
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        let mut c = match self.preset {
            Preset::Sim1 => SimConfig::sim1(),
            Preset::Sim2 => SimConfig::sim2(),
        };
        c.n_replicates = self.replicates;
        c.seed = self.seed;
        if let Some(t) = self.t {
            c.t = t;
        }
        c
    }

    /// Model kinds fitted to every replicate, with their labels.
    pub fn fit_specs(&self, replicate: usize) -> Vec<(String, FitSpec)> {
        let truth = self.sim_config().emissions().to_vec();
        let seed = derive_seed(self.seed ^ 0x5EED, replicate as u64);
        let targets: Vec<ParametricDensity> = truth
            .iter()
            .map(|d| {
                let (mean, sd) = d.moments().expect("preset densities have finite moments");
                match self.preset {
                    Preset::Sim1 => ParametricDensity::Normal { mean, sd },
                    Preset::Sim2 => ParametricDensity::Gamma { mean, sd },
                }
            })
            .collect();
        let base = FitSpec {
            n_starts: self.starts,
            seed,
            kappa: self.kappa,
            rho: self.rho,
            k: self.k.unwrap_or(match self.preset {
                Preset::Sim1 => 40,
                Preset::Sim2 => 30,
            }),
            target_family: match self.preset {
                Preset::Sim1 => TargetFamily::Normal,
                Preset::Sim2 => TargetFamily::Gamma,
            },
            init: targets.clone(),
            modes: fit::ModeSearchSpec {
                half_width: self.half_width,
                ..Default::default()
            },
            ..Default::default()
        };
        let spline = FitSpec {
            model: ModelKind::Spline,
            ..base.clone()
        };
        let unimodal = FitSpec {
            model: ModelKind::Unimodal,
            ..base.clone()
        };
        match self.preset {
            Preset::Sim1 => vec![
                (
                    "true_parametric".into(),
                    FitSpec {
                        model: ModelKind::Parametric,
                        init: truth,
                        ..base.clone()
                    },
                ),
                (
                    "normal".into(),
                    FitSpec {
                        model: ModelKind::Parametric,
                        ..base.clone()
                    },
                ),
                ("spline".into(), spline),
                ("unimodal".into(), unimodal),
            ],
            Preset::Sim2 => vec![
                (
                    "gamma".into(),
                    FitSpec {
                        model: ModelKind::Parametric,
                        ..base.clone()
                    },
                ),
                ("spline".into(), spline),
                ("unimodal".into(), unimodal),
            ],
        }
    }
}

/// Scores of one fitted model on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub summary: SummaryRow,
    /// Fitted weighted density of each state at the true mode of that state.
    pub weighted_at_true_mode: Vec<f64>,
    /// `true weight * true density` at the same points.
    pub true_weighted_at_mode: Vec<f64>,
    pub lambda: Vec<f64>,
    pub modes: Vec<Option<usize>>,
    pub n_constrained_fits: usize,
    pub n_outer_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<ModelRecord>,
}

/// Swaps the labels of a two-state fit if that improves agreement between
/// the Viterbi path and the true states.
fn align_two_states(probs: &mut nalgebra::DMatrix<f64>, path: &mut [usize], truth: &[usize]) {
    if probs.ncols() != 2 {
        return;
    }
    let agree = path.iter().zip(truth).filter(|(a, b)| a == b).count();
    if 2 * agree < path.len() {
        probs.swap_columns(0, 1);
        path.iter_mut().for_each(|s| *s = 1 - *s);
    }
}

/// Scores a fitted model against a labeled series.
pub fn score(
    replicate: usize,
    label: &str,
    fit: &FitResult,
    series: &LabeledSeries,
    truth_densities: &[ParametricDensity],
    truth_weights: &[f64],
    mode_grid: usize,
) -> Result<ModelRecord> {
    let model: &HmmModel = &fit.model;
    let mut probs = local_state_probs(model, &series.x)?;
    let mut path = viterbi(model, &series.x)?;
    let mut aligned_model_swap = false;
    let auc = match &series.states {
        Some(truth) if model.n_states() == 2 => {
            let before = path.clone();
            align_two_states(&mut probs, &mut path, truth);
            aligned_model_swap = before != path;
            let labels: Vec<bool> = truth.iter().map(|s| *s == 0).collect();
            let scores: Vec<f64> = probs.column(0).iter().copied().collect();
            eval::auc(&scores, &labels).ok().map(|r| r.auc)
        }
        _ => None,
    };
    let n = model.n_states();
    let perm: Vec<usize> = if aligned_model_swap { vec![1, 0] } else { (0..n).collect() };
    let gamma = model.transition.gamma();
    let weights = stationary_distribution(&gamma);
    let gamma_entries: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| gamma[(perm[i], perm[j])])
        .collect();
    let counts = eval::mode_counts(model, mode_grid);
    let mode_counts = perm.iter().map(|&p| counts[p]).collect();
    let (weighted_at_true_mode, true_weighted_at_mode) = truth_densities
        .iter()
        .enumerate()
        .take(n)
        .map(|(i, d)| {
            let m = d.mode();
            let fitted = weights[perm[i]] * model.emission.density(perm[i], m);
            (fitted, truth_weights[i] * d.pdf(m))
        })
        .unzip();
    Ok(ModelRecord {
        summary: SummaryRow {
            replicate: replicate + 1,
            model_kind: label.to_string(),
            loglik: fit.loglik,
            auc,
            gamma: gamma_entries,
            mode_counts,
            switch_count: eval::switch_count(&path),
            converged: fit.converged,
        },
        weighted_at_true_mode,
        true_weighted_at_mode,
        lambda: fit.lambda.clone(),
        modes: fit.modes.clone(),
        n_constrained_fits: fit.n_constrained_fits,
        n_outer_iterations: fit.n_outer_iterations,
    })
}

fn fit_replicate(cfg: &ExperimentConfig, r: usize, series: &LabeledSeries) -> Result<Vec<ModelRecord>> {
    let truth = cfg.sim_config().emissions().to_vec();
    let weights = vec![1.0 / truth.len() as f64; truth.len()];
    let specs = cfg.fit_specs(r);
    let mut fits: Vec<(String, FitResult)> = Vec::new();
    for (label, spec) in &specs {
        let f = match spec.model {
            ModelKind::Unimodal => {
                let spline = fits.iter().find(|(l, _)| l == "spline").map(|(_, f)| f);
                match spline {
                    Some(s) => fit::search_modes_from(spec, &series.x, s)?,
                    None => fit::fit(spec, &series.x)?,
                }
            }
            _ => fit::fit(spec, &series.x)?,
        };
        log::info!("replicate {} {label}: loglik {:.3}", r + 1, f.loglik);
        fits.push((label.clone(), f));
    }
    fits.iter()
        .map(|(label, f)| score(r, label, f, series, &truth, &weights, cfg.mode_grid))
        .collect()
}

/// Runs every replicate in parallel; results are ordered by replicate.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let series = cfg.sim_config().replicates()?;
    let per_rep: Vec<Result<Vec<ModelRecord>>> = series
        .par_iter()
        .enumerate()
        .map(|(r, s)| fit_replicate(cfg, r, s))
        .collect();
    let mut records = Vec::new();
    for r in per_rep {
        records.extend(r?);
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        records,
    })
}

/// Aggregate statistics for one model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model_kind: String,
    pub n: usize,
    pub n_converged: usize,
    pub median_auc: Option<f64>,
    pub mean_auc: Option<f64>,
    pub mean_gamma_11: f64,
    pub mean_gamma_22: f64,
    pub sd_gamma_22: f64,
    pub mean_dwell_2: f64,
    pub frac_multimodal_1: Option<f64>,
    pub frac_multimodal_2: Option<f64>,
    /// Median ratio of fitted to true weighted density at each true mode.
    pub median_mode_ratio_1: f64,
    pub median_mode_ratio_2: f64,
}

impl ExperimentResult {
    pub fn model_kinds(&self) -> Vec<String> {
        let mut kinds: Vec<String> = Vec::new();
        for r in &self.records {
            if !kinds.contains(&r.summary.model_kind) {
                kinds.push(r.summary.model_kind.clone());
            }
        }
        kinds
    }

    pub fn records_for(&self, kind: &str) -> Vec<&ModelRecord> {
        self.records.iter().filter(|r| r.summary.model_kind == kind).collect()
    }

    pub fn aggregate(&self) -> Vec<Aggregate> {
        self.model_kinds()
            .into_iter()
            .map(|kind| {
                let recs = self.records_for(&kind);
                let aucs: Vec<f64> = recs.iter().filter_map(|r| r.summary.auc).collect();
                let g11: Vec<f64> = recs.iter().map(|r| r.summary.gamma_entry(0, 0)).collect();
                let g22: Vec<f64> = recs.iter().map(|r| r.summary.gamma_entry(1, 1)).collect();
                let dwell: Vec<f64> = g22.iter().map(|g| 1.0 / (1.0 - g)).collect();
                let frac = |state: usize| {
                    let c: Vec<usize> = recs.iter().filter_map(|r| r.summary.mode_counts[state]).collect();
                    (!c.is_empty()).then(|| c.iter().filter(|m| **m >= 2).count() as f64 / c.len() as f64)
                };
                let ratio = |state: usize| {
                    let v: Vec<f64> = recs
                        .iter()
                        .map(|r| r.weighted_at_true_mode[state] / r.true_weighted_at_mode[state])
                        .collect();
                    eval::median(&v).unwrap_or(f64::NAN)
                };
                let (m22, s22) = eval::mean_sd(&g22).unwrap_or((f64::NAN, f64::NAN));
                Aggregate {
                    n: recs.len(),
                    n_converged: recs.iter().filter(|r| r.summary.converged).count(),
                    median_auc: eval::median(&aucs),
                    mean_auc: eval::mean_sd(&aucs).map(|m| m.0),
                    mean_gamma_11: eval::mean_sd(&g11).map(|m| m.0).unwrap_or(f64::NAN),
                    mean_gamma_22: m22,
                    sd_gamma_22: s22,
                    mean_dwell_2: eval::mean_sd(&dwell).map(|m| m.0).unwrap_or(f64::NAN),
                    frac_multimodal_1: frac(0),
                    frac_multimodal_2: frac(1),
                    median_mode_ratio_1: ratio(0),
                    median_mode_ratio_2: ratio(1),
                    model_kind: kind,
                }
            })
            .collect()
    }

    /// Writes `summary.csv`, `aggregate.csv` and `records.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let rows: Vec<SummaryRow> = self.records.iter().map(|r| r.summary.clone()).collect();
        eval::write_summary(&dir.join("summary.csv"), &rows)?;
        let mut w = csv::Writer::from_path(dir.join("aggregate.csv"))?;
        for a in self.aggregate() {
            w.serialize(a)?;
        }
        w.flush()?;
        std::fs::write(dir.join("records.json"), serde_json::to_string_pretty(&self.records)?)?;
        Ok(())
    }
}
