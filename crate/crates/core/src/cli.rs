//! Command-line entry point behind the `unihmm` binary.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 runtime.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{DataSection, RunConfig};
use crate::emissions::{Family, ParametricDensity, TargetFamily};
use crate::error::{Error, Result};
use crate::eval::{self, SummaryRow};
use crate::experiment::{self, ExperimentConfig, Preset};
use crate::fit::{self, FitResult, FitSpec, ModeChoice};
use crate::hmm::{local_state_probs, viterbi};
use crate::io::{self, Decoded};
use crate::simulate;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "unihmm", version, about = "Spline-based hidden Markov models with unimodal state densities")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "UNIHMM_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write simulated replicate CSVs and metadata.
    Simulate(SimulateArgs),
    /// Fit a model to a CSV with an `x` column.
    Fit(FitArgs),
    /// Local and Viterbi decoding with a saved fit.
    Decode(DecodeArgs),
    /// Summarize decoded CSVs that carry true states.
    Evaluate(EvaluateArgs),
    /// Simulate, fit every model kind, score and aggregate.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset name (sim1 or sim2), used when no config is given.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub prefix: Option<String>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Initial state density, e.g. `gamma:15:4` or `normal:0:1`; repeat per state.
    #[arg(long = "init")]
    pub init: Vec<String>,
    /// Spline initialization target, `normal` or `gamma` (default: gamma when every `--init` is gamma).
    #[arg(long)]
    pub target_family: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub half_width: Option<usize>,
    /// Per-state mode choice: `auto`, `peak`, `none`, an index, or `a,b,c`.
    #[arg(long = "mode")]
    pub modes: Vec<String>,
    #[arg(long)]
    pub full_grid: bool,
    #[arg(long)]
    pub anneal: bool,
    /// Offset removed from every observation (raw max-depth files).
    #[arg(long)]
    pub subtract: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub grid: usize,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `fit_result.json` written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub subtract: f64,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Decoded CSVs with a `state` column.
    #[arg(required = true)]
    pub decoded: Vec<PathBuf>,
    /// Matching fit results (optional; one per decoded file).
    #[arg(long = "fit")]
    pub fits: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one ROC table per file next to the summary.
    #[arg(long)]
    pub roc: bool,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    pub preset: String,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "experiment_out")]
    pub out: PathBuf,
}

/// Parses `family:p1:p2[:p3]`.
pub fn parse_density(s: &str) -> Result<ParametricDensity> {
    let parts: Vec<&str> = s.split(':').collect();
    let family: Family = parts[0].parse()?;
    let nums = parts[1..]
        .iter()
        .map(|p| p.parse::<f64>().map_err(|_| Error::Config(format!("bad number `{p}` in `{s}`"))))
        .collect::<Result<Vec<f64>>>()?;
    let need = ParametricDensity::n_params(family);
    if nums.len() != need {
        return Err(Error::Config(format!("`{s}`: {family:?} takes {need} parameters")));
    }
    let d = match family {
        Family::Normal => ParametricDensity::Normal { mean: nums[0], sd: nums[1] },
        Family::Gamma => ParametricDensity::Gamma { mean: nums[0], sd: nums[1] },
        Family::SkewNormal => ParametricDensity::SkewNormal { xi: nums[0], omega: nums[1], alpha: nums[2] },
        Family::StudentT => ParametricDensity::StudentT { mu: nums[0], sigma: nums[1], nu: nums[2] },
    };
    d.validate()?;
    Ok(d)
}

pub fn parse_mode_choice(s: &str) -> Result<ModeChoice> {
    let bad = || Error::Config(format!("bad mode choice `{s}`"));
    match s {
        "auto" => Ok(ModeChoice::Auto),
        "peak" => Ok(ModeChoice::Peak),
        "none" | "unconstrained" => Ok(ModeChoice::Unconstrained),
        _ if s.contains(',') => s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()
            .map(ModeChoice::Candidates),
        _ => s.parse::<usize>().map(ModeChoice::Fixed).map_err(|_| bad()),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn simulate_cmd(a: &SimulateArgs) -> Result<()> {
    let mut run = load_config(a.config.as_deref())?;
    let mut sim = run.simulation.clone().unwrap_or_default();
    if let Some(p) = &a.preset {
        sim.preset = Some(p.parse()?);
        sim.generator = None;
    }
    if sim.preset.is_none() && sim.generator.is_none() {
        return Err(Error::Config("give --preset or a config with a [simulation] section".into()));
    }
    sim.n_replicates = a.replicates.or(sim.n_replicates);
    sim.seed = a.seed.or(sim.seed);
    sim.t = a.t.or(sim.t);
    sim.prefix = a.prefix.clone().or(sim.prefix);
    let resolved = sim.resolved()?;
    let cfg = resolved.resolve()?;
    let paths = simulate::write_replicates(&cfg, &a.out, &resolved.prefix())?;
    run.simulation = Some(resolved);
    run.write_resolved(&a.out)?;
    log::info!("wrote {} replicate files to {}", paths.len(), a.out.display());
    Ok(())
}

fn fit_spec_from(a: &FitArgs, run: &RunConfig) -> Result<FitSpec> {
    let mut spec = run.fit.clone().unwrap_or_default();
    if let Some(m) = &a.model {
        spec.model = m.parse()?;
    }
    if !a.init.is_empty() {
        spec.init = a.init.iter().map(|s| parse_density(s)).collect::<Result<_>>()?;
        if spec.init.iter().all(|d| matches!(d, ParametricDensity::Gamma { .. })) {
            spec.target_family = TargetFamily::Gamma;
        }
    }
    match a.target_family.as_deref() {
        None => {}
        Some("normal") => spec.target_family = TargetFamily::Normal,
        Some("gamma") => spec.target_family = TargetFamily::Gamma,
        Some(other) => return Err(Error::Config(format!("unknown target family `{other}`"))),
    }
    if let Some(k) = a.k {
        spec.k = k;
    }
    if let Some(s) = a.starts {
        spec.n_starts = s;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(k) = a.kappa {
        spec.kappa = k;
    }
    if let Some(r) = a.rho {
        spec.rho = r;
    }
    if let Some(h) = a.half_width {
        spec.modes.half_width = h;
    }
    if !a.modes.is_empty() {
        spec.modes.per_state = a.modes.iter().map(|s| parse_mode_choice(s)).collect::<Result<_>>()?;
    }
    spec.modes.full_grid |= a.full_grid;
    spec.anneal_kappa |= a.anneal;
    spec.validate()?;
    Ok(spec)
}

fn fit_cmd(a: &FitArgs) -> Result<()> {
    let mut run = load_config(a.config.as_deref())?;
    let mut data = run.data.clone().unwrap_or_default();
    if let Some(p) = &a.data {
        data.path = Some(p.clone());
    }
    if let Some(s) = a.subtract {
        data.subtract = s;
    }
    let path = data
        .path
        .clone()
        .ok_or_else(|| Error::Config("no data file (use --data or [data].path)".into()))?;
    let series = io::read_series(&path, data.subtract)?;
    let spec = fit_spec_from(a, &run)?;
    let result = fit::fit(&spec, &series.x)?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("fit_result.json"), serde_json::to_string_pretty(&result)?)?;
    let (lo, hi) = series
        .x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let grid = eval::density_grid(&result.model, a.grid, Some((lo, hi)))?;
    eval::write_density_grid(&a.out.join("density_grid.csv"), &grid)?;
    run.data = Some(DataSection {
        path: Some(path),
        subtract: data.subtract,
    });
    run.fit = Some(spec);
    run.write_resolved(&a.out)?;
    println!(
        "model={} loglik={:.4} penalized={:.4} converged={} lambda={:?} modes={:?}",
        result.kind, result.loglik, result.penalized_loglik, result.converged, result.lambda, result.modes
    );
    Ok(())
}

pub fn load_fit(path: &Path) -> Result<FitResult> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn decode_cmd(a: &DecodeArgs) -> Result<()> {
    let series = io::read_series(&a.data, a.subtract)?;
    let fit = load_fit(&a.fit)?;
    let probs = local_state_probs(&fit.model, &series.x)?;
    let path = viterbi(&fit.model, &series.x)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    io::write_decoded(
        &a.out,
        &Decoded {
            x: series.x,
            truth: series.states,
            viterbi: path,
            probs,
        },
    )?;
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    if !a.fits.is_empty() && a.fits.len() != a.decoded.len() {
        return Err(Error::Config("give one --fit per decoded file or none".into()));
    }
    let mut rows = Vec::new();
    for (r, path) in a.decoded.iter().enumerate() {
        let d = io::read_decoded(path)?;
        let auc = match &d.truth {
            Some(truth) if d.probs.ncols() == 2 => {
                let labels: Vec<bool> = truth.iter().map(|s| *s == 0).collect();
                let scores: Vec<f64> = d.probs.column(0).iter().copied().collect();
                let roc = eval::auc(&scores, &labels)?;
                if a.roc {
                    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    let dir = a.out.parent().unwrap_or(Path::new("."));
                    eval::write_roc(&dir.join(format!("{stem}_roc.csv")), &roc)?;
                }
                Some(roc.auc)
            }
            Some(_) => None,
            None => {
                return Err(Error::Config(format!("{}: no `state` column with true labels", path.display())))
            }
        };
        let (kind, loglik, gamma, mode_counts, converged) = match a.fits.get(r) {
            Some(fp) => {
                let f = load_fit(fp)?;
                let g = f.gamma();
                let n = g.nrows();
                (
                    f.kind.to_string(),
                    f.loglik,
                    (0..n * n).map(|k| g[(k / n, k % n)]).collect(),
                    eval::mode_counts(&f.model, fit::MODE_GRID),
                    f.converged,
                )
            }
            None => ("unknown".to_string(), f64::NAN, Vec::new(), Vec::new(), true),
        };
        rows.push(SummaryRow {
            replicate: r + 1,
            model_kind: kind,
            loglik,
            auc,
            gamma,
            mode_counts,
            switch_count: eval::switch_count(&d.viterbi),
            converged,
        });
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    eval::write_summary(&a.out, &rows)
}

fn experiment_cmd(a: &ExperimentArgs) -> Result<()> {
    let mut run = load_config(a.config.as_deref())?;
    let preset: Preset = a.preset.parse()?;
    let mut cfg = run.experiment.clone().unwrap_or_else(|| ExperimentConfig::new(preset));
    cfg.preset = preset;
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if let Some(s) = a.starts {
        cfg.starts = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.t.is_some() {
        cfg.t = a.t;
    }
    let result = experiment::run(&cfg)?;
    result.write(&a.out)?;
    run.experiment = Some(cfg);
    run.write_resolved(&a.out)?;
    for g in result.aggregate() {
        println!(
            "{:>16}: median AUC {} | mean gamma_22 {:.4} | multimodal state 2 {}",
            g.model_kind,
            g.median_auc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "NA".into()),
            g.mean_gamma_22,
            g.frac_multimodal_2.map(|v| format!("{v:.2}")).unwrap_or_else(|| "NA".into()),
        );
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // Fails only if a pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Experiment(a) => experiment_cmd(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimSection;
    use crate::fit::ModelKind;

    #[test]
    fn density_parsing() {
        assert_eq!(parse_density("gamma:15:4").unwrap(), ParametricDensity::Gamma { mean: 15.0, sd: 4.0 });
        assert!(parse_density("normal:0").is_err());
        assert!(parse_density("normal:0:-1").is_err());
        assert!(parse_density("weibull:1:1").is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(parse_mode_choice("1").unwrap(), ModeChoice::Fixed(1));
        assert_eq!(parse_mode_choice("auto").unwrap(), ModeChoice::Auto);
        assert_eq!(parse_mode_choice("peak").unwrap(), ModeChoice::Peak);
        assert_eq!(parse_mode_choice("3,4,5").unwrap(), ModeChoice::Candidates(vec![3, 4, 5]));
        assert!(parse_mode_choice("x").is_err());
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run(["unihmm", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["unihmm", "fit"]), EXIT_USAGE);
    }

    #[test]
    fn unknown_preset_is_validation() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_string_lossy().into_owned();
        assert_eq!(run(["unihmm", "simulate", "--preset", "sim9", "--out", &out]), EXIT_VALIDATION);
    }

    #[test]
    fn model_kind_parse() {
        assert_eq!("unimodal".parse::<ModelKind>().unwrap(), ModelKind::Unimodal);
        let _ = SimSection::default();
    }
}
