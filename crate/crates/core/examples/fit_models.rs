//! Fits every model kind of a simulation preset to one replicate and
//! prints log-likelihoods, smoothing weights, modes and AUCs.
//!
//! cargo run --release --example fit_models -- [sim1|sim2] [replicate] [starts]

use std::time::Instant;

use unimodal_hmm::eval::auc;
use unimodal_hmm::experiment::{ExperimentConfig, Preset};
use unimodal_hmm::fit::{self, ModelKind};
use unimodal_hmm::hmm::local_state_probs;

fn main() -> unimodal_hmm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let preset: Preset = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(Preset::Sim1);
    let rep: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let starts: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut cfg = ExperimentConfig::new(preset);
    cfg.starts = starts;
    let series = cfg.sim_config().replicate(rep)?;
    let truth: Vec<bool> = series.states.as_ref().unwrap().iter().map(|s| *s == 0).collect();

    let mut spline_fit = None;
    for (label, spec) in cfg.fit_specs(rep) {
        let t0 = Instant::now();
        let result = match (spec.model, &spline_fit) {
            (ModelKind::Unimodal, Some(s)) => fit::search_modes_from(&spec, &series.x, s)?,
            _ => fit::fit(&spec, &series.x)?,
        };
        let probs = local_state_probs(&result.model, &series.x)?;
        let p1: Vec<f64> = probs.column(0).iter().copied().collect();
        let a = auc(&p1, &truth)?.auc;
        let a = a.max(1.0 - a);
        println!(
            "{label:>16}  loglik {:9.3}  AUC {a:.4}  gamma diag {:.3?}  mode counts {:?}  lambda {:?}  modes {:?}  converged {}  outer {}  fits {}  {:.1}s",
            result.loglik,
            result.gamma().diagonal().as_slice(),
            result.mode_counts(),
            result.lambda.iter().map(|l| format!("{l:.3}")).collect::<Vec<_>>(),
            result.modes,
            result.converged,
            result.n_outer_iterations,
            result.n_constrained_fits,
            t0.elapsed().as_secs_f64()
        );
        for w in &result.warnings {
            println!("    warning: {w}");
        }
        if spec.model == ModelKind::Spline {
            spline_fit = Some(result);
        }
    }
    Ok(())
}
