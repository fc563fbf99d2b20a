//! Unconstrained versus unimodal spline fits on a sim2 replicate, where the
//! semi-Markov dwell times tend to produce a spurious second mode in state 2.
//!
//! cargo run --release --example mode_search -- [replicate]

use unimodal_hmm::emissions::Emission;
use unimodal_hmm::experiment::{ExperimentConfig, Preset};
use unimodal_hmm::fit::{self, mode_candidates, mode_combinations};

fn main() -> unimodal_hmm::Result<()> {
    let rep: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = ExperimentConfig::new(Preset::Sim2);
    cfg.starts = 2;
    let series = cfg.sim_config().replicate(rep)?;
    let specs = cfg.fit_specs(rep);
    let spline_spec = &specs.iter().find(|(l, _)| l == "spline").unwrap().1;
    let uni_spec = &specs.iter().find(|(l, _)| l == "unimodal").unwrap().1;

    let spline = fit::fit(spline_spec, &series.x)?;
    println!("unconstrained: loglik {:.3}, mode counts {:?}, gamma_22 {:.4}", spline.loglik, spline.mode_counts(), spline.gamma()[(1, 1)]);

    if let Emission::Spline(e) = &spline.model.emission {
        let candidates = mode_candidates(uni_spec, e);
        println!("candidate modes per state: {candidates:?}");
        println!("{} combinations", mode_combinations(&candidates).len());
    }

    let uni = fit::search_modes_from(uni_spec, &series.x, &spline)?;
    println!(
        "unimodal: modes {:?}, loglik {:.3}, mode counts {:?}, gamma_22 {:.4}, violation {:.1e}, {} fits",
        uni.modes,
        uni.loglik,
        uni.mode_counts(),
        uni.gamma()[(1, 1)],
        uni.unimodality_penalty,
        uni.n_constrained_fits
    );
    let mut by_combo: Vec<_> = uni.starts.iter().collect();
    by_combo.sort_by(|a, b| b.penalized_loglik.total_cmp(&a.penalized_loglik));
    for r in by_combo.iter().take(5) {
        println!("  modes {:?}: penalized loglik {:.3}", r.modes, r.penalized_loglik);
    }
    Ok(())
}
