//! Fits a two-state HMM with penalized spline emissions to one sim1
//! replicate and prints the smoothing-weight iterations.
//!
//! cargo run --release --example fit_spline

use unimodal_hmm::emissions::{mode_count, Emission, ParametricDensity};
use unimodal_hmm::fit::{self, FitSpec, ModelKind};
use unimodal_hmm::simulate::SimConfig;

fn main() -> unimodal_hmm::Result<()> {
    let series = SimConfig::sim1().replicate(0)?;
    let spec = FitSpec {
        model: ModelKind::Spline,
        init: vec![
            ParametricDensity::Normal { mean: 0.5, sd: 1.0 },
            ParametricDensity::Normal { mean: 3.0, sd: 1.0 },
        ],
        k: 40,
        n_starts: 2,
        ..Default::default()
    };
    let result = fit::fit(&spec, &series.x)?;

    println!("iter  lambda_1    lambda_2    penalized loglik  criterion");
    for (i, it) in result.smoothing_trace.iter().enumerate() {
        println!(
            "{:>4}  {:<10.4} {:<10.4}  {:>14.4}  {:>10.4}",
            i + 1,
            it.lambda[0],
            it.lambda[1],
            it.penalized_loglik,
            it.criterion
        );
    }
    println!("final lambda {:.4?}", result.lambda);
    println!("loglik {:.4}, penalized {:.4}, converged {}", result.loglik, result.penalized_loglik, result.converged);
    println!("Gamma:\n{:.4}", result.gamma());
    if let Emission::Spline(e) = &result.model.emission {
        for i in 0..2 {
            println!("state {} density has {} local maxima", i + 1, mode_count(e, i, fit::MODE_GRID)?);
        }
    }
    for s in &result.starts {
        println!("start {}: penalized loglik {:.4}", s.start, s.penalized_loglik);
    }
    Ok(())
}
