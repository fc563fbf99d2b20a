//! Scores a fitted model against known states: ROC curve and AUC, switch
//! counts, implied dwell times and a density grid written as CSV.
//!
//! cargo run --release --example evaluate -- [out_dir]

use std::path::PathBuf;

use unimodal_hmm::emissions::ParametricDensity;
use unimodal_hmm::eval::{auc, density_grid, implied_dwell, switch_count, write_density_grid, write_roc};
use unimodal_hmm::fit::{self, FitSpec, ModelKind};
use unimodal_hmm::hmm::{local_state_probs, viterbi};
use unimodal_hmm::simulate::SimConfig;

fn main() -> unimodal_hmm::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("unihmm_eval"));
    std::fs::create_dir_all(&out)?;
    let series = SimConfig::sim1().replicate(1)?;
    let truth = series.states.as_ref().unwrap();
    let spec = FitSpec {
        model: ModelKind::Parametric,
        init: vec![
            ParametricDensity::Normal { mean: 0.5, sd: 1.0 },
            ParametricDensity::Normal { mean: 3.0, sd: 1.0 },
        ],
        n_starts: 3,
        ..Default::default()
    };
    let result = fit::fit(&spec, &series.x)?;

    let probs = local_state_probs(&result.model, &series.x)?;
    let p2: Vec<f64> = probs.column(1).iter().copied().collect();
    let labels: Vec<bool> = truth.iter().map(|&s| s == 1).collect();
    let roc = auc(&p2, &labels)?;
    println!("AUC {:.4} from {} thresholds", roc.auc, roc.thresholds.len());

    let path = viterbi(&result.model, &series.x)?;
    println!("switches: truth {}, Viterbi {}", switch_count(truth), switch_count(&path));
    let gamma = result.gamma();
    for i in 0..2 {
        println!("state {}: implied mean dwell {:.2}", i + 1, implied_dwell(&gamma, i)?);
    }

    write_roc(&out.join("roc.csv"), &roc)?;
    let lo = series.x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid = density_grid(&result.model, 200, Some((lo, hi)))?;
    write_density_grid(&out.join("density_grid.csv"), &grid)?;
    println!("wrote roc.csv and density_grid.csv to {}", out.display());
    Ok(())
}
