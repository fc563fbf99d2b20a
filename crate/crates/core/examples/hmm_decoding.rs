//! Log-likelihood, local decoding and Viterbi decoding for a two-state HMM
//! with normal emissions.
//!
//! cargo run --example hmm_decoding

use nalgebra::DMatrix;
use unimodal_hmm::emissions::{Emission, ParametricDensity, ParametricEmission};
use unimodal_hmm::eval::switch_count;
use unimodal_hmm::hmm::{local_state_probs, log_likelihood, viterbi, DeltaMode, HmmModel, TransitionModel};
use unimodal_hmm::simulate::simulate_hmm;

fn main() -> unimodal_hmm::Result<()> {
    let gamma = DMatrix::from_row_slice(2, 2, &[0.95, 0.05, 0.1, 0.9]);
    let transition = TransitionModel::from_gamma(&gamma, DeltaMode::Stationary)?;
    let emission = Emission::Parametric(ParametricEmission::new(vec![
        ParametricDensity::Normal { mean: 0.0, sd: 1.0 },
        ParametricDensity::Normal { mean: 3.0, sd: 1.5 },
    ])?);
    let model = HmmModel::new(transition, emission)?;
    let delta = model.transition.delta();
    println!("stationary delta: {delta:.4?}");

    let series = simulate_hmm(&model, 200, &delta, 11)?;
    let truth = series.states.as_ref().unwrap();
    println!("log-likelihood: {:.4}", log_likelihood(&model, &series.x)?);

    let probs = local_state_probs(&model, &series.x)?;
    let path = viterbi(&model, &series.x)?;
    let local: Vec<usize> = (0..series.x.len())
        .map(|t| if probs[(t, 1)] > probs[(t, 0)] { 1 } else { 0 })
        .collect();
    let agree = |a: &[usize]| a.iter().zip(truth).filter(|(u, v)| u == v).count();
    println!("local decoding matches truth at {} of {} steps", agree(&local), truth.len());
    println!("Viterbi matches truth at {} of {} steps", agree(&path), truth.len());
    println!("switches: truth {}, Viterbi {}", switch_count(truth), switch_count(&path));
    for t in 0..8 {
        println!("t={t:>2} x={:7.3} truth={} viterbi={} P(state 2)={:.3}", series.x[t], truth[t] + 1, path[t] + 1, probs[(t, 1)]);
    }
    Ok(())
}
