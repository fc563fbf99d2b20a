//! Simulates both experiment presets, summarizes the generated states and
//! writes replicate CSVs plus metadata to a directory.
//!
//! cargo run --example simulate -- [out_dir]

use std::path::PathBuf;

use unimodal_hmm::emissions::{Emission, ParametricDensity, ParametricEmission};
use unimodal_hmm::simulate::{simulate_hsmm, sojourns, write_replicates, DwellDistribution, SimConfig};

fn main() -> unimodal_hmm::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("unihmm_sim"));

    for name in ["sim1", "sim2"] {
        let mut cfg = SimConfig::preset(name)?;
        cfg.n_replicates = 3;
        let s = cfg.replicate(0)?;
        let states = s.states.as_ref().unwrap();
        let frac2 = states.iter().filter(|&&v| v == 1).count() as f64 / s.len() as f64;
        let mean = s.x.iter().sum::<f64>() / s.len() as f64;
        println!("{name}: T = {}, mean x = {mean:.3}, share of state 2 = {frac2:.3}", s.len());
        let files = write_replicates(&cfg, &out.join(name), name)?;
        println!("  wrote {} files to {}", files.len(), out.join(name).display());
    }

    // Dwell times of a hand-built semi-Markov chain.
    let dwells = vec![
        DwellDistribution::ShiftedPoisson { rate: 4.0 },
        DwellDistribution::Geometric { p: 0.2 },
    ];
    let emission = Emission::Parametric(ParametricEmission::new(vec![
        ParametricDensity::Gamma { mean: 1.0, sd: 1.0 },
        ParametricDensity::Gamma { mean: 15.0, sd: 4.0 },
    ])?);
    let s = simulate_hsmm(&dwells, &emission, 20_000, 3)?;
    for (i, d) in dwells.iter().enumerate() {
        let runs: Vec<u64> = sojourns(s.states.as_ref().unwrap())
            .into_iter()
            .filter(|(st, _)| *st == i)
            .map(|(_, len)| len)
            .collect();
        let mean = runs.iter().sum::<u64>() as f64 / runs.len() as f64;
        println!("state {}: {} sojourns, mean dwell {mean:.3} (expected {:.3})", i + 1, runs.len(), d.mean());
    }
    Ok(())
}
