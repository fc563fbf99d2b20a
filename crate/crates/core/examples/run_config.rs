//! Loads a TOML run configuration, resolves the simulation section and
//! prints the fully resolved configuration that every CLI run writes.
//!
//! cargo run --example run_config -- [config.toml]

use unimodal_hmm::config::RunConfig;

const SAMPLE: &str = r#"
threads = 2

[simulation]
preset = "sim2"
n_replicates = 4
seed = 9

[fit]
model = "unimodal"
target_family = "gamma"
k = 30
n_starts = 3
init = [
    { family = "gamma", mean = 1.0, sd = 1.0 },
    { family = "gamma", mean = 15.0, sd = 4.0 },
]

[fit.modes]
half_width = 1
"#;

fn main() -> unimodal_hmm::Result<()> {
    let text = match std::env::args().nth(1) {
        Some(p) => std::fs::read_to_string(p)?,
        None => SAMPLE.to_string(),
    };
    let mut cfg = RunConfig::from_toml(&text)?;
    if let Some(sim) = cfg.simulation.take() {
        let resolved = sim.resolved()?;
        let sc = resolved.resolve()?;
        println!("simulation: T = {}, {} replicates, seed {}", sc.t, sc.n_replicates, sc.seed);
        cfg.simulation = Some(resolved);
    }
    if let Some(spec) = &cfg.fit {
        spec.validate()?;
        println!("fit: {} with {} states, K = {}", spec.model, spec.n_states(), spec.k);
    }
    println!("--- resolved ---\n{}", cfg.to_toml()?);

    match RunConfig::from_toml("[fit]\nbasis_size = 20") {
        Err(e) => println!("unknown keys are rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
