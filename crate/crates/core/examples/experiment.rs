//! A small replicate experiment: simulate, fit every model kind, score and
//! aggregate. The full-size runs use `unihmm experiment`.
//!
//! cargo run --release --example experiment -- [sim1|sim2] [replicates] [starts]

use unimodal_hmm::experiment::{run, ExperimentConfig, Preset};

fn main() -> unimodal_hmm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let preset: Preset = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(Preset::Sim1);
    let mut cfg = ExperimentConfig::new(preset);
    cfg.replicates = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    cfg.starts = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2);

    let result = run(&cfg)?;
    println!("{:>16}  {:>10}  {:>8}  {:>8}  {:>12}", "model", "median AUC", "gamma_11", "gamma_22", "multimodal 2");
    for a in result.aggregate() {
        println!(
            "{:>16}  {:>10.4}  {:>8.4}  {:>8.4}  {:>12}",
            a.model_kind,
            a.median_auc.unwrap_or(f64::NAN),
            a.mean_gamma_11,
            a.mean_gamma_22,
            a.frac_multimodal_2.map(|f| format!("{f:.2}")).unwrap_or_else(|| "-".into())
        );
    }
    Ok(())
}
