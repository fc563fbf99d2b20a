//! Three-state workflow on a dive-depth style series: parametric gamma,
//! unconstrained spline and unimodal spline fits (state 1 fixed at the
//! boundary mode of the unconstrained fit),
//! Viterbi decoding and switch counts.
//!
//! Pass a CSV with an `x` column of maximum dive depths; without one a
//! synthetic series with the same shape is simulated.
//!
//! cargo run --release --example case_study -- [depths.csv] [out_dir]

use std::path::{Path, PathBuf};

use unimodal_hmm::emissions::{Emission, ParametricDensity, TargetFamily};
use unimodal_hmm::eval::switch_count;
use unimodal_hmm::fit::{self, FitResult, FitSpec, ModeChoice, ModeSearchSpec, ModelKind};
use unimodal_hmm::hmm::{local_state_probs, viterbi};
use unimodal_hmm::io::{read_series, write_decoded, Decoded};
use unimodal_hmm::simulate::{Generator, SimConfig};

fn synthetic() -> unimodal_hmm::Result<Vec<f64>> {
    let cfg = SimConfig {
        generator: Generator::Hmm {
            gamma: vec![
                vec![0.90, 0.07, 0.03],
                vec![0.10, 0.80, 0.10],
                vec![0.05, 0.15, 0.80],
            ],
            delta: vec![1.0 / 3.0; 3],
            emissions: vec![
                ParametricDensity::Gamma { mean: 15.0, sd: 20.0 },
                ParametricDensity::Gamma { mean: 300.0, sd: 80.0 },
                ParametricDensity::Gamma { mean: 700.0, sd: 120.0 },
            ],
        },
        t: 3000,
        n_replicates: 1,
        seed: 4,
    };
    Ok(cfg.replicate(0)?.x)
}

fn main() -> unimodal_hmm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let x = match args.get(1) {
        Some(p) => read_series(Path::new(p), 0.0)?.x,
        None => synthetic()?,
    };
    let out = args.get(2).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("unihmm_case_study"));
    std::fs::create_dir_all(&out)?;

    let base = FitSpec {
        init: vec![
            ParametricDensity::Gamma { mean: 20.0, sd: 20.0 },
            ParametricDensity::Gamma { mean: 250.0, sd: 100.0 },
            ParametricDensity::Gamma { mean: 650.0, sd: 150.0 },
        ],
        target_family: TargetFamily::Gamma,
        k: 30,
        n_starts: 2,
        modes: ModeSearchSpec {
            per_state: vec![ModeChoice::Peak, ModeChoice::Auto, ModeChoice::Auto],
            half_width: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    let parametric = fit::fit(&FitSpec { model: ModelKind::Parametric, ..base.clone() }, &x)?;
    let spline = fit::fit(&FitSpec { model: ModelKind::Spline, ..base.clone() }, &x)?;
    let unimodal = fit::search_modes_from(&FitSpec { model: ModelKind::Unimodal, ..base }, &x, &spline)?;
    println!("{} constrained fits, chosen modes {:?}", unimodal.n_constrained_fits, unimodal.modes);

    for (label, f) in [("parametric", &parametric), ("spline", &spline), ("unimodal", &unimodal)] {
        report(label, f, &x, &out)?;
    }
    println!("decoded series written to {}", out.display());
    Ok(())
}

fn report(label: &str, f: &FitResult, x: &[f64], out: &Path) -> unimodal_hmm::Result<()> {
    let path = viterbi(&f.model, x)?;
    let modes = match &f.model.emission {
        Emission::Spline(_) => format!("{:?}", f.mode_counts().unwrap_or_default()),
        Emission::Parametric(_) => "-".into(),
    };
    println!(
        "{label:>10}: loglik {:10.2}  switches {:4}  gamma diag {:.3?}  mode counts {modes}",
        f.loglik,
        switch_count(&path),
        f.gamma().diagonal().as_slice()
    );
    let decoded = Decoded {
        x: x.to_vec(),
        truth: None,
        viterbi: path,
        probs: local_state_probs(&f.model, x)?,
    };
    write_decoded(&out.join(format!("decoded_{label}.csv")), &decoded)
}
