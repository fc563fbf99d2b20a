//! Constraint matrices, the rescaled coefficients beta~ and the smoothed
//! unimodality penalty for a bimodal and a unimodal coefficient sequence.
//!
//! cargo run --example unimodal_constraints

use unimodal_hmm::constraints::{
    coefficient_modes, constraint_matrix, exact_penalty, project_unimodal, tilde_beta,
    unimodality_penalty, DEFAULT_RHO,
};
use unimodal_hmm::emissions::{count_local_maxima, SplineEmission};
use unimodal_hmm::splines::SplineBasis;

fn main() -> unimodal_hmm::Result<()> {
    println!("C_2 for K = 4:\n{}", constraint_matrix(4, 2)?);

    let basis = SplineBasis::new((0.0, 1.0), 12)?;
    let bimodal = vec![-3.0, -1.0, 0.5, 0.2, -1.0, -1.5, -0.8, 0.6, 0.9, 0.1, -1.0, 0.0];
    let tilde = tilde_beta(&bimodal, &basis);
    println!("coefficient modes of beta~: {:?}", coefficient_modes(&tilde));

    for m in [3, 9] {
        let (p, _) = unimodality_penalty(&bimodal, &basis, m, DEFAULT_RHO)?;
        println!(
            "m = {m}: exact violation {:.4}, smoothed penalty {:.4}",
            exact_penalty(&bimodal, &basis, m),
            p
        );
    }

    let projected = project_unimodal(&bimodal, &basis, 3, 8.0 / DEFAULT_RHO);
    println!("after projection onto m = 3: exact violation {:.2e}", exact_penalty(&projected, &basis, 3));

    let grid: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
    for (label, beta) in [("original", bimodal), ("projected", projected)] {
        let e = SplineEmission::new(basis.clone(), vec![beta])?;
        println!("{label}: {} local maxima on a 1000-point grid", count_local_maxima(&e.density_on(0, &grid)));
    }
    Ok(())
}
