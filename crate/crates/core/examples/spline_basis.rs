//! Builds a normalized cubic B-spline basis, checks that each basis function
//! integrates to one, and shows the second-difference penalty.
//!
//! cargo run --example spline_basis

use unimodal_hmm::splines::{second_diff_penalty, SplineBasis};

fn main() -> unimodal_hmm::Result<()> {
    let basis = SplineBasis::new((0.0, 10.0), 8)?;
    println!("K = {}, spacing h = {:.4}", basis.len(), basis.spacing());
    println!("knots: {:.3?}", basis.knots());
    println!("basis means: {:.3?}", basis.basis_means());

    // Integrals via the built-in Gauss-Legendre rule.
    let mut integrals = vec![0.0; basis.len()];
    for (x, w) in basis.quadrature() {
        for (k, v) in basis.row(x).iter() {
            integrals[k] += w * v;
        }
    }
    println!("integrals: {:.12?}", integrals);

    let row = basis.row(3.3);
    println!("nonzero basis values at x = 3.3:");
    for (k, v) in row.iter() {
        println!("  phi_{} = {v:.6}", k + 1);
    }

    let s = second_diff_penalty(basis.len())?;
    println!("penalty rank {} (dim {})", s.rank, s.dim());
    let linear: Vec<f64> = (0..basis.len()).map(|k| 2.0 * k as f64 - 3.0).collect();
    let wiggly: Vec<f64> = (0..basis.len()).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
    println!("beta'S beta: linear {:.3e}, alternating {:.1}", s.quad_form(&linear), s.quad_form(&wiggly));
    Ok(())
}
