//! Cubic B-spline bases on equidistant knots, normalized so that every basis
//! function is a probability density, plus the second-difference penalty.
//!
//! Knot layout: `K - 2` equidistant knots span the data range `[lower, upper]`
//! and three further knots with the same spacing are appended on each side,
//! giving `K + 4` knots and `K` cubic basis functions. With this layout every
//! basis function is a translate of the cardinal cubic B-spline.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spline degree. Only cubic bases are supported.
pub const DEGREE: usize = 3;

/// Gauss-Legendre nodes and weights on [-1, 1] with `ceil((DEGREE + 2) / 2)`
/// points, exact for polynomials up to degree 5 on each knot interval.
const GL_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Serialized form of a basis: the geometry is fully determined by the
/// covered range and the number of basis functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub lower: f64,
    pub upper: f64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisSpec", into = "BasisSpec")]
pub struct SplineBasis {
    lower: f64,
    upper: f64,
    k: usize,
    spacing: f64,
    knots: Vec<f64>,
    nu: Vec<f64>,
    basis_means: Vec<f64>,
}

/// Nonzero entries of one row of the evaluation matrix: basis functions
/// `first .. first + len` with values `values[..len]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisRow {
    pub first: usize,
    pub len: usize,
    pub values: [f64; DEGREE + 1],
}

impl BasisRow {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values[..self.len]
            .iter()
            .enumerate()
            .map(move |(j, &v)| (self.first + j, v))
    }

    const EMPTY: BasisRow = BasisRow {
        first: 0,
        len: 0,
        values: [0.0; DEGREE + 1],
    };
}

/// Cardinal cubic B-spline supported on [0, 4].
fn cardinal_cubic(u: f64) -> f64 {
    if !(0.0..4.0).contains(&u) {
        0.0
    } else if u < 1.0 {
        u * u * u / 6.0
    } else if u < 2.0 {
        (((-3.0 * u + 12.0) * u - 12.0) * u + 4.0) / 6.0
    } else if u < 3.0 {
        (((3.0 * u - 24.0) * u + 60.0) * u - 44.0) / 6.0
    } else {
        let v = 4.0 - u;
        v * v * v / 6.0
    }
}

impl SplineBasis {
    /// Builds a cubic basis with `k` functions covering `range`.
    pub fn new(range: (f64, f64), k: usize) -> Result<Self> {
        let (lower, upper) = range;
        if k < DEGREE + 1 {
            return Err(Error::invalid(format!(
                "need at least {} basis functions, got {k}",
                DEGREE + 1
            )));
        }
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::invalid(format!(
                "degenerate basis range ({lower}, {upper})"
            )));
        }
        let n_intervals = k - DEGREE;
        let spacing = (upper - lower) / n_intervals as f64;
        let knots: Vec<f64> = (0..k + DEGREE + 1)
            .map(|j| lower + (j as f64 - DEGREE as f64) * spacing)
            .collect();

        let mut basis = SplineBasis {
            lower,
            upper,
            k,
            spacing,
            knots,
            nu: vec![1.0; k],
            basis_means: vec![0.0; k],
        };

        // Integrate B_k and x B_k interval by interval over the support.
        let mut mass = vec![0.0; k];
        let mut first_moment = vec![0.0; k];
        for interval in 0..basis.knots.len() - 1 {
            let a = basis.knots[interval];
            let b = basis.knots[interval + 1];
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
                let x = mid + half * node;
                let row = basis.raw_row(x);
                for (j, v) in row.iter() {
                    mass[j] += weight * half * v;
                    first_moment[j] += weight * half * v * x;
                }
            }
        }
        for j in 0..k {
            basis.nu[j] = 1.0 / mass[j];
            basis.basis_means[j] = first_moment[j] / mass[j];
        }
        Ok(basis)
    }

    pub fn spec(&self) -> BasisSpec {
        BasisSpec {
            lower: self.lower,
            upper: self.upper,
            k: self.k,
        }
    }

    pub fn degree(&self) -> usize {
        DEGREE
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    /// The data range the basis was built for (partition of unity holds here).
    pub fn interior_range(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    /// The full support of the basis, from the first to the last knot.
    pub fn knot_range(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Normalization constants: `phi_k = nu_k * B_k` integrates to one.
    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// Means of the normalized basis densities, `x_k = int x phi_k(x) dx`.
    pub fn basis_means(&self) -> &[f64] {
        &self.basis_means
    }

    /// Unnormalized B-spline values at `x`.
    pub fn raw_row(&self, x: f64) -> BasisRow {
        let (lo, hi) = self.knot_range();
        if !(x >= lo && x < hi) {
            return BasisRow::EMPTY;
        }
        let pos = (x - lo) / self.spacing;
        let interval = (pos.floor() as usize).min(self.knots.len() - 2);
        let frac = pos - interval as f64;
        // Basis functions interval-3 ..= interval are nonzero.
        let first = interval.saturating_sub(DEGREE);
        let last = interval.min(self.k - 1);
        let mut row = BasisRow::EMPTY;
        if first > last {
            return row;
        }
        row.first = first;
        row.len = last - first + 1;
        for (slot, j) in (first..=last).enumerate() {
            let u = (interval - j) as f64 + frac;
            row.values[slot] = cardinal_cubic(u);
        }
        row
    }

    /// Normalized basis values `phi_k(x) = nu_k B_k(x)`.
    pub fn row(&self, x: f64) -> BasisRow {
        let mut row = self.raw_row(x);
        for slot in 0..row.len {
            row.values[slot] *= self.nu[row.first + slot];
        }
        row
    }

    /// Sparse evaluation of the normalized basis at every point of `x`.
    pub fn design(&self, x: &[f64]) -> Vec<BasisRow> {
        x.iter().map(|&xt| self.row(xt)).collect()
    }

    /// Dense `T x K` matrix with entries `phi_k(x_t)`; rows outside the knot
    /// range are zero.
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.len(), self.k);
        for (t, &xt) in x.iter().enumerate() {
            for (j, v) in self.row(xt).iter() {
                out[(t, j)] = v;
            }
        }
        out
    }

    /// Per-interval Gauss-Legendre rule over the knot range, exact for
    /// integrands that are polynomials of degree <= 5 on every knot interval.
    pub fn quadrature(&self) -> Vec<(f64, f64)> {
        let mut rule = Vec::with_capacity(3 * (self.knots.len() - 1));
        for w in self.knots.windows(2) {
            let half = 0.5 * (w[1] - w[0]);
            let mid = 0.5 * (w[0] + w[1]);
            for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
                rule.push((mid + half * node, weight * half));
            }
        }
        rule
    }
}

impl TryFrom<BasisSpec> for SplineBasis {
    type Error = Error;

    fn try_from(spec: BasisSpec) -> Result<Self> {
        SplineBasis::new((spec.lower, spec.upper), spec.k)
    }
}

impl From<SplineBasis> for BasisSpec {
    fn from(basis: SplineBasis) -> Self {
        basis.spec()
    }
}

/// Quadratic second-difference penalty `S = D2' D2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub s: DMatrix<f64>,
    pub rank: usize,
}

impl PenaltyMatrix {
    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    /// `beta' S beta`, evaluated as the squared norm of the second differences.
    pub fn quad_form(&self, beta: &[f64]) -> f64 {
        beta.windows(3)
            .map(|w| {
                let d = w[2] - 2.0 * w[1] + w[0];
                d * d
            })
            .sum()
    }

    /// `S beta`.
    pub fn apply(&self, beta: &[f64]) -> Vec<f64> {
        let k = beta.len();
        let mut out = vec![0.0; k];
        for j in 0..k.saturating_sub(2) {
            let d = beta[j + 2] - 2.0 * beta[j + 1] + beta[j];
            out[j] += d;
            out[j + 1] -= 2.0 * d;
            out[j + 2] += d;
        }
        out
    }
}

/// The `(k - 2) x k` second-difference operator.
pub fn second_diff_operator(k: usize) -> Result<DMatrix<f64>> {
    if k < 3 {
        return Err(Error::invalid(format!(
            "second differences need at least 3 coefficients, got {k}"
        )));
    }
    let mut d = DMatrix::zeros(k - 2, k);
    for r in 0..k - 2 {
        d[(r, r)] = 1.0;
        d[(r, r + 1)] = -2.0;
        d[(r, r + 2)] = 1.0;
    }
    Ok(d)
}

pub fn second_diff_penalty(k: usize) -> Result<PenaltyMatrix> {
    let d = second_diff_operator(k)?;
    Ok(PenaltyMatrix {
        s: d.transpose() * &d,
        rank: k - 2,
    })
}
