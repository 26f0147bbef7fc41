//! Dense least-squares helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// Relative threshold on the diagonal of `R` below which a design matrix is
/// treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("design matrix is rank deficient (column {column})")]
pub struct SingularMatrix {
    pub column: usize,
}

/// Thin QR factorisation of a tall design matrix, kept around so that many
/// right-hand sides can be projected cheaply.
#[derive(Debug, Clone)]
pub struct QrDesign {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl QrDesign {
    pub fn new(design: &DMatrix<f64>) -> Result<Self, SingularMatrix> {
        if design.ncols() > design.nrows() {
            return Err(SingularMatrix { column: design.nrows() });
        }
        let qr = design.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let scale = (0..r.ncols()).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        for i in 0..r.ncols() {
            if !(r[(i, i)].abs() > RANK_TOL * scale) {
                return Err(SingularMatrix { column: i });
            }
        }
        Ok(Self { q, r })
    }

    /// Least-squares coefficients for `target`.
    pub fn solve(&self, target: &DVector<f64>) -> DVector<f64> {
        let qty = self.q.transpose() * target;
        self.r
            .solve_upper_triangular(&qty)
            .expect("R has a non-zero diagonal by construction")
    }

    /// Component of `v` orthogonal to the column space of the design.
    pub fn residual(&self, v: &DVector<f64>) -> DVector<f64> {
        let qtv = self.q.transpose() * v;
        v - &self.q * qtv
    }
}

/// Ordinary least squares; fails on a rank-deficient design.
pub fn ols(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<DVector<f64>, SingularMatrix> {
    Ok(QrDesign::new(design)?.solve(target))
}

/// Ridge regression `(XᵀX + penalty·D) β = Xᵀy` where `D` is the identity with
/// the entries listed in `unpenalized` zeroed.
pub fn ridge(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    penalty: f64,
    unpenalized: &[usize],
) -> Option<DVector<f64>> {
    let mut gram = design.transpose() * design;
    for i in 0..gram.ncols() {
        if !unpenalized.contains(&i) {
            gram[(i, i)] += penalty;
        }
    }
    let rhs = design.transpose() * target;
    if let Some(chol) = gram.clone().cholesky() {
        return Some(chol.solve(&rhs));
    }
    gram.lu().solve(&rhs)
}
