use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative slack used when re-verifying membership after floating-point work.
const MEMBERSHIP_SLACK: f64 = 1e-12;

/// Square matrix together with a bound `C` such that
/// `|a_ij| <= C (delta_ij + 1/n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledMatrix {
    entries: DMatrix<f64>,
    bound: f64,
}

/// `delta_ij + 1/n`.
pub fn envelope(n: usize, i: usize, j: usize) -> f64 {
    f64::from(u8::from(i == j)) + 1.0 / n as f64
}

/// Smallest `C` with `|a_ij| <= C (delta_ij + 1/n)`.
pub fn fitted_bound(entries: &DMatrix<f64>) -> f64 {
    let n = entries.nrows();
    let mut c: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            c = c.max(entries[(i, j)].abs() / envelope(n, i, j));
        }
    }
    c
}

impl ScaledMatrix {
    /// Wrap `entries`, checking membership with the claimed bound.
    pub fn new(entries: DMatrix<f64>, bound: f64) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "scaled matrix must be square and nonempty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "bound must be finite and >= 0, got {bound}"
            )));
        }
        let fit = fitted_bound(&entries);
        if fit > bound * (1.0 + MEMBERSHIP_SLACK) {
            return Err(Error::InvalidInput(format!(
                "matrix needs bound {fit:e}, claimed {bound:e}"
            )));
        }
        Ok(Self { entries, bound })
    }

    /// Wrap `entries` with the tightest admissible bound.
    pub fn fit(entries: DMatrix<f64>) -> Result<Self> {
        let bound = fitted_bound(&entries);
        Self::new(entries, bound)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
            bound: 1.0,
        }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Tightest bound for the stored entries (never above `bound()`).
    pub fn tight_bound(&self) -> f64 {
        fitted_bound(&self.entries)
    }
}

/// Product of two scaled matrices; the result is certified with `3 C_a C_b`.
pub fn scaled_matrix_product(a: &ScaledMatrix, b: &ScaledMatrix) -> Result<ScaledMatrix> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch {
            expected: a.n(),
            found: b.n(),
        });
    }
    ScaledMatrix::new(&a.entries * &b.entries, 3.0 * a.bound * b.bound)
}
