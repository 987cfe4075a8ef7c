//! Infinity-norm helpers shared across the crate.
//!
//! Every norm in this library is an infinity norm: the vector norm is the
//! largest absolute entry and the matrix norm is the induced operator norm
//! (largest absolute row sum). Keeping a single convention makes the gain
//! constants produced by the spectral and order-selection routines directly
//! comparable with the trajectory deviations measured by the simulator.

use nalgebra::{DMatrix, DVector};

/// Largest absolute entry of a vector. Returns 0.0 for an empty vector.
pub fn vec_inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Induced infinity norm of a matrix: the largest absolute row sum.
pub fn mat_inf_norm(m: &DMatrix<f64>) -> f64 {
    let mut best = 0.0_f64;
    for i in 0..m.nrows() {
        let mut row = 0.0_f64;
        for j in 0..m.ncols() {
            row += m[(i, j)].abs();
        }
        best = best.max(row);
    }
    best
}

/// True when every entry is finite (no NaN, no infinities).
pub fn vec_is_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// True when every entry is finite (no NaN, no infinities).
pub fn mat_is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}
