//! Dense linear algebra, spectral transforms and gradient oracles shared by
//! the rest of the crate. Everything here works in `f64`.

mod dct;
mod diff;
mod eigen;
mod fourier;
mod matrix;
mod rng;

pub use dct::{dct2_block, dct8_basis, idct2_block, pad_replicate, BlockCoefficients};
pub use diff::finite_diff_grad;
pub use eigen::{
    abs_cosine, jacobi_eigen, power_iteration, EigenPair, JacobiEigen, JACOBI_MAX_DIM,
};
pub use fourier::{dft2, ComplexGrid};
pub use matrix::Matrix;
pub use rng::{fnv1a, Rng};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("matrix is not symmetric: |m[{row},{col}] - m[{col},{row}]| = {deviation:e}")]
    NotSymmetric {
        row: usize,
        col: usize,
        deviation: f64,
    },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error(
        "power iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence {
        last: EigenPair,
        iterations: usize,
        residual: f64,
    },
    #[error("dimension {dim} exceeds the Jacobi oracle cap of {cap}")]
    DimensionTooLarge { dim: usize, cap: usize },
    #[error("non-finite function value at coordinate {coordinate}")]
    NonFinite { coordinate: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Scales `v` to unit ℓ2 norm in place. Returns the original norm; a zero
/// vector is left untouched.
pub fn normalize(v: &mut [f64]) -> f64 {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Flips the sign of `v` so that its entry of largest magnitude is
/// non-negative. Ties go to the lowest index.
pub fn canonical_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
