//! Orthonormal 8×8 DCT-II on block grids, as used for JPEG-style
//! compression artifacts.

use super::Matrix;
use std::f64::consts::PI;

/// Block DCT coefficients of an edge-padded grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCoefficients {
    pub block: usize,
    /// Padded size; both dimensions are multiples of `block`.
    pub coefficients: Matrix,
    /// Size of the grid before padding.
    pub original_rows: usize,
    pub original_cols: usize,
}

/// Orthonormal DCT-II basis: `basis[u][x] = α(u)·cos((2x+1)uπ / 2N)`.
pub fn dct8_basis(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|u| {
            let alpha = if u == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            (0..n)
                .map(|x| alpha * ((2 * x + 1) as f64 * u as f64 * PI / (2 * n) as f64).cos())
                .collect()
        })
        .collect()
}

/// Pads `grid` by replicating its last row/column until both dimensions are
/// multiples of `block`.
pub fn pad_replicate(grid: &Matrix, block: usize) -> Matrix {
    let rows = grid.rows().div_ceil(block) * block;
    let cols = grid.cols().div_ceil(block) * block;
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            out[(r, c)] = grid[(r.min(grid.rows() - 1), c.min(grid.cols() - 1))];
        }
    }
    out
}

#[allow(clippy::needless_range_loop)]
fn transform_blocks(grid: &Matrix, block: usize, inverse: bool) -> Matrix {
    let basis = dct8_basis(block);
    let mut out = Matrix::zeros(grid.rows(), grid.cols());
    let mut tmp = vec![0.0; block * block];
    for br in (0..grid.rows()).step_by(block) {
        for bc in (0..grid.cols()).step_by(block) {
            // rows pass
            for r in 0..block {
                for u in 0..block {
                    let mut acc = 0.0;
                    for k in 0..block {
                        let (b, x) = if inverse {
                            (basis[k][u], k)
                        } else {
                            (basis[u][k], k)
                        };
                        acc += b * grid[(br + r, bc + x)];
                    }
                    tmp[r * block + u] = acc;
                }
            }
            // columns pass
            for u in 0..block {
                for v in 0..block {
                    let mut acc = 0.0;
                    for k in 0..block {
                        let b = if inverse { basis[k][v] } else { basis[v][k] };
                        acc += b * tmp[k * block + u];
                    }
                    out[(br + v, bc + u)] = acc;
                }
            }
        }
    }
    out
}

/// Forward blockwise DCT. Coefficient `(v, u)` within a block holds vertical
/// frequency `v` and horizontal frequency `u`.
pub fn dct2_block(grid: &Matrix, block: usize) -> BlockCoefficients {
    assert!(block > 0);
    let padded = pad_replicate(grid, block);
    BlockCoefficients {
        block,
        coefficients: transform_blocks(&padded, block, false),
        original_rows: grid.rows(),
        original_cols: grid.cols(),
    }
}

/// Inverse of [`dct2_block`], returning the padded grid.
pub fn idct2_block(coeffs: &BlockCoefficients) -> Matrix {
    transform_blocks(&coeffs.coefficients, coeffs.block, true)
}
