use super::{canonical_sign, dot, norm2, normalize, Matrix, NumericsError, Rng};

/// Symmetry tolerance accepted by the eigensolvers.
const SYMMETRY_TOL: f64 = 1e-9;
/// Relative spectral gap below which the top eigenvalue is flagged degenerate.
const DEGENERATE_GAP: f64 = 1e-12;
/// Largest matrix the Jacobi oracle will accept.
pub const JACOBI_MAX_DIM: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    /// Unit ℓ2 norm, largest-magnitude entry non-negative.
    pub vector: Vec<f64>,
    /// True when the gap to the second eigenvalue is below `1e-12 · λ₁`.
    pub degenerate: bool,
    pub iterations: usize,
}

fn check_symmetric(m: &Matrix) -> Result<(), NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    match m.asymmetry(SYMMETRY_TOL) {
        Some((row, col, deviation)) => Err(NumericsError::NotSymmetric {
            row,
            col,
            deviation,
        }),
        None => Ok(()),
    }
}

struct Iterate {
    value: f64,
    vector: Vec<f64>,
    residual: f64,
    iterations: usize,
    converged: bool,
}

fn iterate(m: &Matrix, start: Vec<f64>, tol: f64, max_iter: usize) -> Iterate {
    let mut v = start;
    let mut value = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let w = m.matvec(&v);
        value = dot(&v, &w);
        residual = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - value * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol * value.abs() {
            return Iterate {
                value,
                vector: v,
                residual,
                iterations: it,
                converged: true,
            };
        }
        let mut next = w;
        if normalize(&mut next) == 0.0 {
            // v lies in the null space; M v = 0 = 0·v exactly.
            return Iterate {
                value: 0.0,
                vector: v,
                residual: 0.0,
                iterations: it,
                converged: true,
            };
        }
        v = next;
    }
    Iterate {
        value,
        vector: v,
        residual,
        iterations: max_iter,
        converged: false,
    }
}

/// Dominant eigenpair of a symmetric positive semidefinite matrix.
///
/// Starts from a seeded random unit vector. On success the residual satisfies
/// `‖M v − λ v‖₂ ≤ tol · λ`, with `λ` the Rayleigh quotient of `v`. The
/// spectral-gap flag comes from a second, deflated run.
pub fn power_iteration(
    m: &Matrix,
    tol: f64,
    max_iter: usize,
    rng: &mut Rng,
) -> Result<EigenPair, NumericsError> {
    check_symmetric(m)?;
    if max_iter == 0 {
        return Err(NumericsError::InvalidArgument(
            "max_iter must be at least 1",
        ));
    }
    let n = m.rows();
    if n == 0 {
        return Err(NumericsError::InvalidArgument("empty matrix"));
    }
    let start = rng.unit_vector(n);
    let top = iterate(m, start, tol, max_iter);
    let mut vector = top.vector;
    canonical_sign(&mut vector);

    let degenerate = n > 1 && {
        let mut deflated = m.clone();
        deflated.add_outer_upper(&vector, -top.value);
        // restore the lower triangle from the (deflated) upper triangle
        deflated.mirror_upper();
        let mut start = rng.unit_vector(n);
        let proj = dot(&start, &vector);
        start
            .iter_mut()
            .zip(&vector)
            .for_each(|(s, v)| *s -= proj * v);
        normalize(&mut start);
        let second = iterate(&deflated, start, tol, max_iter.min(1000));
        top.value - second.value < DEGENERATE_GAP * top.value.abs()
    };

    let pair = EigenPair {
        value: top.value,
        vector,
        degenerate,
        iterations: top.iterations,
    };
    if top.converged {
        Ok(pair)
    } else {
        Err(NumericsError::NonConvergence {
            last: pair,
            iterations: top.iterations,
            residual: top.residual,
        })
    }
}

#[derive(Debug, Clone)]
pub struct JacobiEigen {
    /// Sorted descending.
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: Matrix,
    pub sweeps: usize,
}

impl JacobiEigen {
    pub fn top_vector(&self) -> Vec<f64> {
        self.vectors.column(0)
    }

    /// V diag(λ) Vᵀ.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for r in 0..n {
            for c in 0..n {
                scaled[(r, c)] *= self.values[c];
            }
        }
        scaled.matmul(&self.vectors.transpose())
    }
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// O(d³) per sweep, so it is capped at [`JACOBI_MAX_DIM`].
pub fn jacobi_eigen(m: &Matrix) -> Result<JacobiEigen, NumericsError> {
    check_symmetric(m)?;
    let n = m.rows();
    if n > JACOBI_MAX_DIM {
        return Err(NumericsError::DimensionTooLarge {
            dim: n,
            cap: JACOBI_MAX_DIM,
        });
    }
    let mut a = m.clone();
    // symmetrize exactly; the input may be off by up to SYMMETRY_TOL
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut sweeps = 0;
    for sweep in 1..=100 {
        sweeps = sweep;
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        canonical_sign(&mut col);
        for (r, x) in col.into_iter().enumerate() {
            vectors[(r, dst)] = x;
        }
    }
    Ok(JacobiEigen {
        values,
        vectors,
        sweeps,
    })
}

/// |cos| of the angle between two vectors.
pub fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    (dot(a, b) / (norm2(a) * norm2(b))).abs()
}
