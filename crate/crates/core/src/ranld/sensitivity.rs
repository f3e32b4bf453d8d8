use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{nld_gradient, RanldError, StateSet, Temperature};
use crate::numerics::{
    abs_cosine, canonical_sign, dot, jacobi_eigen, normalize, power_iteration, Matrix,
    NumericsError, Rng, JACOBI_MAX_DIM,
};
use crate::qnet::QNetwork;

/// Leaf size of the pairwise outer-product reduction.
const LEAF: usize = 32;
const POWER_TOL: f64 = 1e-13;
const POWER_MAX_ITER: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Gradients enter `L` as they are.
    #[default]
    Raw,
    /// Each gradient is scaled to unit length first (zero gradients stay
    /// zero). Not part of the standard diagnostic.
    Normalized,
}

/// `L(S) = (1/n)·Σ gᵢgᵢᵀ`, symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    pub matrix: Matrix,
    pub n: usize,
    /// The gᵢ that built `matrix`, when known.
    gradients: Option<Vec<Vec<f64>>>,
    pub mode: GradientMode,
}

impl SensitivityMatrix {
    /// Builds `L` from per-state gradients with a pairwise reduction over
    /// fixed index ranges, so the result does not depend on thread count.
    pub fn from_gradients(gradients: Vec<Vec<f64>>) -> Result<Self, RanldError> {
        let n = gradients.len();
        if n == 0 {
            return Err(RanldError::EmptySet);
        }
        let d = gradients[0].len();
        if let Some(g) = gradients.iter().find(|g| g.len() != d) {
            return Err(RanldError::Shape {
                expected: (1, d),
                found: (1, g.len()),
            });
        }
        let mut m = reduce(&gradients, d);
        m.scale(1.0 / n as f64);
        m.mirror_upper();
        Ok(Self {
            matrix: m,
            n,
            gradients: Some(gradients),
            mode: GradientMode::Raw,
        })
    }

    /// Wraps an explicit symmetric matrix (no per-state gradients).
    pub fn from_matrix(matrix: Matrix, n: usize) -> Self {
        Self {
            matrix,
            n,
            gradients: None,
            mode: GradientMode::Raw,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn gradients(&self) -> Option<&[Vec<f64>]> {
        self.gradients.as_deref()
    }

    /// `vᵀ L v`. With known gradients this is `(1/n)·Σ (gᵢ·v)²`, which is
    /// non-negative by construction.
    pub fn rayleigh(&self, v: &[f64]) -> f64 {
        match &self.gradients {
            Some(gs) => gs.iter().map(|g| dot(g, v).powi(2)).sum::<f64>() / self.n as f64,
            None => self.matrix.quadratic_form(v),
        }
    }
}

fn reduce(gs: &[Vec<f64>], d: usize) -> Matrix {
    if gs.len() <= LEAF {
        let mut m = Matrix::zeros(d, d);
        for g in gs {
            m.add_outer_upper(g, 1.0);
        }
        return m;
    }
    let mid = gs.len() / 2;
    let (mut left, right) = rayon::join(|| reduce(&gs[..mid], d), || reduce(&gs[mid..], d));
    left.add_assign(&right);
    left
}

/// `nld_gradient` at every state, in visit order.
pub fn state_gradients(
    net: &QNetwork,
    set: &StateSet,
    t: Temperature,
) -> Result<Vec<Vec<f64>>, RanldError> {
    set.observations()
        .par_iter()
        .map(|s| Ok(nld_gradient(net, s, t)?))
        .collect()
}

pub fn accumulate_l(
    net: &QNetwork,
    set: &StateSet,
    t: Temperature,
) -> Result<SensitivityMatrix, RanldError> {
    accumulate_l_with(net, set, t, GradientMode::Raw)
}

pub fn accumulate_l_with(
    net: &QNetwork,
    set: &StateSet,
    t: Temperature,
    mode: GradientMode,
) -> Result<SensitivityMatrix, RanldError> {
    let mut gs = state_gradients(net, set, t)?;
    if mode == GradientMode::Normalized {
        for g in &mut gs {
            if crate::numerics::norm2(g) >= 1e-12 {
                normalize(g);
            } else {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }
    let mut l = SensitivityMatrix::from_gradients(gs)?;
    l.mode = mode;
    Ok(l)
}

/// Unit top eigenvector of `L` with its eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalDirection {
    pub vector: Vec<f64>,
    pub eigenvalue: f64,
    /// The top eigenvalue is (numerically) repeated, so the direction is not
    /// unique.
    pub degenerate: bool,
    pub power_converged: bool,
    /// `|cos|` between the power-iteration and Jacobi vectors.
    pub jacobi_cosine: Option<f64>,
}

/// Power iteration with a Jacobi cross-check; falls back to the Jacobi
/// vector when power iteration does not converge. The reported eigenvalue is
/// the Rayleigh quotient of the returned vector.
pub fn principal_direction(l: &SensitivityMatrix) -> Result<PrincipalDirection, RanldError> {
    let d = l.dim();
    let mut rng = Rng::new(0x7072_696e_6369_7061).substream("principal");
    let (mut vector, mut degenerate, converged) =
        match power_iteration(&l.matrix, POWER_TOL, POWER_MAX_ITER, &mut rng) {
            Ok(p) => (p.vector, p.degenerate, true),
            Err(NumericsError::NonConvergence { last, .. }) => {
                (last.vector, last.degenerate, false)
            }
            Err(e) => return Err(e.into()),
        };
    let mut jacobi_cosine = None;
    if d <= JACOBI_MAX_DIM {
        let jac = jacobi_eigen(&l.matrix)?;
        let top = jac.top_vector();
        jacobi_cosine = Some(abs_cosine(&top, &vector));
        if !converged {
            vector = top;
            let v = &jac.values;
            degenerate = v.len() > 1 && v[0] - v[1] < 1e-12 * v[0].abs();
        }
    }
    canonical_sign(&mut vector);
    let eigenvalue = l.rayleigh(&vector);
    Ok(PrincipalDirection {
        vector,
        eigenvalue,
        degenerate,
        power_converged: converged,
        jacobi_cosine,
    })
}

/// `Λ = G_probeᵀ L_base G_probe / λ₁(L_base)`.
pub fn correlation_quotient(
    probe: &PrincipalDirection,
    base: &SensitivityMatrix,
) -> Result<f64, RanldError> {
    let base_dir = principal_direction(base)?;
    correlation_quotient_with(probe, base, &base_dir)
}

/// Same as [`correlation_quotient`] with a precomputed baseline direction.
pub fn correlation_quotient_with(
    probe: &PrincipalDirection,
    base: &SensitivityMatrix,
    base_dir: &PrincipalDirection,
) -> Result<f64, RanldError> {
    if probe.vector.len() != base.dim() {
        return Err(RanldError::Shape {
            expected: (1, base.dim()),
            found: (1, probe.vector.len()),
        });
    }
    let lambda = base.rayleigh(&base_dir.vector);
    if !(lambda > 0.0) {
        return Err(RanldError::UndefinedQuotient(lambda));
    }
    Ok(base.rayleigh(&probe.vector) / lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obs::Obs;

    fn naive(gs: &[Vec<f64>]) -> Matrix {
        let d = gs[0].len();
        let mut m = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for g in gs {
                    acc += g[i] * g[j];
                }
                m[(i, j)] = acc / gs.len() as f64;
            }
        }
        m
    }

    fn direction(v: Vec<f64>) -> PrincipalDirection {
        PrincipalDirection {
            vector: v,
            eigenvalue: 0.0,
            degenerate: false,
            power_converged: true,
            jacobi_cosine: None,
        }
    }

    #[test]
    fn single_basis_gradient() {
        let l = SensitivityMatrix::from_gradients(vec![vec![1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(l.matrix, Matrix::diag(&[1.0, 0.0, 0.0]));
    }

    #[test]
    fn parallel_gradients_are_rank_one() {
        let u = [0.6, 0.0, -0.8];
        let scales = [1.0, -2.0, 0.5, 3.0];
        let gs: Vec<Vec<f64>> = scales
            .iter()
            .map(|s| u.iter().map(|x| s * x).collect())
            .collect();
        let l = SensitivityMatrix::from_gradients(gs.clone()).unwrap();
        let p = principal_direction(&l).unwrap();
        let mean_sq = scales.iter().map(|s| s * s).sum::<f64>() / 4.0;
        assert!((p.eigenvalue - mean_sq).abs() < 1e-12);
        assert!(!p.degenerate);
        assert!((dot(&p.vector, &u).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_reference() {
        let mut rng = Rng::new(3);
        for n in [1, 20, 33, 100] {
            let gs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..7).map(|_| rng.normal()).collect())
                .collect();
            let l = SensitivityMatrix::from_gradients(gs.clone()).unwrap();
            assert!(l.matrix.max_abs_diff(&naive(&gs)) < 1e-12);
            assert!(l.matrix.asymmetry(0.0).is_none());
        }
    }

    #[test]
    fn principal_closed_forms() {
        let p = principal_direction(&SensitivityMatrix::from_matrix(
            Matrix::diag(&[3.0, 1.0]),
            1,
        ))
        .unwrap();
        assert!((p.vector[0] - 1.0).abs() < 1e-12 && p.vector[1].abs() < 1e-12);
        assert!((p.eigenvalue - 3.0).abs() < 1e-12);
        let eye =
            principal_direction(&SensitivityMatrix::from_matrix(Matrix::identity(4), 1)).unwrap();
        assert!(eye.degenerate);
    }

    #[test]
    fn quotient_closed_forms() {
        let base = SensitivityMatrix::from_matrix(Matrix::diag(&[4.0, 1.0]), 1);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let q = correlation_quotient(&direction(vec![h, h]), &base).unwrap();
        assert!((q - 0.625).abs() < 1e-12);

        let rank1 = SensitivityMatrix::from_gradients(vec![vec![1.0, 0.0]]).unwrap();
        assert_eq!(
            correlation_quotient(&direction(vec![0.0, 1.0]), &rank1).unwrap(),
            0.0
        );

        let zero = SensitivityMatrix::from_gradients(vec![vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            correlation_quotient(&direction(vec![1.0, 0.0]), &zero),
            Err(RanldError::UndefinedQuotient(_))
        ));
    }

    #[test]
    fn self_quotient_is_one() {
        let mut rng = Rng::new(17);
        let net = QNetwork::new(3, 3, &[12], 3, &mut rng);
        let obs: Vec<Obs> = (0..15)
            .map(|_| Obs::new(3, 3, (0..9).map(|_| rng.uniform()).collect()).unwrap())
            .collect();
        let set = StateSet::from_observations(obs).unwrap();
        let l = accumulate_l(&net, &set, Temperature::default()).unwrap();
        let p = principal_direction(&l).unwrap();
        assert!((correlation_quotient(&p, &l).unwrap() - 1.0).abs() < 1e-9);
        assert!(p.jacobi_cosine.unwrap() >= 1.0 - 1e-8);
        let normalized =
            accumulate_l_with(&net, &set, Temperature::default(), GradientMode::Normalized)
                .unwrap();
        assert!((0..9).all(|i| normalized.matrix[(i, i)] <= 1.0 + 1e-12));
    }
}
