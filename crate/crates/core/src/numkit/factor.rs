use nalgebra::{DMatrix, SymmetricEigen};

use super::{check_symmetric, min_eigenvalue, symmetrize, JITTER, PSD_TOL, SYMMETRY_TOL};
use crate::error::{check_shape, Error, Result};

/// Pivots and residuals below this fraction of the largest diagonal entry are
/// treated as exact zeros by the semidefinite Cholesky.
const PIVOT_TOL: f64 = 1e-12;

/// A square lower-triangular factor with a non-negative diagonal.
///
/// Only produced by the factorizations in this module, which guarantee the
/// strictly upper part is exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular(DMatrix<f64>);

impl LowerTriangular {
    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// `L · Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.0 * self.0.transpose()
    }
}

/// Lower Cholesky factor of a symmetric positive semidefinite matrix.
///
/// Singular (semidefinite) inputs are factored exactly: zero pivots yield
/// zero columns. Inputs whose smallest eigenvalue lies in
/// `[-1e-10 · trace, 0)` are passed through [`psd_repair`] first; anything
/// more negative is rejected.
pub fn cholesky_lower(a: &DMatrix<f64>) -> Result<LowerTriangular> {
    check_symmetric("cholesky input", a, SYMMETRY_TOL)?;
    if let Some(l) = semidefinite_cholesky(a) {
        return Ok(l);
    }
    let min_eigenvalue = min_eigenvalue(a);
    if min_eigenvalue < -PSD_TOL * a.trace().max(0.0) {
        return Err(Error::NotPositiveSemidefinite {
            what: "cholesky input",
            min_eigenvalue,
        });
    }
    semidefinite_cholesky(&psd_repair(a)).ok_or(Error::NotPositiveSemidefinite {
        what: "cholesky input",
        min_eigenvalue,
    })
}

/// Cholesky–Banachiewicz on the lower triangle of `a`, tolerating zero pivots.
/// Returns `None` when a pivot is clearly negative or a zero pivot leaves a
/// non-zero residual in its column (the matrix is then indefinite).
fn semidefinite_cholesky(a: &DMatrix<f64>) -> Option<LowerTriangular> {
    let d = a.nrows();
    let max_diag = (0..d).fold(0.0_f64, |acc, i| acc.max(a[(i, i)].abs()));
    let tol = PIVOT_TOL * max_diag;
    let mut l = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot > tol {
            let root = pivot.sqrt();
            l[(j, j)] = root;
            for i in (j + 1)..d {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / root;
            }
        } else if pivot >= -tol {
            for i in (j + 1)..d {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > tol {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    Some(LowerTriangular(l))
}

/// Clamps negative eigenvalues of the symmetric part of `a` to zero and adds
/// `1e-12 · max(trace, 1)` to the diagonal.
///
/// Inputs without negative eigenvalues are returned as given (symmetrized)
/// plus the jitter.
pub fn psd_repair(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = symmetrize(a);
    if out.is_empty() {
        return out;
    }
    let eig = SymmetricEigen::new(out.clone());
    if eig.eigenvalues.min() < 0.0 {
        let clamped = eig.eigenvalues.map(|v| v.max(0.0));
        out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        out = symmetrize(&out);
    }
    let jitter = JITTER * out.trace().max(1.0);
    for i in 0..out.nrows() {
        out[(i, i)] += jitter;
    }
    out
}

/// Solves `L · Y = B` by forward substitution. Rows with a zero pivot get a
/// zero solution component (the minimum-norm choice for a consistent
/// semidefinite system).
pub fn forward_solve(l: &LowerTriangular, b: &DMatrix<f64>) -> DMatrix<f64> {
    let l = l.as_matrix();
    let n = l.nrows();
    let mut y = DMatrix::zeros(n, b.ncols());
    for c in 0..b.ncols() {
        for j in 0..n {
            let pivot = l[(j, j)];
            if pivot == 0.0 {
                continue;
            }
            let mut s = b[(j, c)];
            for k in 0..j {
                s -= l[(j, k)] * y[(k, c)];
            }
            y[(j, c)] = s / pivot;
        }
    }
    y
}

/// Block lower-triangular square root of `[[P_xx, P_xb], [P_xbᵀ, Q_b]]`.
///
/// ```text
/// S = | S_xx               0                             |
///     | P_xbᵀ S_xx⁻ᵀ       chol(Q_b - P_xbᵀ P_xx⁻¹ P_xb)  |
/// ```
///
/// A finite ensemble can leave the Schur complement indefinite; it then goes
/// through [`psd_repair`] before factoring.
/// `S_xx⁻¹` is applied by forward substitution; `P_xx⁻¹` is never formed.
pub fn augmented_sqrt(
    p_xx: &DMatrix<f64>,
    p_xb: &DMatrix<f64>,
    q_b: &DMatrix<f64>,
) -> Result<LowerTriangular> {
    augmented_sqrt_report(p_xx, p_xb, q_b).map(|(s, _)| s)
}

/// Like [`augmented_sqrt`], also reporting whether the Schur complement had
/// negative eigenvalues that had to be clamped.
pub fn augmented_sqrt_report(
    p_xx: &DMatrix<f64>,
    p_xb: &DMatrix<f64>,
    q_b: &DMatrix<f64>,
) -> Result<(LowerTriangular, bool)> {
    let n = p_xx.nrows();
    let l = q_b.nrows();
    check_shape("p_xx", (n, n), p_xx.shape())?;
    check_shape("p_xb", (n, l), p_xb.shape())?;
    check_shape("q_b", (l, l), q_b.shape())?;
    check_symmetric("q_b", q_b, SYMMETRY_TOL)?;

    let s_xx = cholesky_lower(p_xx).map_err(|e| match e {
        Error::NotPositiveSemidefinite { min_eigenvalue, .. } => {
            Error::StateCovarianceCollapsed(format!("P_xx has eigenvalue {min_eigenvalue:e}"))
        }
        other => other,
    })?;

    let mut s = DMatrix::zeros(n + l, n + l);
    s.view_mut((0, 0), (n, n)).copy_from(s_xx.as_matrix());
    if l == 0 {
        return Ok((LowerTriangular(s), false));
    }

    // C = S_xx⁻¹ P_xb, so P_xbᵀ P_xx⁻¹ P_xb = Cᵀ C.
    let c = forward_solve(&s_xx, p_xb);
    let schur = symmetrize(&(q_b - c.transpose() * &c));
    let clamped = min_eigenvalue(&schur) < 0.0;
    let s_bb = if clamped {
        cholesky_lower(&psd_repair(&schur))?
    } else {
        cholesky_lower(&schur)?
    };

    s.view_mut((n, 0), (l, n)).copy_from(&c.transpose());
    s.view_mut((n, n), (l, l)).copy_from(s_bb.as_matrix());
    Ok((LowerTriangular(s), clamped))
}
