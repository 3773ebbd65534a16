//! Dense linear-algebra and sampling kernels used by the filters.

mod factor;
mod rng;

pub use factor::{
    augmented_sqrt, augmented_sqrt_report, cholesky_lower, forward_solve, psd_repair,
    LowerTriangular,
};
pub use rng::{stream_id, Purpose, SeededRng};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted by [`cholesky_lower`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues down to `-PSD_TOL * trace` are treated as rounding noise.
pub const PSD_TOL: f64 = 1e-10;
/// Diagonal jitter added by [`psd_repair`], relative to `max(trace, 1)`.
pub const JITTER: f64 = 1e-12;

/// Largest absolute entry, or zero for an empty matrix.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest `|a_ij - a_ji|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Checks squareness and symmetry relative to the largest entry.
pub fn check_symmetric(what: &'static str, a: &DMatrix<f64>, rel_tol: f64) -> Result<()> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            what,
            expected: "square matrix".into(),
            found: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveSemidefinite {
            what,
            min_eigenvalue: f64::NAN,
        });
    }
    let asym = asymmetry(a);
    if asym > rel_tol * max_abs(a) {
        return Err(Error::Asymmetric {
            what,
            asymmetry: asym,
        });
    }
    Ok(())
}

/// Checks symmetry and that no eigenvalue lies below `-PSD_TOL * trace`.
pub fn check_psd(what: &'static str, a: &DMatrix<f64>, sym_tol: f64) -> Result<()> {
    check_symmetric(what, a, sym_tol)?;
    let min_eigenvalue = min_eigenvalue(a);
    if min_eigenvalue < -PSD_TOL * a.trace().max(0.0) {
        return Err(Error::NotPositiveSemidefinite {
            what,
            min_eigenvalue,
        });
    }
    Ok(())
}

/// Smallest eigenvalue of the symmetric part of `a`; `+inf` for an empty matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return f64::INFINITY;
    }
    let sym = symmetrize(a);
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// `(a + aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Draws `count` members `mean + sqrt_cov · u` with `u ~ N(0, I)`.
///
/// Members are returned as the columns of a `d × count` matrix. Draws are
/// taken member by member, component by component, so the result depends
/// only on the generator state and the inputs.
pub fn sample_mvn(
    mean: &DVector<f64>,
    sqrt_cov: &LowerTriangular,
    rng: &mut SeededRng,
    count: usize,
) -> Result<DMatrix<f64>> {
    if count < 2 {
        return Err(Error::EnsembleTooSmall(count));
    }
    let d = mean.len();
    crate::error::check_len("sqrt_cov", d, sqrt_cov.dim())?;
    let u = standard_normal_matrix(d, count, rng);
    let mut out = sqrt_cov.as_matrix() * u;
    for mut col in out.column_iter_mut() {
        col += mean;
    }
    Ok(out)
}

/// A `rows × cols` matrix of standard normal draws, filled column by column.
pub fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    let mut u = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            u[(i, j)] = rng.standard_normal();
        }
    }
    u
}
