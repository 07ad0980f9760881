//! Small dense linear-algebra helpers shared by the estimators and oracles.
//!
//! Covariances are stored in full form. Symmetry and semi-definiteness checks
//! work on the symmetric part `(A + A')/2` with a tolerance of `1e-10` scaled by
//! `max(1, |A|_max)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{DobError, Result};

/// Base tolerance for symmetry and PSD checks.
pub const PSD_TOL: f64 = 1e-10;

/// Diagonal jitter added once before retrying a failed Cholesky factorization.
pub const CHOLESKY_JITTER: f64 = 1e-12;

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn scaled_tol(a: &DMatrix<f64>) -> f64 {
    PSD_TOL * max_abs(a).max(1.0)
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    max_abs(&(a - a.transpose()))
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v))
}

/// Ratio of largest to smallest absolute eigenvalue of the symmetric part.
pub fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(symmetrize(a)).eigenvalues;
    let hi = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let lo = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn check_square(a: &DMatrix<f64>, dim: usize, what: &str) -> Result<()> {
    if a.shape() != (dim, dim) {
        return Err(DobError::Dimension {
            what: what.to_string(),
            expected: (dim, dim),
            found: a.shape(),
        });
    }
    Ok(())
}

pub fn check_shape(a: &DMatrix<f64>, shape: (usize, usize), what: &str) -> Result<()> {
    if a.shape() != shape {
        return Err(DobError::Dimension {
            what: what.to_string(),
            expected: shape,
            found: a.shape(),
        });
    }
    Ok(())
}

pub fn check_len(v: &DVector<f64>, len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return Err(DobError::Dimension {
            what: what.to_string(),
            expected: (len, 1),
            found: (v.len(), 1),
        });
    }
    Ok(())
}

pub fn check_symmetric(a: &DMatrix<f64>, what: &str) -> Result<()> {
    let asym = max_asymmetry(a);
    if asym > scaled_tol(a) {
        return Err(DobError::NotSymmetric {
            what: what.to_string(),
            asymmetry: asym,
        });
    }
    Ok(())
}

/// Checks `a` is symmetric PSD and returns its symmetric part.
pub fn ensure_psd(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    check_symmetric(a, what)?;
    let sym = symmetrize(a);
    let min = min_eigenvalue(&sym);
    if min < -scaled_tol(&sym) {
        return Err(DobError::NotPositiveSemidefinite {
            what: what.to_string(),
            min_eigenvalue: min,
        });
    }
    Ok(sym)
}

/// Checks `a` is symmetric positive definite and returns its symmetric part.
pub fn ensure_pd(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    check_symmetric(a, what)?;
    let sym = symmetrize(a);
    let min = min_eigenvalue(&sym);
    if !(min > 0.0) {
        return Err(DobError::NotPositiveDefinite {
            what: what.to_string(),
            min_eigenvalue: min,
        });
    }
    Ok(sym)
}

/// Lower-triangular `B` with `B B' = A`.
///
/// A semi-definite input that fails plain factorization is retried once with
/// `1e-12 I` added to the diagonal.
pub fn cholesky_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(DobError::Dimension {
            what: "cholesky input".into(),
            expected: (a.nrows(), a.nrows()),
            found: a.shape(),
        });
    }
    check_symmetric(a, "cholesky input")?;
    let sym = symmetrize(a);
    if let Some(c) = sym.clone().cholesky() {
        return Ok(c.l());
    }
    let n = sym.nrows();
    let jittered = &sym + DMatrix::identity(n, n) * CHOLESKY_JITTER;
    match jittered.cholesky() {
        Some(c) => Ok(c.l()),
        None => Err(DobError::Factorization {
            min_eigenvalue: min_eigenvalue(&sym),
        }),
    }
}

/// A square root `S` of a symmetric PSD matrix with `S S' = A`.
///
/// Unlike [`cholesky_factor`] this is exact for singular input (a zero matrix
/// maps to a zero root), which the trajectory generator relies on.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(a);
    if let Some(c) = sym.clone().cholesky() {
        return c.l();
    }
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Solves `S X = B` for symmetric positive definite `S` (an innovation covariance).
pub fn spd_solve(s: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(s);
    match sym.clone().cholesky() {
        Some(c) => Ok(c.solve(b)),
        None => Err(DobError::SingularInnovation {
            condition: condition_estimate(&sym),
        }),
    }
}

/// `P H' S^-1` for symmetric `P` and `S`, computed as `(S^-1 H P)'`.
pub fn gain(p: &DMatrix<f64>, h: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let hp = h * p;
    Ok(spd_solve(s, &hp)?.transpose())
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Numerical rank from singular values with a relative cutoff.
pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0_f64, |m, &v| m.max(v));
    if smax == 0.0 {
        return 0;
    }
    let tol = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON * 16.0;
    sv.iter().filter(|&&v| v > tol).count()
}

/// Minimum eigenvalue of `a - b`; nonnegative (up to round-off) when `a >= b` in PSD order.
pub fn psd_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    min_eigenvalue(&(a - b))
}

/// Joseph-form posterior covariance `(I-KH) P (I-KH)' + K R K'`, symmetrized.
pub fn joseph(p: &DMatrix<f64>, k: &DMatrix<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    let a = DMatrix::identity(n, n) - k * h;
    symmetrize(&(&a * p * a.transpose() + k * r * k.transpose()))
}
