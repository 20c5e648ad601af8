use nalgebra::{linalg::Schur, DMatrix};

use crate::error::{Error, Result};

/// Deflation tolerances tried in turn by [`spectral_radius`].
const SCHUR_TOLERANCES: [f64; 3] = [f64::EPSILON, 1e-14, 1e-12];
const SCHUR_MAX_ITER: usize = 10_000;

/// `max_i |lambda_i(m)|`, from the real Schur form. An empty matrix has radius 0.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension {
            context: "spectral radius: matrix must be square".into(),
            expected: m.nrows(),
            actual: m.ncols(),
        });
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("spectral radius input".into()));
    }
    // The QR iteration occasionally stalls at machine-precision deflation on
    // matrices with clustered eigenvalues; relaxing the tolerance moves the
    // eigenvalues by far less than any radius comparison cares about.
    let schur = SCHUR_TOLERANCES
        .iter()
        .find_map(|&eps| Schur::try_new(m.clone(), eps, SCHUR_MAX_ITER))
        .ok_or_else(|| Error::Eigen("Schur decomposition did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Spectral radius of the scalar-mixing iteration matrix and its verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub rho: f64,
    pub converges: bool,
}

/// Certifies `v <- (1 - beta) v + beta (M v + c)` via `rho(I - beta (I - M))`.
pub fn certify_scalar_mix(m_v: &DMatrix<f64>, beta: f64) -> Result<Certificate> {
    if !beta.is_finite() {
        return Err(Error::Strategy(format!("beta must be finite, got {beta}")));
    }
    let n = m_v.nrows();
    let identity = DMatrix::<f64>::identity(n, m_v.ncols());
    let iteration = &identity - (&identity - m_v) * beta;
    let rho = spectral_radius(&iteration)?;
    Ok(Certificate {
        rho,
        converges: rho < 1.0,
    })
}

/// Certifies the matrix filter via `rho(I - Pi + Pi M)`.
pub fn certify_matrix_filter(m_v: &DMatrix<f64>, pi: &DMatrix<f64>) -> Result<Certificate> {
    let identity = DMatrix::<f64>::identity(m_v.nrows(), m_v.ncols());
    let rho = spectral_radius(&(&identity - pi + pi * m_v))?;
    Ok(Certificate {
        rho,
        converges: rho < 1.0,
    })
}
