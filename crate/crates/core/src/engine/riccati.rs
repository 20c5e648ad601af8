//! Discrete algebraic Riccati equation and the matrix-gain filter design.

use nalgebra::DMatrix;

use super::spectral::certify_matrix_filter;
use crate::error::{check_dim, Error, Result};

/// Stopping rule for the Riccati recursion.
pub const RICCATI_TOLERANCE: f64 = 1e-10;
pub const RICCATI_MAX_ITER: usize = 100_000;

fn square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    check_dim(format!("{name}: rows"), n, m.nrows())?;
    check_dim(format!("{name}: cols"), n, m.ncols())
}

fn solve_spd(m: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c.solve(rhs));
    }
    m.lu()
        .solve(rhs)
        .ok_or_else(|| Error::Design("R + B^T P B is singular".into()))
}

/// Solves `P = Q + A^T P A - A^T P B (R + B^T P B)^{-1} B^T P A` by iterating
/// the recursion from `P = Q` until the max-abs increment is at most `tol`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    square("DARE: A", a, n)?;
    check_dim("DARE: rows of B", n, b.nrows())?;
    square("DARE: Q", q, n)?;
    square("DARE: R", r, b.ncols())?;

    let mut p = q.clone();
    for _ in 0..max_iter {
        let bt_p = b.transpose() * &p;
        let gain = solve_spd(r + &bt_p * b, &(&bt_p * a))?;
        let at_p = a.transpose() * &p;
        let mut next = q + &at_p * a - &at_p * b * gain;
        next = (&next + next.transpose()) * 0.5;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Design("Riccati recursion diverged".into()));
        }
        let increment = (&next - &p).amax();
        p = next;
        if increment <= tol {
            return Ok(p);
        }
    }
    Err(Error::Design(format!(
        "Riccati recursion did not reach increment {tol:e} within {max_iter} iterations"
    )))
}

/// Discrete LQR gain `K = (R + B^T P B)^{-1} B^T P A` with its Riccati solution.
pub fn dlqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = solve_dare(a, b, q, r, RICCATI_TOLERANCE, RICCATI_MAX_ITER)?;
    let bt_p = b.transpose() * &p;
    let k = solve_spd(r + &bt_p * b, &(&bt_p * a))?;
    Ok((k, p))
}

/// Designs the filter gain `Pi` so that `v <- (I - Pi) v + Pi G(v)` converges
/// for the affine map with linear part `m_v`.
///
/// The gain is the LQR feedback for `(A, B) = (I, I - m_v)`, so that
/// `I - (I - m_v) Pi` is Schur stable; `I - Pi (I - m_v)` has the same
/// spectrum. Since every eigenvalue of `A = I` lies on the unit circle, the
/// pair is stabilizable exactly when `I - m_v` is nonsingular.
pub fn design_pi_filter(m_v: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m_v.nrows();
    square("Pi design: M_v", m_v, n)?;
    square("Pi design: Q", q, n)?;
    square("Pi design: R", r, n)?;
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let identity = DMatrix::<f64>::identity(n, n);
    let b = &identity - m_v;
    let sv = b.clone().singular_values();
    let (s_min, s_max) = (sv.min(), sv.max());
    if s_min <= 1e-12 * s_max.max(1.0) {
        return Err(Error::Design(format!(
            "pair (I, I - M_v) is not stabilizable: I - M_v is singular (smallest singular value {s_min:e}), i.e. M_v has an eigenvalue at 1"
        )));
    }
    let (pi, _) = dlqr(&identity, &b, q, r)?;
    let cert = certify_matrix_filter(m_v, &pi)?;
    if !cert.converges {
        return Err(Error::Design(format!(
            "designed gain is not contractive: rho(I - Pi + Pi M_v) = {}",
            cert.rho
        )));
    }
    Ok(pi)
}
