//! Anderson acceleration with systematic restarts.
//!
//! The memory counter `c` starts at 0 and the number of difference columns used
//! at iteration `sigma` is `m_sigma = min(m, c)`. After each iteration `c` is
//! incremented, except when it has reached `m`, in which case it drops back to
//! 1: the next iteration runs with only the most recent column pair and the
//! memory is refilled from there. For `m = 3` this yields
//! `m_sigma = 0, 1, 2, 3, 1, 2, 3, 1, ...`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{check_dim, Error, Result};

/// Relative singular-value cut-off for the minimum-norm least-squares solve.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Memory of iterate and residual differences.
#[derive(Debug, Clone)]
pub struct AndersonState {
    memory: usize,
    counter: usize,
    regularization: f64,
    /// `Delta v^(i)`, oldest first.
    dv: VecDeque<DVector<f64>>,
    /// `Delta g_i`, oldest first.
    dg: VecDeque<DVector<f64>>,
    prev: Option<(DVector<f64>, DVector<f64>)>,
}

/// Result of one accelerated step.
#[derive(Debug, Clone)]
pub struct AndersonStep {
    pub next: DVector<f64>,
    /// Columns used in this step.
    pub memory_used: usize,
    pub gamma: Option<DVector<f64>>,
}

impl AndersonState {
    pub fn new(memory: usize, regularization: f64) -> Result<Self> {
        if memory == 0 {
            return Err(Error::Strategy("Anderson memory must be at least 1".into()));
        }
        if !(regularization >= 0.0 && regularization.is_finite()) {
            return Err(Error::Strategy(format!(
                "Anderson regularization must be finite and non-negative, got {regularization}"
            )));
        }
        Ok(Self {
            memory,
            counter: 0,
            regularization,
            dv: VecDeque::with_capacity(memory),
            dg: VecDeque::with_capacity(memory),
            prev: None,
        })
    }

    pub fn memory_cap(&self) -> usize {
        self.memory
    }

    pub fn counter(&self) -> usize {
        self.counter
    }

    /// `m_sigma` for the upcoming step.
    pub fn current_memory(&self) -> usize {
        self.memory.min(self.counter)
    }

    /// Number of stored difference pairs.
    pub fn stored(&self) -> usize {
        self.dv.len()
    }

    fn advance_counter(&mut self) {
        self.counter = if self.counter == self.memory { 1 } else { self.counter + 1 };
    }

    /// One step given the current iterate `v`, its image `gv = G(v)` and the
    /// residual `g = gv - v`.
    pub fn step(
        &mut self,
        v: &DVector<f64>,
        gv: &DVector<f64>,
        g: &DVector<f64>,
    ) -> Result<AndersonStep> {
        check_dim("anderson: image", v.len(), gv.len())?;
        check_dim("anderson: residual", v.len(), g.len())?;
        let m_sigma = self.current_memory();

        let step = match self.prev.take() {
            None => AndersonStep {
                next: gv.clone(),
                memory_used: 0,
                gamma: None,
            },
            Some((v_prev, g_prev)) => {
                check_dim("anderson: iterate", v_prev.len(), v.len())?;
                if self.dv.len() == self.memory {
                    self.dv.pop_front();
                    self.dg.pop_front();
                }
                self.dv.push_back(v - v_prev);
                self.dg.push_back(g - g_prev);

                let used = m_sigma.min(self.dv.len());
                let first = self.dv.len() - used;
                let d = v.len();
                let dv_mat = DMatrix::from_fn(d, used, |i, j| self.dv[first + j][i]);
                let dg_mat = DMatrix::from_fn(d, used, |i, j| self.dg[first + j][i]);
                let gamma = solve_gamma(&dg_mat, g, self.regularization)?;
                let next = v + g - (dv_mat + dg_mat) * &gamma;
                AndersonStep {
                    next,
                    memory_used: used,
                    gamma: Some(gamma),
                }
            }
        };
        self.prev = Some((v.clone(), g.clone()));
        self.advance_counter();
        Ok(step)
    }
}

/// Anderson update `v_next = v + g - (V + G) gamma`, with state update.
pub fn step_anderson(
    state: &mut AndersonState,
    v: &DVector<f64>,
    gv: &DVector<f64>,
    g: &DVector<f64>,
) -> Result<AndersonStep> {
    state.step(v, gv, g)
}

/// Minimizes `|g - dG gamma|_2`.
///
/// With `regularization == 0` the minimum-norm minimizer is returned, using an
/// SVD with singular values below `RANK_TOLERANCE * s_max` treated as zero.
/// With `regularization > 0` the ridge normal equations
/// `(dG^T dG + lambda I) gamma = dG^T g` are solved instead. An all-zero `dG`
/// yields `gamma = 0`.
pub fn solve_gamma(dg: &DMatrix<f64>, g: &DVector<f64>, regularization: f64) -> Result<DVector<f64>> {
    check_dim("solve_gamma: rows", dg.nrows(), g.len())?;
    let m = dg.ncols();
    if m == 0 {
        return Err(Error::LeastSquares("difference matrix has no columns".into()));
    }
    if dg.iter().chain(g.iter()).any(|x| !x.is_finite()) {
        return Err(Error::LeastSquares("non-finite entries in difference matrix or residual".into()));
    }
    if dg.iter().all(|&x| x == 0.0) {
        return Ok(DVector::zeros(m));
    }
    if regularization > 0.0 {
        let mut normal = dg.transpose() * dg;
        for i in 0..m {
            normal[(i, i)] += regularization;
        }
        let rhs = dg.transpose() * g;
        return normal
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| Error::LeastSquares("regularized normal matrix not positive definite".into()));
    }
    let svd = SVD::new(dg.clone(), true, true);
    let s_max = svd.singular_values.max();
    let tol = RANK_TOLERANCE * s_max;
    svd.solve(g, tol)
        .map(|x| x.column(0).into_owned())
        .map_err(|e| Error::LeastSquares(e.to_string()))
}
