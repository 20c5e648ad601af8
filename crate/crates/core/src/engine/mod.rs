//! Fixed-point iteration on coupling profiles.
//!
//! Every strategy iterates `v <- step(v, G(v))` for a map `G` supplied as a
//! closure. The convergence measure at iteration `sigma` is the residual
//! `eps_sigma = |G(v_sigma) - v_sigma|_inf`, evaluated before the step is
//! taken, so a converged report always satisfies `|G(v) - v|_inf <= eps_max`
//! at the returned profile.

mod anderson;
mod riccati;
mod spectral;

use std::fmt;
use std::io::{self, Write};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

pub use anderson::{solve_gamma, step_anderson, AndersonState, AndersonStep, RANK_TOLERANCE};
pub use riccati::{design_pi_filter, dlqr, solve_dare, RICCATI_MAX_ITER, RICCATI_TOLERANCE};
pub use spectral::{certify_matrix_filter, certify_scalar_mix, spectral_radius, Certificate};

/// Residual above which an iteration is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// How the next iterate is formed from `v` and `G(v)`.
#[derive(Debug, Clone, PartialEq)]
pub enum UpdateStrategy {
    /// `v <- G(v)`
    Plain,
    /// `v <- (1 - beta) v + beta G(v)`
    ScalarMix { beta: f64 },
    /// `v <- (I - Pi) v + Pi G(v)`
    MatrixFilter { pi: DMatrix<f64> },
    /// Anderson acceleration with memory cap `memory` and systematic restarts.
    Anderson { memory: usize, regularization: f64 },
}

impl UpdateStrategy {
    pub fn anderson(memory: usize) -> Self {
        Self::Anderson {
            memory,
            regularization: 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Plain => "plain",
            Self::ScalarMix { .. } => "scalar-mix",
            Self::MatrixFilter { .. } => "matrix-filter",
            Self::Anderson { .. } => "anderson",
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Self::Plain => Ok(()),
            Self::ScalarMix { beta } if !beta.is_finite() => {
                Err(Error::Strategy(format!("beta must be finite, got {beta}")))
            }
            Self::ScalarMix { .. } => Ok(()),
            Self::MatrixFilter { pi } => {
                check_dim("matrix filter: rows of Pi", dim, pi.nrows())?;
                check_dim("matrix filter: cols of Pi", dim, pi.ncols())?;
                if pi.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("filter gain Pi".into()));
                }
                Ok(())
            }
            Self::Anderson {
                memory,
                regularization,
            } => AndersonState::new(*memory, *regularization).map(|_| ()),
        }
    }
}

impl fmt::Display for UpdateStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Plain => write!(f, "plain"),
            Self::ScalarMix { beta } => write!(f, "scalar-mix(beta={beta})"),
            Self::MatrixFilter { pi } => write!(f, "matrix-filter({}x{})", pi.nrows(), pi.ncols()),
            Self::Anderson {
                memory,
                regularization,
            } => write!(f, "anderson(m={memory}, lambda={regularization})"),
        }
    }
}

/// Stopping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    /// Tolerance on `|G(v) - v|_inf`.
    pub eps_max: f64,
    /// Maximum number of evaluations of `G`.
    pub sigma_max: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            eps_max: 1e-8,
            sigma_max: 500,
        }
    }
}

impl FixedPointOptions {
    pub fn new(eps_max: f64, sigma_max: usize) -> Self {
        Self { eps_max, sigma_max }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps_max > 0.0 && self.eps_max.is_finite()) {
            return Err(Error::Strategy(format!(
                "eps_max must be positive and finite, got {}",
                self.eps_max
            )));
        }
        if self.sigma_max == 0 {
            return Err(Error::Strategy("sigma_max must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    Diverged,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::MaxIterations => "max_iterations",
            Self::Diverged => "diverged",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Diagnostics of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub sigma: usize,
    /// `|G(v_sigma) - v_sigma|_inf`
    pub eps: f64,
    /// `|G(v_sigma) - v_sigma|_2`
    pub residual_norm: f64,
    /// `|v_{sigma+1} - v_sigma|_2`; zero on the final record.
    pub step_norm: f64,
    /// Anderson columns used for this step; zero for the other strategies.
    pub memory_used: usize,
    /// `|gamma|_2` of the Anderson step, if one was solved.
    pub gamma_norm: Option<f64>,
    /// Wall-clock seconds since the start of the solve.
    pub elapsed: f64,
}

impl IterationRecord {
    /// Equality of all fields except the wall-clock time.
    pub fn same_numerics(&self, other: &Self) -> bool {
        self.sigma == other.sigma
            && self.eps.to_bits() == other.eps.to_bits()
            && self.residual_norm.to_bits() == other.residual_norm.to_bits()
            && self.step_norm.to_bits() == other.step_norm.to_bits()
            && self.memory_used == other.memory_used
            && self.gamma_norm.map(f64::to_bits) == other.gamma_norm.map(f64::to_bits)
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Last iterate at which `G` was evaluated.
    pub profile: DVector<f64>,
    /// `G(profile)`.
    pub image: DVector<f64>,
    pub termination: Termination,
    /// Number of evaluations of `G`.
    pub evaluations: usize,
    pub trace: Vec<IterationRecord>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    /// Steps taken before termination (`evaluations - 1`).
    pub fn iterations(&self) -> usize {
        self.evaluations.saturating_sub(1)
    }

    pub fn final_eps(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.eps)
    }

    /// Bitwise equality of profile, termination and trace numerics.
    pub fn same_numerics(&self, other: &Self) -> bool {
        self.termination == other.termination
            && self.evaluations == other.evaluations
            && self.profile.len() == other.profile.len()
            && self
                .profile
                .iter()
                .zip(other.profile.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.trace.len() == other.trace.len()
            && self
                .trace
                .iter()
                .zip(&other.trace)
                .all(|(a, b)| a.same_numerics(b))
    }

    /// Writes the trace as CSV. The wall-clock column is omitted unless
    /// `with_time` is set so that the output is reproducible.
    pub fn write_trace_csv<W: Write>(&self, mut out: W, with_time: bool) -> io::Result<()> {
        write!(out, "sigma,eps,residual_norm,step_norm,memory_used,gamma_norm")?;
        writeln!(out, "{}", if with_time { ",elapsed" } else { "" })?;
        for r in &self.trace {
            write!(
                out,
                "{},{:e},{:e},{:e},{},{}",
                r.sigma,
                r.eps,
                r.residual_norm,
                r.step_norm,
                r.memory_used,
                r.gamma_norm.map(|g| format!("{g:e}")).unwrap_or_default()
            )?;
            if with_time {
                write!(out, ",{:.6}", r.elapsed)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// `G(v) - v`.
pub fn residual<F>(map: &mut F, v: &DVector<f64>) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let gv = map(v)?;
    check_dim("fixed-point map output", v.len(), gv.len())?;
    Ok(gv - v)
}

/// `(1 - beta) v + beta G(v)`.
pub fn step_scalar_mix(v: &DVector<f64>, gv: &DVector<f64>, beta: f64) -> DVector<f64> {
    v * (1.0 - beta) + gv * beta
}

/// `(I - Pi) v + Pi G(v) = v + Pi (G(v) - v)`.
pub fn step_matrix_filter(v: &DVector<f64>, gv: &DVector<f64>, pi: &DMatrix<f64>) -> DVector<f64> {
    v + pi * (gv - v)
}

/// Runs the fixed-point iteration from `v0` until `|G(v) - v|_inf <= eps_max`,
/// `sigma_max` evaluations have been spent, or the residual exceeds
/// [`DIVERGENCE_THRESHOLD`] or becomes non-finite.
pub fn run_fixed_point<F>(
    mut map: F,
    v0: &DVector<f64>,
    strategy: &UpdateStrategy,
    options: &FixedPointOptions,
) -> Result<SolveReport>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    options.validate()?;
    strategy.validate(v0.len())?;
    if v0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("initial coupling profile".into()));
    }
    let mut anderson = match strategy {
        UpdateStrategy::Anderson {
            memory,
            regularization,
        } => Some(AndersonState::new(*memory, *regularization)?),
        _ => None,
    };

    let start = Instant::now();
    let mut trace = Vec::new();
    let mut v = v0.clone();
    let mut evaluations = 0;
    loop {
        let gv = map(&v)?;
        check_dim("fixed-point map output", v.len(), gv.len())?;
        evaluations += 1;
        let g = &gv - &v;
        let eps = if g.iter().any(|x| !x.is_finite()) {
            f64::INFINITY
        } else {
            g.amax()
        };
        let mut record = IterationRecord {
            sigma: evaluations - 1,
            eps,
            residual_norm: g.norm(),
            step_norm: 0.0,
            memory_used: 0,
            gamma_norm: None,
            elapsed: 0.0,
        };

        let termination = if eps <= options.eps_max {
            Some(Termination::Converged)
        } else if !eps.is_finite() || eps > DIVERGENCE_THRESHOLD {
            Some(Termination::Diverged)
        } else if evaluations >= options.sigma_max {
            Some(Termination::MaxIterations)
        } else {
            None
        };
        if let Some(termination) = termination {
            record.elapsed = start.elapsed().as_secs_f64();
            trace.push(record);
            return Ok(SolveReport {
                profile: v,
                image: gv,
                termination,
                evaluations,
                trace,
            });
        }

        let next = match strategy {
            UpdateStrategy::Plain => gv,
            UpdateStrategy::ScalarMix { beta } => step_scalar_mix(&v, &gv, *beta),
            UpdateStrategy::MatrixFilter { pi } => step_matrix_filter(&v, &gv, pi),
            UpdateStrategy::Anderson { .. } => {
                let state = anderson.as_mut().expect("Anderson state initialised");
                let step = state.step(&v, &gv, &g)?;
                record.memory_used = step.memory_used;
                record.gamma_norm = step.gamma.as_ref().map(|x| x.norm());
                step.next
            }
        };
        record.step_norm = (&next - &v).norm();
        record.elapsed = start.elapsed().as_secs_f64();
        trace.push(record);
        v = next;
    }
}
