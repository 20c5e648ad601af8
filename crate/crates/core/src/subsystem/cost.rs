use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};

/// Weighted deviation `sum_k |z_k - target|^2_W` over blocks of `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracking {
    pub weight: DMatrix<f64>,
    pub target: DVector<f64>,
}

/// Penalty on input increments, anchored at the last applied input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRate {
    pub weight: DMatrix<f64>,
    pub previous: DVector<f64>,
}

/// Quadratic local cost `J_s`.
///
/// Every term is optional. With positive semidefinite weights the cost is
/// non-negative and vanishes at the operating point when all targets are zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalCost {
    /// Predicted outputs `y(1..=N)` against a constant target.
    pub tracking: Option<Tracking>,
    /// Control effort `sum_t |u(t)|^2_R`.
    pub effort: Option<DMatrix<f64>>,
    /// Control increments `sum_t |u(t) - u(t-1)|^2_R`.
    pub rate: Option<InputRate>,
    /// Set-point deviation `|r - r_ref|^2_W` (set-point mode only).
    pub setpoint: Option<Tracking>,
    /// Scalar weight on `|v_in|^2`.
    pub coupling_weight: f64,
}

fn quad(w: &DMatrix<f64>, e: &DVector<f64>) -> f64 {
    e.dot(&(w * e))
}

fn blocks_sum(stack: &DVector<f64>, t: &Tracking) -> f64 {
    let k = t.target.len();
    if k == 0 {
        return 0.0;
    }
    (0..stack.len() / k)
        .map(|i| quad(&t.weight, &(stack.rows(i * k, k) - &t.target)))
        .sum()
}

impl LocalCost {
    pub(crate) fn validate(&self, ny: usize, nu: usize, nr: usize) -> Result<()> {
        let square = |name: &str, m: &DMatrix<f64>, n: usize| -> Result<()> {
            check_dim(format!("cost: {name} weight rows"), n, m.nrows())?;
            check_dim(format!("cost: {name} weight cols"), n, m.ncols())
        };
        if let Some(t) = &self.tracking {
            square("tracking", &t.weight, ny)?;
            check_dim("cost: tracking target", ny, t.target.len())?;
        }
        if let Some(r) = &self.effort {
            square("effort", r, nu)?;
        }
        if let Some(r) = &self.rate {
            square("rate", &r.weight, nu)?;
            check_dim("cost: previous input", nu, r.previous.len())?;
        }
        if let Some(t) = &self.setpoint {
            square("set-point", &t.weight, nr)?;
            check_dim("cost: set-point target", nr, t.target.len())?;
        }
        Ok(())
    }

    /// Evaluates the cost on predicted outputs, the input profile (time-major,
    /// `nu` per step), the set-point and the incoming profile.
    pub fn evaluate(
        &self,
        outputs: &DVector<f64>,
        inputs: Option<&DVector<f64>>,
        setpoint: Option<&DVector<f64>>,
        v_in: &DVector<f64>,
    ) -> f64 {
        let mut j = 0.0;
        if let Some(t) = &self.tracking {
            j += blocks_sum(outputs, t);
        }
        if let Some(u) = inputs {
            if let Some(w) = &self.effort {
                let nu = w.nrows();
                if nu > 0 {
                    j += (0..u.len() / nu)
                        .map(|t| quad(w, &u.rows(t * nu, nu).into_owned()))
                        .sum::<f64>();
                }
            }
            if let Some(rate) = &self.rate {
                let nu = rate.previous.len();
                if nu > 0 {
                    let mut prev = rate.previous.clone();
                    for t in 0..u.len() / nu {
                        let cur = u.rows(t * nu, nu).into_owned();
                        j += quad(&rate.weight, &(&cur - &prev));
                        prev = cur;
                    }
                }
            }
        }
        if let (Some(t), Some(r)) = (&self.setpoint, setpoint) {
            j += quad(&t.weight, &(r - &t.target));
        }
        j + self.coupling_weight * v_in.norm_squared()
    }
}
