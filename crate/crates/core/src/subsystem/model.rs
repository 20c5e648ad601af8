use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Discrete-time linear model of one subsystem, in deviation variables:
///
/// ```text
/// x(t+1) = A x(t) + B u(t) + E v_in(t)
/// v_out(t) = C_v x(t) + D_u u(t) + D_v v_in(t)
/// y(t)     = C_y x(t)
/// ```
///
/// Columns of `E` and `D_v` are grouped per incoming edge (canonical order,
/// sources ascending); rows of `C_v`, `D_u`, `D_v` per outgoing edge (targets
/// ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub c_v: DMatrix<f64>,
    pub d_u: DMatrix<f64>,
    pub d_v: DMatrix<f64>,
    pub c_y: DMatrix<f64>,
    pub operating_point: Option<OperatingPoint>,
}

/// Linearization point; only used when converting deviations to absolute values.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
}

impl StateSpaceModel {
    /// Strictly proper model (zero feedthrough).
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        e: DMatrix<f64>,
        c_v: DMatrix<f64>,
        c_y: DMatrix<f64>,
    ) -> Self {
        let d_u = DMatrix::zeros(c_v.nrows(), b.ncols());
        let d_v = DMatrix::zeros(c_v.nrows(), e.ncols());
        Self {
            a,
            b,
            e,
            c_v,
            d_u,
            d_v,
            c_y,
            operating_point: None,
        }
    }

    pub fn with_feedthrough(mut self, d_u: DMatrix<f64>, d_v: DMatrix<f64>) -> Self {
        self.d_u = d_u;
        self.d_v = d_v;
        self
    }

    pub fn has_coupling_feedthrough(&self) -> bool {
        self.d_v.iter().any(|&x| x != 0.0)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c_y.nrows()
    }

    pub fn coupling_in_dim(&self) -> usize {
        self.e.ncols()
    }

    pub fn coupling_out_dim(&self) -> usize {
        self.c_v.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(Error::Model(format!(
                "A must be square, got {}x{}",
                n,
                self.a.ncols()
            )));
        }
        check_dim("model: rows of B", n, self.b.nrows())?;
        check_dim("model: rows of E", n, self.e.nrows())?;
        check_dim("model: columns of C_v", n, self.c_v.ncols())?;
        check_dim("model: columns of C_y", n, self.c_y.ncols())?;
        check_dim("model: rows of D_u", self.c_v.nrows(), self.d_u.nrows())?;
        check_dim("model: columns of D_u", self.b.ncols(), self.d_u.ncols())?;
        check_dim("model: rows of D_v", self.c_v.nrows(), self.d_v.nrows())?;
        check_dim("model: columns of D_v", self.e.ncols(), self.d_v.ncols())?;
        if let Some(op) = &self.operating_point {
            check_dim("operating point: x", n, op.x.len())?;
            check_dim("operating point: u", self.b.ncols(), op.u.len())?;
        }
        let all = [&self.a, &self.b, &self.e, &self.c_v, &self.d_u, &self.d_v, &self.c_y];
        if all.iter().any(|m| m.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("model matrices".into()));
        }
        Ok(())
    }

    /// Coupling output at one step.
    pub fn coupling_output(&self, x: &DVector<f64>, u: &DVector<f64>, v_in: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.c_v * x + &self.d_v * v_in;
        if self.input_dim() > 0 {
            out += &self.d_u * u;
        }
        out
    }

    /// One step of the true dynamics with per-step input and coupling vectors.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, v_in: &DVector<f64>) -> DVector<f64> {
        let mut next = &self.a * x + &self.e * v_in;
        if self.input_dim() > 0 {
            next += &self.b * u;
        }
        next
    }
}

/// Horizon-unrolled affine maps of one subsystem.
///
/// Profiles of `u` are time-major (`u(0), u(1), ...`); incoming and outgoing
/// coupling slices are edge-major with a time-major block per edge, matching
/// the network stackings.
#[derive(Debug, Clone)]
pub(crate) struct Prediction {
    pub nu: usize,
    pub ny: usize,
    pub horizon: usize,
    pub phi_x: DMatrix<f64>,
    pub phi_u: DMatrix<f64>,
    pub phi_v: DMatrix<f64>,
    /// Outputs `y(1..=N)` stacked.
    pub out_x: DMatrix<f64>,
    pub out_u: DMatrix<f64>,
    pub out_v: DMatrix<f64>,
}

impl Prediction {
    pub fn build(
        model: &StateSpaceModel,
        horizon: usize,
        in_edge_dims: &[usize],
        out_edge_dims: &[usize],
    ) -> Self {
        let n = model.state_dim();
        let nu = model.input_dim();
        let ny = model.output_dim();
        let din: usize = in_edge_dims.iter().sum();
        let dout: usize = out_edge_dims.iter().sum();
        let nn = horizon;

        let mut powers = Vec::with_capacity(nn + 1);
        powers.push(DMatrix::identity(n, n));
        for p in 1..=nn {
            powers.push(&model.a * &powers[p - 1]);
        }
        let pow_b: Vec<DMatrix<f64>> = powers.iter().map(|p| p * &model.b).collect();
        let pow_e: Vec<DMatrix<f64>> = powers.iter().map(|p| p * &model.e).collect();

        // x(t) for t = 0..=N
        let mut sx = DMatrix::zeros((nn + 1) * n, n);
        let mut su = DMatrix::zeros((nn + 1) * n, nn * nu);
        let mut sv = DMatrix::zeros((nn + 1) * n, nn * din);
        for t in 0..=nn {
            sx.view_mut((t * n, 0), (n, n)).copy_from(&powers[t]);
            for j in 0..t {
                let lag = t - 1 - j;
                if nu > 0 {
                    su.view_mut((t * n, j * nu), (n, nu)).copy_from(&pow_b[lag]);
                }
                let mut step_off = 0;
                for &d in in_edge_dims {
                    for c in 0..d {
                        let col = nn * step_off + j * d + c;
                        sv.view_mut((t * n, col), (n, 1))
                            .copy_from(&pow_e[lag].column(step_off + c));
                    }
                    step_off += d;
                }
            }
        }

        let project = |rows: &dyn Fn(usize) -> Vec<(usize, DMatrix<f64>, usize)>,
                       total: usize,
                       src: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(total, src.ncols());
            for t in 0..=nn {
                for (row, weight, block) in rows(t) {
                    let state = src.view((block * n, 0), (n, src.ncols()));
                    out.row_mut(row).copy_from(&(weight * state));
                }
            }
            out
        };

        // coupling outputs v_out(t) = C_v x(t), t = 0..N-1, edge-major
        let coupling_rows = |t: usize| {
            let mut rows = Vec::new();
            if t < nn {
                let mut step_off = 0;
                for &d in out_edge_dims {
                    for c in 0..d {
                        let row = nn * step_off + t * d + c;
                        rows.push((row, model.c_v.rows(step_off + c, 1).into_owned(), t));
                    }
                    step_off += d;
                }
            }
            rows
        };
        // outputs y(t) = C_y x(t), t = 1..=N
        let output_rows = |t: usize| {
            let mut rows = Vec::new();
            if t >= 1 {
                for c in 0..ny {
                    rows.push(((t - 1) * ny + c, model.c_y.rows(c, 1).into_owned(), t));
                }
            }
            rows
        };

        let mut phi_u = project(&coupling_rows, nn * dout, &su);
        let mut phi_v = project(&coupling_rows, nn * dout, &sv);
        let mut out_off = 0;
        for &d in out_edge_dims {
            for c in 0..d {
                let src_row = out_off + c;
                for t in 0..nn {
                    let row = nn * out_off + t * d + c;
                    for k in 0..nu {
                        phi_u[(row, t * nu + k)] += model.d_u[(src_row, k)];
                    }
                    let mut in_off = 0;
                    for &di in in_edge_dims {
                        for ci in 0..di {
                            phi_v[(row, nn * in_off + t * di + ci)] += model.d_v[(src_row, in_off + ci)];
                        }
                        in_off += di;
                    }
                }
            }
            out_off += d;
        }

        Self {
            nu,
            ny,
            horizon: nn,
            phi_x: project(&coupling_rows, nn * dout, &sx),
            phi_u,
            phi_v,
            out_x: project(&output_rows, nn * ny, &sx),
            out_u: project(&output_rows, nn * ny, &su),
            out_v: project(&output_rows, nn * ny, &sv),
        }
    }
}

/// Affine control law `u = K_x x + K_r r + K_v v_in` over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGains {
    pub k_x: DMatrix<f64>,
    pub k_r: DMatrix<f64>,
    pub k_v: DMatrix<f64>,
}

impl ControlGains {
    pub fn setpoint_dim(&self) -> usize {
        self.k_r.ncols()
    }

    /// Unconstrained linear MPC: minimizes
    /// `sum_{t=1..N} |y(t) - r|^2_Q + sum_{t=0..N-1} |u(t)|^2_R`
    /// over the input profile given the presumed incoming profile.
    pub(crate) fn unconstrained_mpc(
        pred: &Prediction,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
    ) -> Result<Self> {
        let (ny, nu, nn) = (pred.ny, pred.nu, pred.horizon);
        check_dim("MPC output weight", ny, q.nrows())?;
        check_dim("MPC output weight", ny, q.ncols())?;
        check_dim("MPC input weight", nu, r.nrows())?;
        check_dim("MPC input weight", nu, r.ncols())?;
        if nu == 0 {
            return Err(Error::Model("MPC requires at least one input".into()));
        }
        let q_bar = block_diag_repeat(q, nn);
        let r_bar = block_diag_repeat(r, nn);
        let ou_t_q = pred.out_u.transpose() * &q_bar;
        let hessian = &ou_t_q * &pred.out_u + r_bar;
        let chol = hessian.cholesky().ok_or_else(|| {
            Error::Model("MPC Hessian is not positive definite (check R > 0)".into())
        })?;
        let mut tile = DMatrix::zeros(nn * ny, ny);
        for t in 0..nn {
            tile.view_mut((t * ny, 0), (ny, ny))
                .copy_from(&DMatrix::identity(ny, ny));
        }
        Ok(Self {
            k_x: -chol.solve(&(&ou_t_q * &pred.out_x)),
            k_r: chol.solve(&(&ou_t_q * tile)),
            k_v: -chol.solve(&(&ou_t_q * &pred.out_v)),
        })
    }
}

pub(crate) fn block_diag_repeat(block: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let (r, c) = block.shape();
    let mut out = DMatrix::zeros(r * count, c * count);
    for k in 0..count {
        out.view_mut((k * r, k * c), (r, c)).copy_from(block);
    }
    out
}
