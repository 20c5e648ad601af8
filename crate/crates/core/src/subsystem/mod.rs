//! Local subsystems and their response map `g_out`.
//!
//! A subsystem receives a presumed incoming profile together with either a
//! set-point (which its local control law turns into a control profile) or a
//! control profile directly, and answers with its outgoing profile and its
//! contribution to the central cost. The coordinator only ever sees this
//! response; [`build_condensed`] is the one place that looks inside.

mod condensed;
mod cost;
mod model;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use condensed::{build_condensed, CondensedModel, PsiMaps};
pub use cost::{InputRate, LocalCost, Tracking};
pub use model::{ControlGains, OperatingPoint, StateSpaceModel};

use crate::error::{check_dim, Error, Result};
use crate::network::NetworkTopology;
use model::Prediction;

/// What the coordinator sends alongside the incoming profile.
#[derive(Debug, Clone, Copy)]
pub enum Decision<'a> {
    /// Uncontrolled subsystems receive no decision.
    Uncontrolled,
    SetPoint(&'a DVector<f64>),
    Control(&'a DVector<f64>),
}

impl Decision<'_> {
    fn label(&self) -> &'static str {
        match self {
            Decision::Uncontrolled => "no",
            Decision::SetPoint(_) => "set-point",
            Decision::Control(_) => "control-profile",
        }
    }
}

/// Outgoing profile deviation and local cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub v_out: DVector<f64>,
    pub cost: f64,
}

/// Linear subsystem with optional local control law and quadratic cost.
#[derive(Debug, Clone)]
pub struct LinearSubsystem {
    index: usize,
    model: StateSpaceModel,
    in_dim: usize,
    out_dim: usize,
    prediction: Prediction,
    gains: Option<ControlGains>,
    cost: LocalCost,
}

impl LinearSubsystem {
    /// Builds subsystem `index` of `topology` from its state-space data. The
    /// coupling matrices must match the topology's per-step edge dimensions.
    pub fn new(index: usize, model: StateSpaceModel, topology: &NetworkTopology) -> Result<Self> {
        if index >= topology.n_subsystems() {
            return Err(Error::Model(format!("subsystem index {index} not in topology")));
        }
        model.validate()?;
        check_dim(
            format!("subsystem {index}: columns of E"),
            topology.incoming_step_dim(index),
            model.coupling_in_dim(),
        )?;
        check_dim(
            format!("subsystem {index}: rows of C_v"),
            topology.outgoing_step_dim(index),
            model.coupling_out_dim(),
        )?;
        let controlled = topology.is_controlled(index);
        if controlled != (model.input_dim() > 0) {
            return Err(Error::Model(format!(
                "subsystem {index}: controlled={controlled} but input_dim={}",
                model.input_dim()
            )));
        }
        let in_dims: Vec<usize> = topology.incoming_edges(index).iter().map(|e| e.signal_dim).collect();
        let out_dims: Vec<usize> = topology.outgoing_edges(index).iter().map(|e| e.signal_dim).collect();
        let horizon = topology.horizon();
        let prediction = Prediction::build(&model, horizon, &in_dims, &out_dims);
        Ok(Self {
            index,
            in_dim: horizon * in_dims.iter().sum::<usize>(),
            out_dim: horizon * out_dims.iter().sum::<usize>(),
            model,
            prediction,
            gains: None,
            cost: LocalCost::default(),
        })
    }

    /// Installs an explicit control law.
    pub fn with_gains(mut self, gains: ControlGains) -> Result<Self> {
        if !self.is_controlled() {
            return Err(Error::Model(format!(
                "subsystem {} is uncontrolled and takes no control law",
                self.index
            )));
        }
        let rows = self.prediction.horizon * self.model.input_dim();
        for (name, m, cols) in [
            ("K_x", &gains.k_x, self.model.state_dim()),
            ("K_v", &gains.k_v, self.in_dim),
        ] {
            check_dim(format!("subsystem {}: rows of {name}", self.index), rows, m.nrows())?;
            check_dim(format!("subsystem {}: cols of {name}", self.index), cols, m.ncols())?;
        }
        check_dim(format!("subsystem {}: rows of K_r", self.index), rows, gains.k_r.nrows())?;
        self.gains = Some(gains);
        Ok(self)
    }

    /// Synthesizes the control law as unconstrained linear MPC with output
    /// weight `q` and input weight `r` (see [`ControlGains`]).
    pub fn with_mpc(self, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Self> {
        let gains = ControlGains::unconstrained_mpc(&self.prediction, q, r)?;
        self.with_gains(gains)
    }

    pub fn with_cost(mut self, cost: LocalCost) -> Result<Self> {
        self.set_cost(cost)?;
        Ok(self)
    }

    pub fn set_cost(&mut self, cost: LocalCost) -> Result<()> {
        cost.validate(self.model.output_dim(), self.model.input_dim(), self.setpoint_dim())?;
        self.cost = cost;
        Ok(())
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn model(&self) -> &StateSpaceModel {
        &self.model
    }

    pub fn gains(&self) -> Option<&ControlGains> {
        self.gains.as_ref()
    }

    pub fn cost(&self) -> &LocalCost {
        &self.cost
    }

    pub fn horizon(&self) -> usize {
        self.prediction.horizon
    }

    pub fn is_controlled(&self) -> bool {
        self.model.input_dim() > 0
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    pub fn setpoint_dim(&self) -> usize {
        self.gains.as_ref().map_or(0, ControlGains::setpoint_dim)
    }

    pub fn incoming_dim(&self) -> usize {
        self.in_dim
    }

    pub fn outgoing_dim(&self) -> usize {
        self.out_dim
    }

    /// Coupling output maps `(Phi_x, Phi_u, Phi_v)`.
    pub fn phi(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) {
        (&self.prediction.phi_x, &self.prediction.phi_u, &self.prediction.phi_v)
    }

    /// Predicted outputs `y(1..=N)` for the given data.
    pub fn predict_outputs(
        &self,
        x: &DVector<f64>,
        u: Option<&DVector<f64>>,
        v_in: &DVector<f64>,
    ) -> DVector<f64> {
        let p = &self.prediction;
        let mut y = &p.out_x * x + &p.out_v * v_in;
        if let Some(u) = u {
            y += &p.out_u * u;
        }
        y
    }

    /// Control profile `u = K_x x + K_r r + K_v v_in`.
    pub fn control_profile(
        &self,
        x: &DVector<f64>,
        r: &DVector<f64>,
        v_in: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        if !self.is_controlled() {
            return Err(Error::Mode {
                index: self.index,
                expected: "no",
                actual: "set-point",
            });
        }
        let g = self.gains.as_ref().ok_or_else(|| {
            Error::Model(format!("subsystem {} has no control law", self.index))
        })?;
        self.check_inputs(x, v_in)?;
        check_dim(format!("subsystem {}: set-point", self.index), g.k_r.ncols(), r.len())?;
        Ok(&g.k_x * x + &g.k_r * r + &g.k_v * v_in)
    }

    fn check_inputs(&self, x: &DVector<f64>, v_in: &DVector<f64>) -> Result<()> {
        check_dim(format!("subsystem {}: state", self.index), self.state_dim(), x.len())?;
        check_dim(format!("subsystem {}: incoming profile", self.index), self.in_dim, v_in.len())
    }

    /// Outgoing profile and local cost for one presumed incoming profile.
    pub fn respond(
        &self,
        x: &DVector<f64>,
        decision: Decision<'_>,
        v_in: &DVector<f64>,
    ) -> Result<Response> {
        self.check_inputs(x, v_in)?;
        let (u, r) = match (decision, self.is_controlled()) {
            (Decision::Uncontrolled, false) => (None, None),
            (Decision::SetPoint(r), true) if self.gains.is_some() => {
                (Some(self.control_profile(x, r, v_in)?), Some(r))
            }
            (Decision::Control(u), true) => {
                check_dim(
                    format!("subsystem {}: control profile", self.index),
                    self.horizon() * self.input_dim(),
                    u.len(),
                )?;
                (Some(u.clone()), None)
            }
            (d, controlled) => {
                let expected = match (controlled, self.gains.is_some()) {
                    (false, _) => "no",
                    (true, true) => "set-point or control-profile",
                    (true, false) => "control-profile",
                };
                return Err(Error::Mode {
                    index: self.index,
                    expected,
                    actual: d.label(),
                });
            }
        };
        let p = &self.prediction;
        let mut v_out = &p.phi_x * x + &p.phi_v * v_in;
        if let Some(u) = &u {
            v_out += &p.phi_u * u;
        }
        let y = self.predict_outputs(x, u.as_ref(), v_in);
        let cost = self.cost.evaluate(&y, u.as_ref(), r, v_in);
        Ok(Response { v_out, cost })
    }
}

type ResponseFn = dyn Fn(&DVector<f64>, Decision<'_>, &DVector<f64>) -> Result<Response> + Send + Sync;

/// Opaque subsystem: only its response map is available.
#[derive(Clone)]
pub struct BlackBoxSubsystem {
    state_dim: usize,
    input_dim: usize,
    setpoint_dim: usize,
    horizon: usize,
    map: Arc<ResponseFn>,
}

impl fmt::Debug for BlackBoxSubsystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlackBoxSubsystem")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("setpoint_dim", &self.setpoint_dim)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl BlackBoxSubsystem {
    /// The map must be deterministic for traces to be reproducible.
    pub fn new<F>(state_dim: usize, input_dim: usize, setpoint_dim: usize, horizon: usize, map: F) -> Self
    where
        F: Fn(&DVector<f64>, Decision<'_>, &DVector<f64>) -> Result<Response> + Send + Sync + 'static,
    {
        Self {
            state_dim,
            input_dim,
            setpoint_dim,
            horizon,
            map: Arc::new(map),
        }
    }

    /// Hides a linear subsystem behind its response map.
    pub fn wrap(sub: LinearSubsystem) -> Self {
        let (n, nu, nr, h) = (sub.state_dim(), sub.input_dim(), sub.setpoint_dim(), sub.horizon());
        Self::new(n, nu, nr, h, move |x, d, v| sub.respond(x, d, v))
    }

    pub fn respond(&self, x: &DVector<f64>, decision: Decision<'_>, v_in: &DVector<f64>) -> Result<Response> {
        (self.map)(x, decision, v_in)
    }
}

/// A subsystem as held by the coordinator.
#[derive(Debug, Clone)]
pub enum LocalSubsystem {
    Linear(LinearSubsystem),
    BlackBox(BlackBoxSubsystem),
}

impl From<LinearSubsystem> for LocalSubsystem {
    fn from(s: LinearSubsystem) -> Self {
        LocalSubsystem::Linear(s)
    }
}

impl From<BlackBoxSubsystem> for LocalSubsystem {
    fn from(s: BlackBoxSubsystem) -> Self {
        LocalSubsystem::BlackBox(s)
    }
}

impl LocalSubsystem {
    pub fn respond(&self, x: &DVector<f64>, decision: Decision<'_>, v_in: &DVector<f64>) -> Result<Response> {
        match self {
            LocalSubsystem::Linear(s) => s.respond(x, decision, v_in),
            LocalSubsystem::BlackBox(s) => s.respond(x, decision, v_in),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            LocalSubsystem::Linear(s) => s.state_dim(),
            LocalSubsystem::BlackBox(s) => s.state_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            LocalSubsystem::Linear(s) => s.input_dim(),
            LocalSubsystem::BlackBox(s) => s.input_dim,
        }
    }

    pub fn setpoint_dim(&self) -> usize {
        match self {
            LocalSubsystem::Linear(s) => s.setpoint_dim(),
            LocalSubsystem::BlackBox(s) => s.setpoint_dim,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            LocalSubsystem::Linear(s) => s.horizon(),
            LocalSubsystem::BlackBox(s) => s.horizon,
        }
    }

    pub fn as_linear(&self) -> Option<&LinearSubsystem> {
        match self {
            LocalSubsystem::Linear(s) => Some(s),
            LocalSubsystem::BlackBox(_) => None,
        }
    }

    pub fn as_linear_mut(&mut self) -> Option<&mut LinearSubsystem> {
        match self {
            LocalSubsystem::Linear(s) => Some(s),
            LocalSubsystem::BlackBox(_) => None,
        }
    }
}
