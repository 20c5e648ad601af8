//! One-step simulation of the true interconnected network.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::network::{build_routing_matrix, Layout, NetworkTopology, RoutingMatrix};
use crate::subsystem::StateSpaceModel;

/// The interconnected plant, advanced one sample at a time.
///
/// Coupling signals at each sample solve `v_in = P (C_v x + D_u u + D_v v_in)`
/// with `P` the per-sample routing; without coupling feedthrough this is a
/// single matrix-vector product.
#[derive(Debug, Clone)]
pub struct NetworkPlant {
    topology: NetworkTopology,
    routing: RoutingMatrix,
    models: Vec<StateSpaceModel>,
    states: Vec<DVector<f64>>,
    /// `I - P blkdiag(D_v)` when some subsystem has coupling feedthrough.
    loop_matrix: Option<DMatrix<f64>>,
}

impl NetworkPlant {
    pub fn new(topology: &NetworkTopology, models: Vec<StateSpaceModel>, states: Vec<DVector<f64>>) -> Result<Self> {
        let n = topology.n_subsystems();
        check_dim("plant: model count", n, models.len())?;
        check_dim("plant: state count", n, states.len())?;
        let step = NetworkTopology::new(n, topology.edges().to_vec(), &topology.controlled(), 1)?;
        for (s, (m, x)) in models.iter().zip(&states).enumerate() {
            m.validate()?;
            check_dim(format!("plant {s}: state"), m.state_dim(), x.len())?;
            check_dim(format!("plant {s}: columns of E"), step.incoming_step_dim(s), m.coupling_in_dim())?;
            check_dim(format!("plant {s}: rows of C_v"), step.outgoing_step_dim(s), m.coupling_out_dim())?;
        }
        let routing = build_routing_matrix(&step);
        let loop_matrix = if models.iter().any(StateSpaceModel::has_coupling_feedthrough) {
            let d = step.dim();
            let mut dv = DMatrix::zeros(d, d);
            for (s, m) in models.iter().enumerate() {
                let rows = step.slice_range(s, Layout::Outgoing);
                let cols = step.slice_range(s, Layout::Incoming);
                dv.view_mut((rows.start, cols.start), (rows.len(), cols.len()))
                    .copy_from(&m.d_v);
            }
            Some(DMatrix::identity(d, d) - routing.apply_rows(&dv))
        } else {
            None
        };
        Ok(Self {
            topology: step,
            routing,
            models,
            states,
            loop_matrix,
        })
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn models(&self) -> &[StateSpaceModel] {
        &self.models
    }

    /// Current measured outputs `y_s = C_y x_s`.
    pub fn outputs(&self) -> Vec<DVector<f64>> {
        self.models
            .iter()
            .zip(&self.states)
            .map(|(m, x)| &m.c_y * x)
            .collect()
    }

    /// Incoming coupling signals (incoming stacking of one sample) for the
    /// given inputs at the current state.
    pub fn coupling(&self, inputs: &[DVector<f64>]) -> Result<DVector<f64>> {
        check_dim("plant: input count", self.models.len(), inputs.len())?;
        let mut free = DVector::zeros(self.topology.dim());
        for (s, ((m, x), u)) in self.models.iter().zip(&self.states).zip(inputs).enumerate() {
            check_dim(format!("plant {s}: input"), m.input_dim(), u.len())?;
            let mut out = &m.c_v * x;
            if m.input_dim() > 0 {
                out += &m.d_u * u;
            }
            free.rows_range_mut(self.topology.slice_range(s, Layout::Outgoing))
                .copy_from(&out);
        }
        let routed = self.routing.apply(&free);
        match &self.loop_matrix {
            None => Ok(routed),
            Some(l) => l
                .clone()
                .lu()
                .solve(&routed)
                .ok_or_else(|| Error::Model("algebraic coupling loop is singular".into())),
        }
    }

    /// Applies `inputs` for one sample; returns the coupling signals used.
    pub fn step(&mut self, inputs: &[DVector<f64>]) -> Result<DVector<f64>> {
        let v_in = self.coupling(inputs)?;
        let next: Vec<DVector<f64>> = self
            .models
            .iter()
            .zip(&self.states)
            .zip(inputs)
            .enumerate()
            .map(|(s, ((m, x), u))| {
                let v = v_in.rows_range(self.topology.slice_range(s, Layout::Incoming)).into_owned();
                m.step(x, u, &v)
            })
            .collect();
        if next.iter().flat_map(|x| x.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("plant state".into()));
        }
        self.states = next;
        Ok(v_in)
    }
}
