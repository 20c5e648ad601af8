//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use hiercoord::network::{EdgeSpec, Layout, NetworkTopology};
use hiercoord::subsystem::{LinearSubsystem, LocalSubsystem, StateSpaceModel};
use nalgebra::{DMatrix, DVector};

/// Name of one scalar coupling entry: edge, time step, component.
pub type Label = (usize, usize, usize, usize);

/// Labels of a stacking, built from the ordering rules alone: edges sorted by
/// (target, source) for incoming and (source, target) for outgoing, each edge
/// a contiguous block of time steps, components innermost.
pub fn labels(topology: &NetworkTopology, layout: Layout) -> Vec<Label> {
    let mut edges: Vec<EdgeSpec> = topology.edges().to_vec();
    match layout {
        Layout::Incoming => edges.sort_by_key(|e| (e.target, e.source)),
        Layout::Outgoing => edges.sort_by_key(|e| (e.source, e.target)),
    }
    let mut out = Vec::new();
    for e in edges {
        for t in 0..topology.horizon() {
            for c in 0..e.signal_dim {
                out.push((e.source, e.target, t, c));
            }
        }
    }
    out
}

/// Routing by looking every incoming label up in the outgoing stacking.
pub fn route_by_name(topology: &NetworkTopology, outgoing: &DVector<f64>) -> DVector<f64> {
    let position: HashMap<Label, usize> = labels(topology, Layout::Outgoing)
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    let inc = labels(topology, Layout::Incoming);
    DVector::from_iterator(inc.len(), inc.iter().map(|l| outgoing[position[l]]))
}

/// Per-step incoming vectors of subsystem `s` from its edge-major slice.
fn per_step(edge_dims: &[usize], horizon: usize, slice: &DVector<f64>, t: usize) -> DVector<f64> {
    let mut parts = Vec::new();
    let mut offset = 0;
    for &d in edge_dims {
        for c in 0..d {
            parts.push(slice[horizon * offset + t * d + c]);
        }
        offset += d;
    }
    DVector::from_vec(parts)
}

/// Simulates subsystem `s` step by step over the horizon and returns its
/// outgoing slice (edge-major, time-major per edge) and outputs `y(1..=N)`.
pub fn simulate(
    topology: &NetworkTopology,
    s: usize,
    model: &StateSpaceModel,
    x0: &DVector<f64>,
    u: Option<&DVector<f64>>,
    v_in: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = topology.horizon();
    let in_dims: Vec<usize> = topology.incoming_edges(s).iter().map(|e| e.signal_dim).collect();
    let out_dims: Vec<usize> = topology.outgoing_edges(s).iter().map(|e| e.signal_dim).collect();
    let dout: usize = out_dims.iter().sum();
    let nu = model.input_dim();
    let mut x = x0.clone();
    let mut out = DVector::zeros(n * dout);
    let mut ys = Vec::new();
    for t in 0..n {
        let v = per_step(&in_dims, n, v_in, t);
        let ut = match u {
            Some(u) => u.rows(t * nu, nu).into_owned(),
            None => DVector::zeros(nu),
        };
        let vo = model.coupling_output(&x, &ut, &v);
        let mut offset = 0;
        for &d in &out_dims {
            for c in 0..d {
                out[n * offset + t * d + c] = vo[offset + c];
            }
            offset += d;
        }
        x = model.step(&x, &ut, &v);
        ys.extend((&model.c_y * &x).iter().copied());
    }
    (out, DVector::from_vec(ys))
}

/// One full coordinator round computed by simulation and name-based routing:
/// each controlled subsystem applies its control law to the set-point slice.
pub fn simulated_round(
    topology: &NetworkTopology,
    subsystems: &[LocalSubsystem],
    states: &[DVector<f64>],
    setpoints: &DVector<f64>,
    v_in: &DVector<f64>,
) -> DVector<f64> {
    let mut outgoing = DVector::zeros(topology.dim());
    let mut r_off = 0;
    for (s, sub) in subsystems.iter().enumerate() {
        let lin = sub.as_linear().expect("linear subsystem");
        let slice = v_in.rows_range(topology.slice_range(s, Layout::Incoming)).into_owned();
        let u = if lin.is_controlled() {
            let nr = lin.setpoint_dim();
            let r = setpoints.rows(r_off, nr).into_owned();
            r_off += nr;
            Some(lin.control_profile(&states[s], &r, &slice).unwrap())
        } else {
            None
        };
        let (out, _) = simulate(topology, s, lin.model(), &states[s], u.as_ref(), &slice);
        outgoing
            .rows_range_mut(topology.slice_range(s, Layout::Outgoing))
            .copy_from(&out);
    }
    route_by_name(topology, &outgoing)
}

/// Stacks the per-subsystem states.
pub fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        parts.iter().map(|p| p.len()).sum(),
        parts.iter().flat_map(|p| p.iter().copied()),
    )
}

/// Reorders the per-step coupling blocks of a model after relabelling the
/// subsystems with `perm` (old index -> new index).
fn relabel_model(
    topology: &NetworkTopology,
    s: usize,
    model: &StateSpaceModel,
    perm: &[usize],
) -> StateSpaceModel {
    // column blocks of E / D_v follow incoming edges sorted by source
    let inc = topology.incoming_edges(s);
    let mut inc_offsets = Vec::new();
    let mut off = 0;
    for e in &inc {
        inc_offsets.push(off);
        off += e.signal_dim;
    }
    let mut inc_order: Vec<usize> = (0..inc.len()).collect();
    inc_order.sort_by_key(|&i| perm[inc[i].source]);
    let col_perm: Vec<usize> = inc_order
        .iter()
        .flat_map(|&i| (0..inc[i].signal_dim).map(move |c| (i, c)))
        .map(|(i, c)| inc_offsets[i] + c)
        .collect();

    let out = topology.outgoing_edges(s);
    let mut out_offsets = Vec::new();
    let mut off = 0;
    for e in &out {
        out_offsets.push(off);
        off += e.signal_dim;
    }
    let mut out_order: Vec<usize> = (0..out.len()).collect();
    out_order.sort_by_key(|&i| perm[out[i].target]);
    let row_perm: Vec<usize> = out_order
        .iter()
        .flat_map(|&i| (0..out[i].signal_dim).map(move |c| (i, c)))
        .map(|(i, c)| out_offsets[i] + c)
        .collect();

    let cols = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), col_perm.len(), |i, j| m[(i, col_perm[j])]);
    let rows = |m: &DMatrix<f64>| DMatrix::from_fn(row_perm.len(), m.ncols(), |i, j| m[(row_perm[i], j)]);
    StateSpaceModel::new(
        model.a.clone(),
        model.b.clone(),
        cols(&model.e),
        rows(&model.c_v),
        model.c_y.clone(),
    )
    .with_feedthrough(rows(&model.d_u), rows(&cols(&model.d_v)))
}

/// The same network with subsystem `s` renamed `perm[s]`. Control laws are
/// rebuilt with the given MPC weights; costs are carried over.
pub fn relabel(
    topology: &NetworkTopology,
    subsystems: &[LinearSubsystem],
    states: &[DVector<f64>],
    perm: &[usize],
    mpc: impl Fn(usize) -> Option<(DMatrix<f64>, DMatrix<f64>)>,
) -> (NetworkTopology, Vec<LinearSubsystem>, Vec<DVector<f64>>) {
    let n = topology.n_subsystems();
    let edges = topology
        .edges()
        .iter()
        .map(|e| EdgeSpec::new(perm[e.source], perm[e.target], e.signal_dim))
        .collect();
    let controlled: Vec<usize> = topology.controlled().into_iter().map(|s| perm[s]).collect();
    let new_topo = NetworkTopology::new(n, edges, &controlled, topology.horizon()).unwrap();
    let mut subs: Vec<Option<LinearSubsystem>> = vec![None; n];
    let mut new_states = vec![DVector::zeros(0); n];
    for s in 0..n {
        let model = relabel_model(topology, s, subsystems[s].model(), perm);
        let mut sub = LinearSubsystem::new(perm[s], model, &new_topo).unwrap();
        if let Some((q, r)) = mpc(s) {
            sub = sub.with_mpc(&q, &r).unwrap();
        }
        sub = sub.with_cost(subsystems[s].cost().clone()).unwrap();
        subs[perm[s]] = Some(sub);
        new_states[perm[s]] = states[s].clone();
    }
    (new_topo, subs.into_iter().map(Option::unwrap).collect(), new_states)
}
