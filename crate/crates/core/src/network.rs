//! Coupling topology, canonical stackings and the routing permutation.
//!
//! Every directed edge `s -> s'` carries a signal of `signal_dim` components per
//! time step, so its profile over the horizon occupies `horizon * signal_dim`
//! contiguous entries (time-major inside the block). Two stackings of the same
//! edge set are used:
//!
//! * **incoming**: edges sorted by `(target, source)`; the slice owned by
//!   subsystem `s` is the concatenation of the profiles it receives.
//! * **outgoing**: edges sorted by `(source, target)`; the slice owned by
//!   subsystem `s` is the concatenation of the profiles it emits.
//!
//! The [`RoutingMatrix`] is the permutation taking the outgoing stacking to the
//! incoming one.

use std::collections::BTreeSet;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A directed coupling `source -> target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub source: usize,
    pub target: usize,
    /// Components per time step.
    #[serde(rename = "dim")]
    pub signal_dim: usize,
}

impl EdgeSpec {
    pub fn new(source: usize, target: usize, signal_dim: usize) -> Self {
        Self {
            source,
            target,
            signal_dim,
        }
    }
}

/// Stacking order of a [`CouplingProfile`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    Incoming,
    Outgoing,
}

#[derive(Debug, Clone, PartialEq)]
struct Stacking {
    /// Edge indices (into the declaration list) in stacking order.
    order: Vec<usize>,
    /// Start offset of each declared edge in this stacking.
    offsets: Vec<usize>,
    /// Per-subsystem contiguous range.
    ranges: Vec<Range<usize>>,
}

impl Stacking {
    fn build(
        n_subsystems: usize,
        edges: &[EdgeSpec],
        horizon: usize,
        key: impl Fn(&EdgeSpec) -> (usize, usize),
    ) -> Self {
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&i| key(&edges[i]));

        let mut offsets = vec![0; edges.len()];
        let mut ranges = vec![0..0; n_subsystems];
        let mut cursor = 0;
        for owner in 0..n_subsystems {
            let start = cursor;
            for &i in order.iter().filter(|&&i| key(&edges[i]).0 == owner) {
                offsets[i] = cursor;
                cursor += horizon * edges[i].signal_dim;
            }
            ranges[owner] = start..cursor;
        }
        Self {
            order,
            offsets,
            ranges,
        }
    }
}

/// Directed coupling graph over `n_subsystems` subsystems with a fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    n_subsystems: usize,
    edges: Vec<EdgeSpec>,
    controlled: Vec<bool>,
    horizon: usize,
    incoming: Stacking,
    outgoing: Stacking,
}

impl NetworkTopology {
    /// Validates and builds a topology. `controlled` lists the indices of
    /// subsystems with at least one control input; all others are uncontrolled.
    pub fn new(
        n_subsystems: usize,
        edges: Vec<EdgeSpec>,
        controlled: &[usize],
        horizon: usize,
    ) -> Result<Self> {
        if n_subsystems == 0 {
            return Err(Error::Topology("network has no subsystems".into()));
        }
        if horizon == 0 {
            return Err(Error::Topology("horizon must be at least 1".into()));
        }
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.source >= n_subsystems || e.target >= n_subsystems {
                return Err(Error::Topology(format!(
                    "edge {} -> {} references a subsystem outside 0..{}",
                    e.source, e.target, n_subsystems
                )));
            }
            if e.source == e.target {
                return Err(Error::Topology(format!("self-loop on subsystem {}", e.source)));
            }
            if e.signal_dim == 0 {
                return Err(Error::Topology(format!(
                    "edge {} -> {} has zero signal dimension",
                    e.source, e.target
                )));
            }
            if !seen.insert((e.source, e.target)) {
                return Err(Error::Topology(format!(
                    "duplicate edge {} -> {}",
                    e.source, e.target
                )));
            }
        }
        let mut flags = vec![false; n_subsystems];
        for &c in controlled {
            if c >= n_subsystems {
                return Err(Error::Topology(format!(
                    "controlled index {c} outside 0..{n_subsystems}"
                )));
            }
            if flags[c] {
                return Err(Error::Topology(format!("controlled index {c} listed twice")));
            }
            flags[c] = true;
        }

        let incoming = Stacking::build(n_subsystems, &edges, horizon, |e| (e.target, e.source));
        let outgoing = Stacking::build(n_subsystems, &edges, horizon, |e| (e.source, e.target));
        Ok(Self {
            n_subsystems,
            edges,
            controlled: flags,
            horizon,
            incoming,
            outgoing,
        })
    }

    pub fn n_subsystems(&self) -> usize {
        self.n_subsystems
    }

    /// Edges in declaration order.
    pub fn edges(&self) -> &[EdgeSpec] {
        &self.edges
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_controlled(&self, s: usize) -> bool {
        self.controlled[s]
    }

    pub fn controlled(&self) -> Vec<usize> {
        (0..self.n_subsystems).filter(|&s| self.controlled[s]).collect()
    }

    pub fn uncontrolled(&self) -> Vec<usize> {
        (0..self.n_subsystems).filter(|&s| !self.controlled[s]).collect()
    }

    /// Total stacked profile dimension `D`.
    pub fn dim(&self) -> usize {
        self.horizon * self.edges.iter().map(|e| e.signal_dim).sum::<usize>()
    }

    fn stacking(&self, layout: Layout) -> &Stacking {
        match layout {
            Layout::Incoming => &self.incoming,
            Layout::Outgoing => &self.outgoing,
        }
    }

    /// Edges in canonical order for the given layout.
    pub fn ordered_edges(&self, layout: Layout) -> Vec<EdgeSpec> {
        self.stacking(layout).order.iter().map(|&i| self.edges[i]).collect()
    }

    /// Range occupied by declared edge `edge` in the given stacking.
    pub fn edge_range(&self, edge: usize, layout: Layout) -> Range<usize> {
        let start = self.stacking(layout).offsets[edge];
        start..start + self.horizon * self.edges[edge].signal_dim
    }

    /// Range of subsystem `s`'s slice (incoming or outgoing).
    pub fn slice_range(&self, s: usize, layout: Layout) -> Range<usize> {
        self.stacking(layout).ranges[s].clone()
    }

    /// Edges entering `s`, sorted by source.
    pub fn incoming_edges(&self, s: usize) -> Vec<EdgeSpec> {
        self.ordered_edges(Layout::Incoming)
            .into_iter()
            .filter(|e| e.target == s)
            .collect()
    }

    /// Edges leaving `s`, sorted by target.
    pub fn outgoing_edges(&self, s: usize) -> Vec<EdgeSpec> {
        self.ordered_edges(Layout::Outgoing)
            .into_iter()
            .filter(|e| e.source == s)
            .collect()
    }

    /// Per-step incoming coupling dimension of `s`.
    pub fn incoming_step_dim(&self, s: usize) -> usize {
        self.incoming_edges(s).iter().map(|e| e.signal_dim).sum()
    }

    /// Per-step outgoing coupling dimension of `s`.
    pub fn outgoing_step_dim(&self, s: usize) -> usize {
        self.outgoing_edges(s).iter().map(|e| e.signal_dim).sum()
    }

    pub fn index_of(&self, source: usize, target: usize) -> Option<usize> {
        self.edges
            .iter()
            .position(|e| e.source == source && e.target == target)
    }
}

/// Stacked coupling profile tagged with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingProfile {
    data: DVector<f64>,
    layout: Layout,
}

impl CouplingProfile {
    pub fn new(data: DVector<f64>, layout: Layout, topology: &NetworkTopology) -> Result<Self> {
        check_dim("coupling profile", topology.dim(), data.len())?;
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("coupling profile".into()));
        }
        Ok(Self { data, layout })
    }

    pub fn zeros(layout: Layout, topology: &NetworkTopology) -> Self {
        Self {
            data: DVector::zeros(topology.dim()),
            layout,
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn data(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_data(self) -> DVector<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn expect(&self, layout: Layout) -> Result<()> {
        if self.layout == layout {
            Ok(())
        } else {
            Err(Error::Layout {
                expected: layout,
                actual: self.layout,
            })
        }
    }
}

/// Permutation mapping the outgoing stacking onto the incoming stacking.
///
/// Kept both as a dense 0/1 matrix (needed inside the condensed update maps)
/// and as an index map for O(D) application.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingMatrix {
    matrix: DMatrix<f64>,
    /// `incoming[i] = outgoing[source_of[i]]`
    source_of: Vec<usize>,
}

/// Builds the permutation `v_in = G_in * v_out` for the canonical stackings.
pub fn build_routing_matrix(topology: &NetworkTopology) -> RoutingMatrix {
    let d = topology.dim();
    let mut source_of = vec![0; d];
    for edge in 0..topology.edges().len() {
        let inc = topology.edge_range(edge, Layout::Incoming);
        let out = topology.edge_range(edge, Layout::Outgoing);
        for (i, o) in inc.zip(out) {
            source_of[i] = o;
        }
    }
    let mut matrix = DMatrix::zeros(d, d);
    for (i, &o) in source_of.iter().enumerate() {
        matrix[(i, o)] = 1.0;
    }
    RoutingMatrix { matrix, source_of }
}

impl RoutingMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn index_map(&self) -> &[usize] {
        &self.source_of
    }

    pub fn dim(&self) -> usize {
        self.source_of.len()
    }

    /// Applies the permutation to a raw outgoing-ordered vector.
    pub fn apply(&self, outgoing: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.source_of.len(),
            self.source_of.iter().map(|&o| outgoing[o]),
        )
    }

    /// Row-permutes `m` as the product `G_in * m`.
    pub fn apply_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.source_of.len(), m.ncols(), |i, j| {
            m[(self.source_of[i], j)]
        })
    }

    pub fn route(&self, outgoing: &CouplingProfile) -> Result<CouplingProfile> {
        outgoing.expect(Layout::Outgoing)?;
        check_dim("routing", self.dim(), outgoing.len())?;
        Ok(CouplingProfile {
            data: self.apply(&outgoing.data),
            layout: Layout::Incoming,
        })
    }
}

/// Splits a profile into per-subsystem slices of its layout.
pub fn scatter(profile: &CouplingProfile, topology: &NetworkTopology) -> Result<Vec<DVector<f64>>> {
    check_dim("scatter", topology.dim(), profile.len())?;
    Ok((0..topology.n_subsystems())
        .map(|s| {
            let r = topology.slice_range(s, profile.layout);
            profile.data.rows(r.start, r.len()).into_owned()
        })
        .collect())
}

/// Concatenates per-subsystem slices in canonical order for `layout`.
pub fn gather(
    slices: &[DVector<f64>],
    layout: Layout,
    topology: &NetworkTopology,
) -> Result<CouplingProfile> {
    check_dim("gather: subsystem count", topology.n_subsystems(), slices.len())?;
    let mut data = DVector::zeros(topology.dim());
    for (s, slice) in slices.iter().enumerate() {
        let r = topology.slice_range(s, layout);
        check_dim(format!("gather: slice of subsystem {s}"), r.len(), slice.len())?;
        data.rows_mut(r.start, r.len()).copy_from(slice);
    }
    Ok(CouplingProfile { data, layout })
}

/// Per-subsystem incoming profiles `v_s^in`.
pub fn scatter_incoming(
    profile: &CouplingProfile,
    topology: &NetworkTopology,
) -> Result<Vec<DVector<f64>>> {
    profile.expect(Layout::Incoming)?;
    scatter(profile, topology)
}

/// Stacks per-subsystem outgoing profiles `v_s^out` into `v^out`.
pub fn gather_outgoing(
    slices: &[DVector<f64>],
    topology: &NetworkTopology,
) -> Result<CouplingProfile> {
    gather(slices, Layout::Outgoing, topology)
}
