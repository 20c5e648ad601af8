//! Two-layer coordination.
//!
//! The inner layer makes coupling profiles coherent for a fixed decision by
//! fixed-point iteration on the incoming stacking. The outer layer chooses the
//! decision: set-points for the local controllers (nested pattern search), or
//! control profiles directly (one joint fixed point over inputs and profiles).

use std::cell::Cell;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::engine::{run_fixed_point, FixedPointOptions, SolveReport, UpdateStrategy};
use crate::error::{check_dim, Error, Result};
use crate::network::{build_routing_matrix, Layout, NetworkTopology, RoutingMatrix};
use crate::subsystem::{build_condensed, CondensedModel, Decision, LocalSubsystem, Response};

/// What the coordinator decides for controlled subsystems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionMode {
    /// A set-point per controlled subsystem, handed to its local control law.
    SetPoint,
    /// The full input profile `u(0..N-1)` per controlled subsystem.
    ControlProfile,
}

/// Inner fixed-point configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FpSettings {
    pub strategy: UpdateStrategy,
    pub options: FixedPointOptions,
}

impl Default for FpSettings {
    fn default() -> Self {
        Self {
            strategy: UpdateStrategy::anderson(5),
            options: FixedPointOptions::default(),
        }
    }
}

/// Central cost with its per-subsystem breakdown; `total` is the sum of `local`
/// in subsystem order.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralCost {
    pub total: f64,
    pub local: Vec<f64>,
}

impl CentralCost {
    fn from_local(local: Vec<f64>) -> Self {
        Self {
            total: local.iter().sum(),
            local,
        }
    }

    fn infeasible(n: usize) -> Self {
        Self {
            total: f64::INFINITY,
            local: vec![f64::INFINITY; n],
        }
    }
}

/// Result of one scatter / respond / gather / route round.
#[derive(Debug, Clone)]
pub struct RoundOutput {
    /// Outgoing stacking.
    pub v_out: DVector<f64>,
    /// Routed incoming stacking, i.e. the next presumption.
    pub v_in: DVector<f64>,
    pub cost: CentralCost,
}

/// Network, subsystems and their current states.
#[derive(Debug, Clone)]
pub struct CoordinatorProblem {
    topology: NetworkTopology,
    routing: RoutingMatrix,
    subsystems: Vec<LocalSubsystem>,
    states: Vec<DVector<f64>>,
    mode: DecisionMode,
    decision_ranges: Vec<Option<Range<usize>>>,
    parallel: bool,
}

impl CoordinatorProblem {
    pub fn new(
        topology: NetworkTopology,
        subsystems: Vec<LocalSubsystem>,
        states: Vec<DVector<f64>>,
        mode: DecisionMode,
    ) -> Result<Self> {
        let n = topology.n_subsystems();
        check_dim("coordinator: subsystem count", n, subsystems.len())?;
        check_dim("coordinator: state count", n, states.len())?;
        let mut decision_ranges = Vec::with_capacity(n);
        let mut offset = 0;
        for (s, (sub, x)) in subsystems.iter().zip(&states).enumerate() {
            check_dim(format!("subsystem {s}: horizon"), topology.horizon(), sub.horizon())?;
            check_dim(format!("subsystem {s}: state"), sub.state_dim(), x.len())?;
            let controlled = sub.input_dim() > 0;
            if controlled != topology.is_controlled(s) {
                return Err(Error::Model(format!(
                    "subsystem {s} has {} inputs but the topology marks it {}",
                    sub.input_dim(),
                    if topology.is_controlled(s) { "controlled" } else { "uncontrolled" }
                )));
            }
            if !controlled {
                decision_ranges.push(None);
                continue;
            }
            let len = match mode {
                DecisionMode::SetPoint => {
                    if sub.setpoint_dim() == 0 {
                        return Err(Error::Model(format!(
                            "subsystem {s} has no set-point interface (missing control law)"
                        )));
                    }
                    sub.setpoint_dim()
                }
                DecisionMode::ControlProfile => topology.horizon() * sub.input_dim(),
            };
            decision_ranges.push(Some(offset..offset + len));
            offset += len;
        }
        let routing = build_routing_matrix(&topology);
        Ok(Self {
            topology,
            routing,
            subsystems,
            states,
            mode,
            decision_ranges,
            parallel: false,
        })
    }

    /// Evaluates subsystem responses on the rayon pool. Results are identical
    /// to sequential evaluation.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn routing(&self) -> &RoutingMatrix {
        &self.routing
    }

    pub fn subsystems(&self) -> &[LocalSubsystem] {
        &self.subsystems
    }

    pub fn subsystems_mut(&mut self) -> &mut [LocalSubsystem] {
        &mut self.subsystems
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn set_states(&mut self, states: Vec<DVector<f64>>) -> Result<()> {
        check_dim("coordinator: state count", self.subsystems.len(), states.len())?;
        for (s, (sub, x)) in self.subsystems.iter().zip(&states).enumerate() {
            check_dim(format!("subsystem {s}: state"), sub.state_dim(), x.len())?;
        }
        self.states = states;
        Ok(())
    }

    pub fn mode(&self) -> DecisionMode {
        self.mode
    }

    /// Length of the stacked decision vector.
    pub fn decision_dim(&self) -> usize {
        self.decision_ranges
            .iter()
            .flatten()
            .map(|r| r.end)
            .max()
            .unwrap_or(0)
    }

    /// Range of subsystem `s` in the decision vector, if it is controlled.
    pub fn decision_range(&self, s: usize) -> Option<Range<usize>> {
        self.decision_ranges.get(s).cloned().flatten()
    }

    /// Length of the coupling stacking.
    pub fn profile_dim(&self) -> usize {
        self.topology.dim()
    }

    /// Condensed linear model of one round (linear subsystems only).
    pub fn condensed(&self) -> Result<CondensedModel> {
        build_condensed(&self.topology, &self.subsystems)
    }

    fn respond_one(&self, s: usize, decision: &DVector<f64>, v_in: &DVector<f64>) -> Result<Response> {
        let slice = v_in.rows_range(self.topology.slice_range(s, Layout::Incoming)).into_owned();
        let local = self.decision_range(s).map(|r| decision.rows_range(r).into_owned());
        let d = match (&local, self.mode) {
            (None, _) => Decision::Uncontrolled,
            (Some(r), DecisionMode::SetPoint) => Decision::SetPoint(r),
            (Some(u), DecisionMode::ControlProfile) => Decision::Control(u),
        };
        let resp = self.subsystems[s]
            .respond(&self.states[s], d, &slice)
            .map_err(|e| Error::Subsystem {
                index: s,
                source: Box::new(e),
            })?;
        check_dim(
            format!("subsystem {s}: outgoing profile"),
            self.topology.slice_range(s, Layout::Outgoing).len(),
            resp.v_out.len(),
        )?;
        Ok(resp)
    }

    /// Local cost of subsystem `s` for its own decision slice (`None` for
    /// uncontrolled subsystems) and incoming slice.
    fn local_cost(&self, s: usize, local: Option<&DVector<f64>>, v_slice: &DVector<f64>) -> Result<f64> {
        let d = match (local, self.mode) {
            (None, _) => Decision::Uncontrolled,
            (Some(r), DecisionMode::SetPoint) => Decision::SetPoint(r),
            (Some(u), DecisionMode::ControlProfile) => Decision::Control(u),
        };
        self.subsystems[s]
            .respond(&self.states[s], d, v_slice)
            .map(|r| r.cost)
            .map_err(|e| Error::Subsystem {
                index: s,
                source: Box::new(e),
            })
    }
}

/// One coordinator round: scatter the presumed incoming profile, collect every
/// subsystem's response, gather the outgoing stacking and route it.
pub fn coordinator_round(
    problem: &CoordinatorProblem,
    decision: &DVector<f64>,
    v_in: &DVector<f64>,
) -> Result<RoundOutput> {
    check_dim("coordinator: decision", problem.decision_dim(), decision.len())?;
    check_dim("coordinator: incoming profile", problem.profile_dim(), v_in.len())?;
    let n = problem.subsystems.len();
    let responses: Vec<Response> = if problem.parallel {
        (0..n)
            .into_par_iter()
            .map(|s| problem.respond_one(s, decision, v_in))
            .collect::<Result<_>>()?
    } else {
        (0..n)
            .map(|s| problem.respond_one(s, decision, v_in))
            .collect::<Result<_>>()?
    };
    let mut v_out = DVector::zeros(problem.profile_dim());
    let mut local = Vec::with_capacity(n);
    for (s, r) in responses.into_iter().enumerate() {
        v_out
            .rows_range_mut(problem.topology.slice_range(s, Layout::Outgoing))
            .copy_from(&r.v_out);
        local.push(r.cost);
    }
    let v_in = problem.routing.apply(&v_out);
    Ok(RoundOutput {
        v_out,
        v_in,
        cost: CentralCost::from_local(local),
    })
}

/// Coherent profile for a fixed decision.
#[derive(Debug, Clone)]
pub struct Coherence {
    pub report: SolveReport,
    /// Cost at the returned profile.
    pub cost: CentralCost,
}

impl Coherence {
    pub fn converged(&self) -> bool {
        self.report.converged()
    }
}

/// Iterates rounds with the configured strategy from `v0` (zero if `None`)
/// until the incoming profile is coherent.
pub fn solve_coherence(
    problem: &CoordinatorProblem,
    decision: &DVector<f64>,
    v0: Option<&DVector<f64>>,
    settings: &FpSettings,
) -> Result<Coherence> {
    let zero = DVector::zeros(problem.profile_dim());
    let v0 = v0.unwrap_or(&zero);
    let mut last_cost = None;
    let report = run_fixed_point(
        |v: &DVector<f64>| {
            let out = coordinator_round(problem, decision, v)?;
            last_cost = Some(out.cost);
            Ok(out.v_in)
        },
        v0,
        &settings.strategy,
        &settings.options,
    )?;
    let cost = last_cost.expect("at least one round is evaluated");
    Ok(Coherence { report, cost })
}

/// Outer-layer parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterOptions {
    /// Budget: pattern-search polls (set-point mode) or joint iterations
    /// (control-profile mode).
    pub max_evaluations: usize,
    /// Initial pattern step; defaults to 10% of `max(1, |r0|_inf)`.
    pub initial_step: Option<f64>,
    /// Pattern search stops once the step falls below this.
    pub min_step: f64,
    /// Gradient step of the joint iteration.
    pub learning_rate: f64,
    /// Tolerance on the joint residual `|H(z) - z|_inf`.
    pub tolerance: f64,
    /// Update strategy of the joint iteration.
    pub joint_strategy: UpdateStrategy,
}

impl Default for OuterOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 2000,
            initial_step: None,
            min_step: 1e-4,
            learning_rate: 0.1,
            tolerance: 1e-6,
            joint_strategy: UpdateStrategy::anderson(10),
        }
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub iteration: usize,
    /// Best cost so far (set-point mode) or cost at the iterate (joint mode).
    pub cost: f64,
    /// Pattern step (set-point mode) or joint residual (joint mode).
    pub step: f64,
    /// Coupling residual at the recorded point.
    pub coupling_eps: f64,
    /// Coordinator rounds spent so far.
    pub rounds: usize,
}

#[derive(Debug, Clone)]
pub struct DecisionResult {
    pub decision: DVector<f64>,
    /// Incoming profile at the decision.
    pub profile: DVector<f64>,
    pub cost: CentralCost,
    /// False if the budget ran out first; the best point found is returned.
    pub complete: bool,
    pub history: Vec<OuterRecord>,
    pub rounds: usize,
}

/// Chooses the decision minimising the central cost at coherent profiles.
pub fn optimize_decision(
    problem: &CoordinatorProblem,
    decision0: &DVector<f64>,
    v0: Option<&DVector<f64>>,
    inner: &FpSettings,
    outer: &OuterOptions,
) -> Result<DecisionResult> {
    check_dim("coordinator: decision", problem.decision_dim(), decision0.len())?;
    if outer.max_evaluations == 0 {
        return Err(Error::Strategy("outer budget must be at least 1".into()));
    }
    match problem.mode {
        DecisionMode::SetPoint => pattern_search(problem, decision0, v0, inner, outer),
        DecisionMode::ControlProfile => joint_fixed_point(problem, decision0, v0, outer),
    }
}

fn pattern_search(
    problem: &CoordinatorProblem,
    r0: &DVector<f64>,
    v0: Option<&DVector<f64>>,
    inner: &FpSettings,
    outer: &OuterOptions,
) -> Result<DecisionResult> {
    let rounds = Cell::new(0);
    let evaluate = |r: &DVector<f64>, warm: Option<&DVector<f64>>| -> Result<(Coherence, f64)> {
        let c = solve_coherence(problem, r, warm, inner)?;
        rounds.set(rounds.get() + c.report.evaluations);
        let j = if c.converged() { c.cost.total } else { f64::INFINITY };
        Ok((c, j))
    };

    let mut best_r = r0.clone();
    let (mut best, mut best_j) = evaluate(&best_r, v0)?;
    let mut step = outer
        .initial_step
        .unwrap_or(0.1 * r0.amax().max(1.0));
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Strategy(format!("pattern step must be positive, got {step}")));
    }
    let mut polls = 0;
    let mut history = vec![OuterRecord {
        iteration: 0,
        cost: best_j,
        step,
        coupling_eps: best.report.final_eps(),
        rounds: 0,
    }];
    let mut exhausted = false;
    let dim = r0.len();
    while step >= outer.min_step && dim > 0 {
        let mut improved = false;
        'coords: for i in 0..dim {
            for sign in [1.0, -1.0] {
                if polls >= outer.max_evaluations {
                    exhausted = true;
                    break 'coords;
                }
                polls += 1;
                let mut trial = best_r.clone();
                trial[i] += sign * step;
                let (c, j) = evaluate(&trial, Some(&best.report.profile))?;
                if j < best_j {
                    best_r = trial;
                    best = c;
                    best_j = j;
                    improved = true;
                    break;
                }
            }
        }
        if !improved && !exhausted {
            step *= 0.5;
        }
        history.push(OuterRecord {
            iteration: history.len(),
            cost: best_j,
            step,
            coupling_eps: best.report.final_eps(),
            rounds: rounds.get(),
        });
        if exhausted {
            break;
        }
    }
    let complete = !exhausted && best.converged();
    let cost = if best.converged() {
        best.cost.clone()
    } else {
        CentralCost::infeasible(problem.subsystems.len())
    };
    Ok(DecisionResult {
        decision: best_r,
        profile: best.report.profile,
        cost,
        complete,
        history,
        rounds: rounds.get(),
    })
}

/// Relative step of the central-difference gradient.
const GRADIENT_STEP: f64 = 1e-6;
/// Relative step of the curvature estimate.
const CURVATURE_STEP: f64 = 1e-3;

/// Central-difference gradient of subsystem `s`'s cost in its own inputs.
fn local_gradient(
    problem: &CoordinatorProblem,
    s: usize,
    local: &DVector<f64>,
    v_slice: &DVector<f64>,
    rel_step: f64,
) -> Result<DVector<f64>> {
    let mut local = local.clone();
    let mut grad = DVector::zeros(local.len());
    for k in 0..local.len() {
        let orig = local[k];
        let h = rel_step * orig.abs().max(1.0);
        local[k] = orig + h;
        let jp = problem.local_cost(s, Some(&local), v_slice)?;
        local[k] = orig - h;
        let jm = problem.local_cost(s, Some(&local), v_slice)?;
        local[k] = orig;
        grad[k] = (jp - jm) / (2.0 * h);
    }
    Ok(grad)
}

/// Partial gradient of the central cost with respect to the control profiles,
/// holding the incoming profile fixed. Each input only enters its own
/// subsystem's cost, so only that subsystem is queried.
fn partial_gradient(problem: &CoordinatorProblem, u: &DVector<f64>, v_in: &DVector<f64>) -> Result<DVector<f64>> {
    let mut grad = DVector::zeros(u.len());
    for s in 0..problem.subsystems.len() {
        let Some(range) = problem.decision_range(s) else { continue };
        let v_slice = v_in
            .rows_range(problem.topology.slice_range(s, Layout::Incoming))
            .into_owned();
        let local = u.rows_range(range.clone()).into_owned();
        grad.rows_range_mut(range)
            .copy_from(&local_gradient(problem, s, &local, &v_slice, GRADIENT_STEP)?);
    }
    Ok(grad)
}

/// Hessian of the central cost in `z = (u, v)`, estimated by differencing
/// central-difference gradients of each local cost in its own variables
/// (its control slice and its incoming slice).
fn cost_hessian(problem: &CoordinatorProblem, u: &DVector<f64>, v_in: &DVector<f64>) -> Result<DMatrix<f64>> {
    let nu = u.len();
    let mut hess: DMatrix<f64> = DMatrix::zeros(nu + v_in.len(), nu + v_in.len());
    for s in 0..problem.subsystems.len() {
        let u_range = problem.decision_range(s);
        let v_range = problem.topology.slice_range(s, Layout::Incoming);
        let index: Vec<usize> = u_range
            .clone()
            .unwrap_or(0..0)
            .chain(v_range.clone().map(|i| nu + i))
            .collect();
        let n_u = u_range.as_ref().map_or(0, Range::len);
        let cost = |w: &DVector<f64>| {
            let local = u_range.as_ref().map(|_| w.rows(0, n_u).into_owned());
            problem.local_cost(s, local.as_ref(), &w.rows(n_u, w.len() - n_u).into_owned())
        };
        let gradient = |w: &DVector<f64>| -> Result<DVector<f64>> {
            let mut w = w.clone();
            let mut g = DVector::zeros(w.len());
            for k in 0..w.len() {
                let orig = w[k];
                let h = GRADIENT_STEP * orig.abs().max(1.0);
                w[k] = orig + h;
                let jp = cost(&w)?;
                w[k] = orig - h;
                let jm = cost(&w)?;
                w[k] = orig;
                g[k] = (jp - jm) / (2.0 * h);
            }
            Ok(g)
        };
        let mut w = DVector::from_iterator(
            index.len(),
            index.iter().map(|&i| if i < nu { u[i] } else { v_in[i - nu] }),
        );
        for k in 0..w.len() {
            let orig = w[k];
            let h = CURVATURE_STEP * orig.abs().max(1.0);
            w[k] = orig + h;
            let gp = gradient(&w)?;
            w[k] = orig - h;
            let gm = gradient(&w)?;
            w[k] = orig;
            let col = (gp - gm) / (2.0 * h);
            for (r, &i) in index.iter().enumerate() {
                hess[(i, index[k])] += col[r];
            }
        }
    }
    if hess.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("cost curvature".into()));
    }
    Ok((&hess + hess.transpose()) * 0.5)
}

/// Inverse of the curvature of `J_c` in the control profiles along coherent
/// profiles, `C = [I; S]^T H [I; S]` with `S = (I - G_v)^{-1} G_u` the
/// sensitivity of the coherent profile, returned alongside. Eigenvalues are
/// floored so the preconditioner stays positive definite.
fn inverse_reduced_curvature(
    hess: &DMatrix<f64>,
    g_u: &DMatrix<f64>,
    g_v: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let nu = g_u.ncols();
    let nv = g_v.nrows();
    let sens = (DMatrix::identity(nv, nv) - g_v)
        .lu()
        .solve(g_u)
        .ok_or_else(|| Error::Model("coherence constraint is singular at the initial point".into()))?;
    let mut lift = DMatrix::zeros(nu + nv, nu);
    lift.view_mut((0, 0), (nu, nu)).fill_with_identity();
    lift.view_mut((nu, 0), (nv, nu)).copy_from(&sens);
    let reduced = lift.transpose() * hess * &lift;
    let eig = SymmetricEigen::new((&reduced + reduced.transpose()) * 0.5);
    let floor = 1e-8 * eig.eigenvalues.amax().max(1e-4);
    let scaled = DMatrix::from_fn(nu, nu, |i, j| eig.eigenvectors[(i, j)] / eig.eigenvalues[j].max(floor));
    Ok((scaled * eig.eigenvectors.transpose(), sens))
}

/// Partial gradient of the central cost with respect to the incoming profile,
/// holding the control profiles fixed. Each incoming coordinate only enters
/// the cost of the subsystem receiving it.
fn profile_gradient(problem: &CoordinatorProblem, u: &DVector<f64>, v_in: &DVector<f64>) -> Result<DVector<f64>> {
    let mut grad = DVector::zeros(v_in.len());
    for s in 0..problem.subsystems.len() {
        let range = problem.topology.slice_range(s, Layout::Incoming);
        let local = problem.decision_range(s).map(|r| u.rows_range(r).into_owned());
        let mut slice = v_in.rows_range(range.clone()).into_owned();
        for k in 0..slice.len() {
            let orig = slice[k];
            let h = GRADIENT_STEP * orig.abs().max(1.0);
            slice[k] = orig + h;
            let jp = problem.local_cost(s, local.as_ref(), &slice)?;
            slice[k] = orig - h;
            let jm = problem.local_cost(s, local.as_ref(), &slice)?;
            slice[k] = orig;
            grad[range.start + k] = (jp - jm) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Sensitivities `(dG/du, dG/dv)` of one coordinator round, by central
/// differences of whole rounds.
fn round_jacobians(
    problem: &CoordinatorProblem,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let column = |z: &DVector<f64>, k: usize, eval: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>| {
        let mut z = z.clone();
        let orig = z[k];
        let h = CURVATURE_STEP * orig.abs().max(1.0);
        z[k] = orig + h;
        let gp = eval(&z)?;
        z[k] = orig - h;
        let gm = eval(&z)?;
        Ok::<_, Error>((gp - gm) / (2.0 * h))
    };
    let nv = v.len();
    let mut g_u = DMatrix::zeros(nv, u.len());
    let by_u = |uu: &DVector<f64>| coordinator_round(problem, uu, v).map(|r| r.v_in);
    for k in 0..u.len() {
        g_u.set_column(k, &column(u, k, &by_u)?);
    }
    let mut g_v = DMatrix::zeros(nv, nv);
    let by_v = |vv: &DVector<f64>| coordinator_round(problem, u, vv).map(|r| r.v_in);
    for k in 0..nv {
        g_v.set_column(k, &column(v, k, &by_v)?);
    }
    Ok((g_u, g_v))
}

/// Joint iteration on `z = (u, v)`:
///
/// ```text
/// u <- u - lr C^{-1} (grad_u J(u, v) + S^T grad_v J(u, v))
/// v <- G(u, v)
/// ```
///
/// `S = dv/du` is the sensitivity of the coherent profile to the controls, so
/// the control update follows the gradient of `J_c` along coherent profiles
/// and the fixed points are the stationary points of the central problem.
/// `S` and the reduced curvature `C` are estimated once, at the initial point,
/// by finite differences through subsystem responses.
fn joint_fixed_point(
    problem: &CoordinatorProblem,
    u0: &DVector<f64>,
    v0: Option<&DVector<f64>>,
    outer: &OuterOptions,
) -> Result<DecisionResult> {
    let nu = u0.len();
    let nv = problem.profile_dim();
    let v0 = v0.cloned().unwrap_or_else(|| DVector::zeros(nv));
    check_dim("coordinator: incoming profile", nv, v0.len())?;
    if !(outer.learning_rate > 0.0 && outer.learning_rate.is_finite()) {
        return Err(Error::Strategy(format!(
            "learning rate must be positive, got {}",
            outer.learning_rate
        )));
    }
    let (g_u, g_v) = round_jacobians(problem, u0, &v0)?;
    let (precond, sens) = inverse_reduced_curvature(&cost_hessian(problem, u0, &v0)?, &g_u, &g_v)?;
    let sens_t = sens.transpose();
    let lr = outer.learning_rate;
    let mut rounds = 2 * (nu + nv);

    let mut z0 = DVector::zeros(nu + nv);
    z0.rows_mut(0, nu).copy_from(u0);
    z0.rows_mut(nu, nv).copy_from(&v0);

    let mut history = Vec::new();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let report = run_fixed_point(
        |z: &DVector<f64>| {
            let u = z.rows(0, nu).into_owned();
            let v = z.rows(nu, nv).into_owned();
            let round = coordinator_round(problem, &u, &v)?;
            rounds += 1;
            let grad = partial_gradient(problem, &u, &v)? + &sens_t * profile_gradient(problem, &u, &v)?;
            let mut hz = DVector::zeros(z.len());
            hz.rows_mut(0, nu).copy_from(&(&u - (&precond * grad) * lr));
            hz.rows_mut(nu, nv).copy_from(&round.v_in);
            let residual = (&hz - z).amax();
            history.push(OuterRecord {
                iteration: history.len(),
                cost: round.cost.total,
                step: residual,
                coupling_eps: (&round.v_in - &v).amax(),
                rounds,
            });
            if residual.is_finite() && best.as_ref().map_or(true, |(r, _)| residual < *r) {
                best = Some((residual, z.clone()));
            }
            Ok(hz)
        },
        &z0,
        &outer.joint_strategy,
        &FixedPointOptions::new(outer.tolerance, outer.max_evaluations),
    )?;
    let complete = report.converged();
    let z = if complete {
        report.profile
    } else {
        best.map(|(_, z)| z).unwrap_or(report.profile)
    };
    let decision = z.rows(0, nu).into_owned();
    let profile = z.rows(nu, nv).into_owned();
    let cost = coordinator_round(problem, &decision, &profile)?.cost;
    Ok(DecisionResult {
        decision,
        profile,
        cost,
        complete,
        history,
        rounds,
    })
}
