//! The four experiment families. Each returns typed rows, renders them as CSV
//! and summarizes them as key/value pairs. CSV output depends only on the
//! scenario, never on timing, so a fixed scenario and seed give identical bytes.

use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use hiercoord::config::{BuiltNetwork, NetworkConfig};
use hiercoord::coordinator::{
    optimize_decision, solve_coherence, CoordinatorProblem, DecisionMode, FpSettings, OuterOptions,
};
use hiercoord::engine::{
    certify_matrix_filter, certify_scalar_mix, design_pi_filter, spectral_radius, FixedPointOptions, SolveReport,
    Termination, UpdateStrategy,
};
use hiercoord::plant::NetworkPlant;
use hiercoord::subsystem::{InputRate, LocalCost, Tracking};
use nalgebra::{DMatrix, DVector};

use crate::scenario::Scenario;

/// Default tolerance and budget of the coherence solves.
pub const DEFAULT_EPS_MAX: f64 = 1e-8;
pub const DEFAULT_SIGMA_MAX: usize = 500;
/// Default tolerance and budget of the closed-loop joint iteration.
pub const DEFAULT_JOINT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_JOINT_ITERATIONS: usize = 2000;

/// Key/value lines for the summary table.
pub type Summary = Vec<(String, String)>;

fn entry(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn csv_string(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?)
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn sci(x: f64) -> String {
    format!("{x:e}")
}

/// A network prepared for the coherence experiments.
struct Instance {
    problem: CoordinatorProblem,
    setpoint: DVector<f64>,
}

impl Instance {
    fn new(config: &NetworkConfig, mode: DecisionMode) -> Result<Self> {
        let built = config.build()?;
        let problem = CoordinatorProblem::new(
            built.topology.clone(),
            built.subsystems.clone(),
            built.states.clone(),
            mode,
        )?;
        let setpoint = nominal_setpoint(config, &built);
        Ok(Self { problem, setpoint })
    }

    fn coupling_matrix(&self) -> Result<DMatrix<f64>> {
        Ok(self.problem.condensed().context("this experiment needs a linear network")?.m_v)
    }

    fn solve(&self, strategy: UpdateStrategy, options: FixedPointOptions) -> Result<SolveReport> {
        let settings = FpSettings { strategy, options };
        Ok(solve_coherence(&self.problem, &self.setpoint, None, &settings)?.report)
    }
}

/// Configured targets of the controlled subsystems, stacked.
fn nominal_setpoint(config: &NetworkConfig, built: &BuiltNetwork) -> DVector<f64> {
    let parts: Vec<f64> = built
        .topology
        .controlled()
        .into_iter()
        .flat_map(|s| {
            let dim = built.subsystems[s].setpoint_dim();
            match config.subsystems[s].cost.as_ref().and_then(|c| c.target.clone()) {
                Some(t) => t,
                None => vec![0.0; dim],
            }
        })
        .collect();
    DVector::from_vec(parts)
}

/// Scales the output weight of subsystem `s` in its controller and cost.
pub fn detune(config: &mut NetworkConfig, s: usize, factor: f64) -> Result<()> {
    let n = config.subsystems.len();
    let sub = config
        .subsystems
        .get_mut(s)
        .ok_or_else(|| anyhow!("cannot detune subsystem {s}: the network has {n}"))?;
    let ctrl = sub
        .controller
        .as_mut()
        .ok_or_else(|| anyhow!("cannot detune subsystem {s}: it has no controller"))?;
    ctrl.q.data.iter_mut().for_each(|x| *x *= factor);
    if let Some(w) = sub.cost.as_mut().and_then(|c| c.tracking_weight.as_mut()) {
        w.data.iter_mut().for_each(|x| *x *= factor);
    }
    Ok(())
}

// ---------------------------------------------------------------- beta sweep

#[derive(Debug, Clone, PartialEq)]
pub struct BetaRow {
    pub beta: f64,
    /// `rho(I - beta (I - M_v))`
    pub spectral_radius: f64,
    pub converged: bool,
    pub iterations: usize,
    /// The certificate and the run agree.
    pub consistent: bool,
    pub termination: Termination,
}

#[derive(Debug, Clone)]
pub struct BetaSweep {
    pub coupling_radius: f64,
    pub rows: Vec<BetaRow>,
}

/// Certifies and runs scalar mixing for every configured `beta`.
pub fn run_beta_sweep(scenario: &Scenario) -> Result<BetaSweep> {
    let inst = Instance::new(&scenario.network_config()?, DecisionMode::SetPoint)?;
    let m_v = inst.coupling_matrix()?;
    let options = FixedPointOptions::new(
        scenario.eps_max(DEFAULT_EPS_MAX),
        scenario.sigma_max(DEFAULT_SIGMA_MAX),
    );
    let rows = scenario
        .beta_sweep
        .betas
        .iter()
        .map(|&beta| {
            let cert = certify_scalar_mix(&m_v, beta)?;
            let report = inst.solve(UpdateStrategy::ScalarMix { beta }, options)?;
            Ok(BetaRow {
                beta,
                spectral_radius: cert.rho,
                converged: report.converged(),
                iterations: report.iterations(),
                consistent: cert.converges == report.converged(),
                termination: report.termination,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BetaSweep {
        coupling_radius: spectral_radius(&m_v)?,
        rows,
    })
}

impl BetaSweep {
    pub fn csv(&self) -> Result<String> {
        csv_string(
            &header(&["beta", "spectral_radius", "converged", "iterations", "consistent", "termination"]),
            self.rows.iter().map(|r| {
                vec![
                    r.beta.to_string(),
                    r.spectral_radius.to_string(),
                    r.converged.to_string(),
                    r.iterations.to_string(),
                    r.consistent.to_string(),
                    r.termination.to_string(),
                ]
            }),
        )
    }

    pub fn summary(&self) -> Summary {
        let best = self
            .rows
            .iter()
            .filter(|r| r.converged)
            .min_by_key(|r| r.iterations);
        vec![
            entry("rho(M_v)", format!("{:.6}", self.coupling_radius)),
            entry("betas", self.rows.len()),
            entry("converged", self.rows.iter().filter(|r| r.converged).count()),
            entry("inconsistent", self.rows.iter().filter(|r| !r.consistent).count()),
            entry(
                "fastest beta",
                best.map_or("-".into(), |r| format!("{} ({} iterations)", r.beta, r.iterations)),
            ),
        ]
    }
}

// -------------------------------------------------------------- memory sweep

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRow {
    pub memory: usize,
    /// Iterations to reach the tolerance; `None` if it was not reached.
    pub iterations_to_tol: Option<usize>,
    pub final_eps: f64,
    pub termination: Termination,
}

#[derive(Debug, Clone)]
pub struct MemorySweep {
    pub rows: Vec<MemoryRow>,
}

/// One Anderson solve per configured memory, all from the same initial profile.
pub fn run_memory_sweep(scenario: &Scenario) -> Result<MemorySweep> {
    let inst = Instance::new(&scenario.network_config()?, DecisionMode::SetPoint)?;
    let options = FixedPointOptions::new(
        scenario.eps_max(DEFAULT_EPS_MAX),
        scenario.sigma_max(DEFAULT_SIGMA_MAX),
    );
    let regularization = scenario.memory_sweep.regularization;
    let rows = scenario
        .memory_sweep
        .memories
        .iter()
        .map(|&memory| {
            let report = inst.solve(UpdateStrategy::Anderson { memory, regularization }, options)?;
            Ok(MemoryRow {
                memory,
                iterations_to_tol: report.converged().then(|| report.iterations()),
                final_eps: report.final_eps(),
                termination: report.termination,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MemorySweep { rows })
}

impl MemorySweep {
    pub fn csv(&self) -> Result<String> {
        csv_string(
            &header(&["m", "iterations_to_tol", "final_eps", "termination"]),
            self.rows.iter().map(|r| {
                vec![
                    r.memory.to_string(),
                    r.iterations_to_tol.map(|i| i.to_string()).unwrap_or_default(),
                    sci(r.final_eps),
                    r.termination.to_string(),
                ]
            }),
        )
    }

    pub fn summary(&self) -> Summary {
        self.rows
            .iter()
            .map(|r| {
                let result = match r.iterations_to_tol {
                    Some(i) => format!("{i} iterations"),
                    None => format!("{} at eps {:.3e}", r.termination, r.final_eps),
                };
                entry(&format!("m = {}", r.memory), result)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------- race

#[derive(Debug, Clone)]
pub struct Race {
    /// `rho(M_v)` of the network the race runs on.
    pub coupling_radius: f64,
    /// Certified radius of the filtered iteration on the design network.
    pub design_radius: f64,
    /// Radius of the filtered iteration on the network the race runs on.
    pub filter_radius: f64,
    pub detuned: bool,
    pub filter: SolveReport,
    pub anderson: SolveReport,
    pub plain: SolveReport,
}

/// Designs the filter on the nominal network, optionally detunes one
/// subsystem, then runs the filter, Anderson and plain iteration from the
/// same initial profile.
pub fn run_filter_vs_aa(scenario: &Scenario) -> Result<Race> {
    let params = &scenario.race;
    let mut config = scenario.network_config()?;
    let nominal = Instance::new(&config, DecisionMode::SetPoint)?;
    let m_nominal = nominal.coupling_matrix()?;
    let d = m_nominal.nrows();
    let pi = design_pi_filter(
        &m_nominal,
        &(DMatrix::identity(d, d) * params.filter_q),
        &(DMatrix::identity(d, d) * params.filter_r),
    )?;
    let design_radius = certify_matrix_filter(&m_nominal, &pi)?.rho;

    let inst = if params.detuned {
        detune(&mut config, params.detune_subsystem, params.detune_factor)?;
        Instance::new(&config, DecisionMode::SetPoint)?
    } else {
        nominal
    };
    let m_v = inst.coupling_matrix()?;
    let options = FixedPointOptions::new(
        scenario.eps_max(DEFAULT_EPS_MAX),
        scenario.sigma_max(DEFAULT_SIGMA_MAX),
    );
    Ok(Race {
        coupling_radius: spectral_radius(&m_v)?,
        design_radius,
        filter_radius: certify_matrix_filter(&m_v, &pi)?.rho,
        detuned: params.detuned,
        filter: inst.solve(UpdateStrategy::MatrixFilter { pi }, options)?,
        anderson: inst.solve(UpdateStrategy::anderson(params.memory), options)?,
        plain: inst.solve(UpdateStrategy::Plain, options)?,
    })
}

impl Race {
    pub fn csv(&self) -> Result<String> {
        let traces = [&self.filter, &self.anderson, &self.plain];
        let len = traces.iter().map(|r| r.trace.len()).max().unwrap_or(0);
        csv_string(
            &header(&["iteration", "eps_filter", "eps_aa", "eps_plain"]),
            (0..len).map(|i| {
                let mut row = vec![i.to_string()];
                row.extend(traces.iter().map(|r| r.trace.get(i).map(|t| sci(t.eps)).unwrap_or_default()));
                row
            }),
        )
    }

    pub fn summary(&self) -> Summary {
        let outcome = |r: &SolveReport| format!("{} after {} iterations (eps {:.3e})", r.termination, r.iterations(), r.final_eps());
        vec![
            entry("detuned", self.detuned),
            entry("rho(M_v)", format!("{:.6}", self.coupling_radius)),
            entry("filter rho (design)", format!("{:.6}", self.design_radius)),
            entry("filter rho (run)", format!("{:.6}", self.filter_radius)),
            entry("filter", outcome(&self.filter)),
            entry("anderson", outcome(&self.anderson)),
            entry("plain", outcome(&self.plain)),
        ]
    }
}

// --------------------------------------------------------------- closed loop

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRow {
    pub time: usize,
    /// Measured outputs of every subsystem, stacked.
    pub outputs: Vec<f64>,
    /// Set-points of the tracked outputs.
    pub setpoints: Vec<f64>,
    /// Central cost of the decision taken at this period.
    pub cost: f64,
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub output_names: Vec<String>,
    pub setpoint_names: Vec<String>,
    /// For each set-point column, its position in `outputs`.
    pub tracked: Vec<usize>,
    pub rows: Vec<ClosedLoopRow>,
    pub seconds: f64,
}

/// Tracking objective of one controlled subsystem.
struct Loop {
    s: usize,
    weight: DMatrix<f64>,
    target: DVector<f64>,
    rate: DMatrix<f64>,
}

/// Receding-horizon simulation: at every period measure the plant, choose
/// the control profiles with the joint coordinator, apply the first sample.
pub fn run_closed_loop(scenario: &Scenario) -> Result<ClosedLoop> {
    let params = &scenario.closed_loop;
    let config = scenario.network_config()?;
    let built = config.build()?;
    let topology = built.topology.clone();
    let controlled = topology.controlled();
    if controlled.is_empty() {
        bail!("closed loop needs at least one controlled subsystem");
    }
    let states: Vec<DVector<f64>> = if params.use_initial_state {
        built.states.clone()
    } else {
        built.states.iter().map(|x| DVector::zeros(x.len())).collect()
    };
    let mut problem = CoordinatorProblem::new(
        topology.clone(),
        built.subsystems.clone(),
        states.clone(),
        DecisionMode::ControlProfile,
    )?;
    let mut plant = NetworkPlant::new(&topology, built.models.clone(), states)?;

    let mut offsets = Vec::new();
    let mut output_names = Vec::new();
    let mut total = 0;
    for (s, m) in built.models.iter().enumerate() {
        offsets.push(total);
        total += m.c_y.nrows();
        output_names.extend((1..=m.c_y.nrows()).map(|j| format!("y_{}_{j}", built.names[s])));
    }

    let mut loops = Vec::new();
    let mut setpoint_names = Vec::new();
    let mut tracked = Vec::new();
    for &s in &controlled {
        let cfg = &config.subsystems[s];
        let name = &built.names[s];
        let ctrl = cfg
            .controller
            .as_ref()
            .ok_or_else(|| anyhow!("controlled subsystem {name} has no controller"))?;
        let cost = cfg.cost.clone().unwrap_or_default();
        let weight = match &cost.tracking_weight {
            Some(w) => w.to_matrix(&format!("subsystem {name}: cost.tracking_weight"))?,
            None => ctrl.q.to_matrix(&format!("subsystem {name}: controller.q"))?,
        };
        let target = cost
            .target
            .map_or_else(|| DVector::zeros(weight.nrows()), DVector::from_vec);
        let nu = built.models[s].input_dim();
        let rate = match params.rate_weight {
            Some(w) => DMatrix::identity(nu, nu) * w,
            None => ctrl.r.to_matrix(&format!("subsystem {name}: controller.r"))?,
        };
        for j in 0..weight.nrows() {
            if weight[(j, j)] > 0.0 {
                setpoint_names.push(format!("r_{name}_{}", j + 1));
                tracked.push(offsets[s] + j);
            }
        }
        loops.push(Loop {
            s,
            weight,
            target: target * params.step_scale,
            rate,
        });
    }

    let outer = OuterOptions {
        max_evaluations: scenario.sigma_max(DEFAULT_JOINT_ITERATIONS),
        tolerance: scenario.eps_max(DEFAULT_JOINT_TOLERANCE),
        learning_rate: params.learning_rate,
        ..OuterOptions::default()
    };
    let inner = FpSettings::default();
    let mut decision = DVector::zeros(problem.decision_dim());
    let mut profile: Option<DVector<f64>> = None;
    let mut previous: Vec<DVector<f64>> = loops
        .iter()
        .map(|l| DVector::zeros(built.models[l.s].input_dim()))
        .collect();
    let start = Instant::now();
    let mut rows = Vec::with_capacity(params.steps);
    for k in 0..params.steps {
        let active = k >= params.step_at;
        problem.set_states(plant.states().to_vec())?;
        let mut setpoints = vec![0.0; tracked.len()];
        let mut col = 0;
        for (l, prev) in loops.iter().zip(&previous) {
            let target = if active {
                l.target.clone()
            } else {
                DVector::zeros(l.target.len())
            };
            for j in 0..l.weight.nrows() {
                if l.weight[(j, j)] > 0.0 {
                    setpoints[col] = target[j];
                    col += 1;
                }
            }
            let cost = LocalCost {
                tracking: Some(Tracking {
                    weight: l.weight.clone(),
                    target,
                }),
                rate: Some(InputRate {
                    weight: l.rate.clone(),
                    previous: prev.clone(),
                }),
                ..LocalCost::default()
            };
            problem.subsystems_mut()[l.s]
                .as_linear_mut()
                .ok_or_else(|| anyhow!("closed loop needs linear subsystems"))?
                .set_cost(cost)?;
        }
        let outputs: Vec<f64> = plant.outputs().iter().flat_map(|y| y.iter().copied()).collect();

        let res = optimize_decision(&problem, &decision, profile.as_ref(), &inner, &outer)
            .with_context(|| format!("closed loop: decision at period {k}"))?;
        let mut inputs: Vec<DVector<f64>> = built.models.iter().map(|m| DVector::zeros(m.input_dim())).collect();
        let mut next = res.decision.clone();
        for (l, prev) in loops.iter().zip(previous.iter_mut()) {
            let range = problem.decision_range(l.s).expect("controlled subsystem has a decision");
            let nu = built.models[l.s].input_dim();
            inputs[l.s] = res.decision.rows(range.start, nu).into_owned();
            *prev = inputs[l.s].clone();
            // warm start: the remaining samples, shifted by one period
            for j in range.start..range.end - nu {
                next[j] = res.decision[j + nu];
            }
        }
        rows.push(ClosedLoopRow {
            time: k,
            outputs,
            setpoints,
            cost: res.cost.total,
            complete: res.complete,
        });
        decision = next;
        profile = Some(res.profile);
        plant.step(&inputs).with_context(|| format!("closed loop: plant step at period {k}"))?;
    }
    Ok(ClosedLoop {
        output_names,
        setpoint_names,
        tracked,
        rows,
        seconds: start.elapsed().as_secs_f64(),
    })
}

impl ClosedLoop {
    /// Largest `|y - r|` over the tracked outputs in the last period.
    pub fn final_tracking_error(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| {
            self.tracked
                .iter()
                .zip(&r.setpoints)
                .map(|(&i, sp)| (r.outputs[i] - sp).abs())
                .fold(0.0, f64::max)
        })
    }

    pub fn incomplete_periods(&self) -> usize {
        self.rows.iter().filter(|r| !r.complete).count()
    }

    pub fn csv(&self) -> Result<String> {
        let mut head = vec!["time".to_string()];
        head.extend(self.output_names.iter().cloned());
        head.extend(self.setpoint_names.iter().cloned());
        head.push("J_c".into());
        head.push("complete".into());
        csv_string(
            &head,
            self.rows.iter().map(|r| {
                let mut row = vec![r.time.to_string()];
                row.extend(r.outputs.iter().map(|y| sci(*y)));
                row.extend(r.setpoints.iter().map(|x| x.to_string()));
                row.push(sci(r.cost));
                row.push(r.complete.to_string());
                row
            }),
        )
    }

    pub fn summary(&self) -> Summary {
        vec![
            entry("periods", self.rows.len()),
            entry("final tracking error", format!("{:.3e}", self.final_tracking_error())),
            entry("incomplete periods", self.incomplete_periods()),
            entry("wall time", format!("{:.2} s", self.seconds)),
        ]
    }
}
