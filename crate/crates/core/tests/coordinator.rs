mod common;

use hiercoord::benchmark::{four_subsystem_benchmark, random_network, random_topology, rng, BenchmarkOptions, S1};
use hiercoord::coordinator::{
    coordinator_round, optimize_decision, solve_coherence, CoordinatorProblem, DecisionMode, FpSettings, OuterOptions,
};
use hiercoord::engine::{FixedPointOptions, UpdateStrategy};
use hiercoord::network::{EdgeSpec, Layout, NetworkTopology};
use hiercoord::subsystem::{BlackBoxSubsystem, LinearSubsystem, LocalCost, LocalSubsystem, StateSpaceModel, Tracking};
use nalgebra::{DMatrix, DVector};

fn settings(strategy: UpdateStrategy, eps: f64, sigma: usize) -> FpSettings {
    FpSettings {
        strategy,
        options: FixedPointOptions::new(eps, sigma),
    }
}

/// Two controlled scalar plants coupled both ways, tracking 1 and -0.5.
fn two_subsystem_problem() -> CoordinatorProblem {
    let topo = NetworkTopology::new(2, vec![EdgeSpec::new(0, 1, 1), EdgeSpec::new(1, 0, 1)], &[0, 1], 4).unwrap();
    let one = DMatrix::from_element(1, 1, 1.0);
    let plant = |a: f64, e: f64, target: f64, s: usize| {
        let m = StateSpaceModel::new(
            DMatrix::from_element(1, 1, a),
            one.clone(),
            DMatrix::from_element(1, 1, e),
            one.clone(),
            one.clone(),
        );
        LinearSubsystem::new(s, m, &topo)
            .unwrap()
            .with_mpc(&one, &(one.clone() * 0.1))
            .unwrap()
            .with_cost(LocalCost {
                tracking: Some(Tracking {
                    weight: one.clone(),
                    target: DVector::from_element(1, target),
                }),
                effort: Some(one.clone() * 0.5),
                ..LocalCost::default()
            })
            .unwrap()
            .into()
    };
    let subs: Vec<LocalSubsystem> = vec![plant(0.7, 0.4, 1.0, 0), plant(0.5, -0.3, -0.5, 1)];
    CoordinatorProblem::new(
        topo,
        subs,
        vec![DVector::from_element(1, 0.2), DVector::from_element(1, -0.1)],
        DecisionMode::SetPoint,
    )
    .unwrap()
}

#[test]
fn pattern_search_matches_grid_search() {
    let p = two_subsystem_problem();
    let inner = settings(UpdateStrategy::anderson(5), 1e-10, 500);
    let res = optimize_decision(&p, &DVector::zeros(2), None, &inner, &OuterOptions::default()).unwrap();
    assert!(res.complete);
    let (lo, hi) = (-3.0, 3.0);
    let cell = (hi - lo) / 49.0;
    let mut best = (f64::INFINITY, DVector::zeros(2));
    for i in 0..50 {
        for j in 0..50 {
            let r = DVector::from_vec(vec![lo + cell * i as f64, lo + cell * j as f64]);
            let c = solve_coherence(&p, &r, None, &inner).unwrap();
            assert!(c.converged());
            if c.cost.total < best.0 {
                best = (c.cost.total, r);
            }
        }
    }
    for k in 0..2 {
        assert!((res.decision[k] - best.1[k]).abs() <= cell, "{} vs {}", res.decision, best.1);
    }
    assert!(res.cost.total <= best.0 + 1e-12);
    // accepted polls never increase the cost
    for w in res.history.windows(2) {
        assert!(w[1].cost <= w[0].cost);
    }
}

#[test]
fn zero_coupling_set_point_cost() {
    let topo = NetworkTopology::new(2, vec![], &[0, 1], 3).unwrap();
    let one = DMatrix::from_element(1, 1, 1.0);
    let targets = [0.3, -1.7];
    let subs: Vec<LocalSubsystem> = (0..2)
        .map(|s| {
            let m = StateSpaceModel::new(
                DMatrix::from_element(1, 1, 0.5),
                one.clone(),
                DMatrix::zeros(1, 0),
                DMatrix::zeros(0, 1),
                one.clone(),
            );
            LinearSubsystem::new(s, m, &topo)
                .unwrap()
                .with_mpc(&one, &one)
                .unwrap()
                .with_cost(LocalCost {
                    setpoint: Some(Tracking {
                        weight: one.clone(),
                        target: DVector::from_element(1, targets[s]),
                    }),
                    ..LocalCost::default()
                })
                .unwrap()
                .into()
        })
        .collect();
    let states = vec![DVector::from_element(1, 1.0); 2];
    let p = CoordinatorProblem::new(topo, subs, states, DecisionMode::SetPoint).unwrap();
    let res = optimize_decision(&p, &DVector::zeros(2), None, &FpSettings::default(), &OuterOptions::default())
        .unwrap();
    assert!(res.complete);
    for k in 0..2 {
        assert!((res.decision[k] - targets[k]).abs() < 1e-4);
    }
    assert!(res.cost.total < 1e-8);
}

#[test]
fn no_edges_converge_in_one_round() {
    let topo = NetworkTopology::new(2, vec![], &[], 3).unwrap();
    let m = StateSpaceModel::new(
        DMatrix::from_element(1, 1, 0.5),
        DMatrix::zeros(1, 0),
        DMatrix::zeros(1, 0),
        DMatrix::zeros(0, 1),
        DMatrix::zeros(0, 1),
    );
    let subs: Vec<LocalSubsystem> = (0..2)
        .map(|s| LinearSubsystem::new(s, m.clone(), &topo).unwrap().into())
        .collect();
    let p = CoordinatorProblem::new(topo, subs, vec![DVector::from_element(1, 1.0); 2], DecisionMode::SetPoint);
    // set-point mode needs a controlled subsystem with a control law
    assert!(p.is_err() || p.as_ref().unwrap().decision_dim() == 0);
    if let Ok(p) = p {
        let c = solve_coherence(&p, &DVector::zeros(0), None, &FpSettings::default()).unwrap();
        assert!(c.converged());
        assert_eq!(c.report.evaluations, 1);
        assert!(c.report.profile.is_empty());
    }
}

#[test]
fn zero_deviation_round_is_zero() {
    let mut rng = rng(61);
    let topo = random_topology(&mut rng, 5, 2, 4).unwrap();
    let (mut subs, states) = random_network(&mut rng, &topo).unwrap();
    for sub in &mut subs {
        if let Some(lin) = sub.as_linear_mut() {
            let ny = lin.model().output_dim();
            if lin.is_controlled() {
                lin.set_cost(LocalCost {
                    tracking: Some(Tracking {
                        weight: DMatrix::identity(ny, ny),
                        target: DVector::zeros(ny),
                    }),
                    ..LocalCost::default()
                })
                .unwrap();
            }
        }
    }
    let zeros: Vec<DVector<f64>> = states.iter().map(|x| DVector::zeros(x.len())).collect();
    let mode = if topo.controlled().is_empty() {
        DecisionMode::ControlProfile
    } else {
        DecisionMode::SetPoint
    };
    let p = CoordinatorProblem::new(topo.clone(), subs, zeros, mode).unwrap();
    let out = coordinator_round(&p, &DVector::zeros(p.decision_dim()), &DVector::zeros(topo.dim())).unwrap();
    assert_eq!(out.v_in, DVector::zeros(topo.dim()));
    assert_eq!(out.cost.total, 0.0);
}

#[test]
fn round_matches_condensed_model_on_benchmark() {
    let bench = four_subsystem_benchmark(&BenchmarkOptions::default()).unwrap();
    let p = bench.problem(DecisionMode::SetPoint).unwrap();
    let c = p.condensed().unwrap();
    let r = bench.nominal_setpoint();
    let v = DVector::from_fn(p.profile_dim(), |i, _| (i as f64 * 0.37).sin());
    let out = coordinator_round(&p, &r, &v).unwrap();
    let expected = c.apply(&v, &common::stack(p.states()), &r).unwrap();
    assert!((out.v_in - expected).amax() <= 1e-10);
    assert_eq!(out.cost.total, out.cost.local.iter().sum::<f64>());
}

#[test]
fn relabelling_subsystems_is_equivariant() {
    let mut rng = rng(67);
    let mut checked = 0;
    while checked < 10 {
        let topo = random_topology(&mut rng, 5, 3, 4).unwrap();
        if topo.n_subsystems() < 2 {
            continue;
        }
        checked += 1;
        let (subs, states) = random_network(&mut rng, &topo).unwrap();
        let lin: Vec<LinearSubsystem> = subs.iter().map(|s| s.as_linear().unwrap().clone()).collect();
        let n = topo.n_subsystems();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(0, n - 1);
        let mpc = |s: usize| {
            lin[s].is_controlled().then(|| {
                let ny = lin[s].model().output_dim();
                let nu = lin[s].input_dim();
                (DMatrix::identity(ny, ny), DMatrix::identity(nu, nu) * 0.1)
            })
        };
        let (topo2, subs2, states2) = common::relabel(&topo, &lin, &states, &perm, mpc);

        let mode = if topo.controlled().is_empty() {
            DecisionMode::ControlProfile
        } else {
            DecisionMode::SetPoint
        };
        let p1 = CoordinatorProblem::new(topo.clone(), subs, states, mode).unwrap();
        let p2 = CoordinatorProblem::new(
            topo2.clone(),
            subs2.into_iter().map(LocalSubsystem::from).collect(),
            states2,
            mode,
        )
        .unwrap();
        // decision: each controlled subsystem's slice moves with it
        let d1 = DVector::from_fn(p1.decision_dim(), |i, _| 0.3 + 0.1 * i as f64);
        let mut d2 = DVector::zeros(p2.decision_dim());
        for s in 0..n {
            if let (Some(a), Some(b)) = (p1.decision_range(s), p2.decision_range(perm[s])) {
                d2.rows_range_mut(b).copy_from(&d1.rows_range(a));
            }
        }
        let v1 = DVector::from_fn(topo.dim(), |i, _| (i as f64 * 0.71).cos());
        let mut v2 = DVector::zeros(topo.dim());
        for (k, e) in topo.edges().iter().enumerate() {
            let k2 = topo2.index_of(perm[e.source], perm[e.target]).unwrap();
            v2.rows_range_mut(topo2.edge_range(k2, Layout::Incoming))
                .copy_from(&v1.rows_range(topo.edge_range(k, Layout::Incoming)));
        }
        let o1 = coordinator_round(&p1, &d1, &v1).unwrap();
        let o2 = coordinator_round(&p2, &d2, &v2).unwrap();
        for (k, e) in topo.edges().iter().enumerate() {
            let k2 = topo2.index_of(perm[e.source], perm[e.target]).unwrap();
            let a = o1.v_in.rows_range(topo.edge_range(k, Layout::Incoming)).into_owned();
            let b = o2.v_in.rows_range(topo2.edge_range(k2, Layout::Incoming)).into_owned();
            assert!((a - b).amax() < 1e-10);
        }
        for s in 0..n {
            assert!((o1.cost.local[s] - o2.cost.local[perm[s]]).abs() < 1e-9 * (1.0 + o1.cost.local[s].abs()));
        }
    }
}

#[test]
fn black_box_subsystems_give_identical_traces() {
    let bench = four_subsystem_benchmark(&BenchmarkOptions::default()).unwrap();
    let linear = bench.problem(DecisionMode::SetPoint).unwrap();
    let opaque_subs: Vec<LocalSubsystem> = linear
        .subsystems()
        .iter()
        .map(|s| BlackBoxSubsystem::wrap(s.as_linear().unwrap().clone()).into())
        .collect();
    let opaque = CoordinatorProblem::new(
        bench.topology.clone(),
        opaque_subs,
        bench.x0.clone(),
        DecisionMode::SetPoint,
    )
    .unwrap();
    assert!(opaque.condensed().is_err());
    let r = bench.nominal_setpoint();
    for strategy in [
        UpdateStrategy::Plain,
        UpdateStrategy::ScalarMix { beta: 0.7 },
        UpdateStrategy::anderson(5),
        UpdateStrategy::anderson(15),
    ] {
        let s = settings(strategy, 1e-8, 500);
        let a = solve_coherence(&linear, &r, None, &s).unwrap();
        let b = solve_coherence(&opaque, &r, None, &s).unwrap();
        assert!(a.report.same_numerics(&b.report));
        assert_eq!(a.cost, b.cost);
    }
    let outer = OuterOptions {
        max_evaluations: 40,
        ..OuterOptions::default()
    };
    let inner = settings(UpdateStrategy::anderson(5), 1e-8, 500);
    let a = optimize_decision(&linear, &r, None, &inner, &outer).unwrap();
    let b = optimize_decision(&opaque, &r, None, &inner, &outer).unwrap();
    assert_eq!(a.decision, b.decision);
    assert_eq!(a.cost, b.cost);
    assert_eq!(a.rounds, b.rounds);
}

#[test]
fn coherence_holds_at_convergence() {
    for seed in 0..5 {
        let bench = four_subsystem_benchmark(&BenchmarkOptions {
            seed,
            ..BenchmarkOptions::default()
        })
        .unwrap();
        let p = bench.problem(DecisionMode::SetPoint).unwrap();
        let r = bench.nominal_setpoint();
        for strategy in [UpdateStrategy::Plain, UpdateStrategy::ScalarMix { beta: 0.9 }, UpdateStrategy::anderson(10)] {
            let eps = 1e-8;
            let c = solve_coherence(&p, &r, None, &settings(strategy, eps, 1000)).unwrap();
            assert!(c.converged());
            let again = coordinator_round(&p, &r, &c.report.profile).unwrap();
            assert!((again.v_in - &c.report.profile).amax() <= 10.0 * eps);
            assert_eq!(c.cost.total, c.cost.local.iter().sum::<f64>());
        }
    }
}

#[test]
fn anderson_matches_direct_solve_on_benchmark() {
    for seed in 0..5 {
        let bench = four_subsystem_benchmark(&BenchmarkOptions {
            seed,
            ..BenchmarkOptions::default()
        })
        .unwrap();
        let p = bench.problem(DecisionMode::SetPoint).unwrap();
        let c = p.condensed().unwrap();
        let r = bench.nominal_setpoint();
        let d = c.m_v.nrows();
        let rhs = &c.m_x * common::stack(p.states()) + &c.m_r * &r;
        let direct = (DMatrix::identity(d, d) - &c.m_v).lu().solve(&rhs).unwrap();
        let sol = solve_coherence(&p, &r, None, &settings(UpdateStrategy::anderson(15), 1e-11, 2000)).unwrap();
        assert!(sol.converged());
        assert!((sol.report.profile - direct).amax() <= 1e-7);
    }
}

#[test]
fn anderson_converges_on_detuned_benchmark() {
    for seed in 0..5 {
        let mut bench = four_subsystem_benchmark(&BenchmarkOptions {
            seed,
            ..BenchmarkOptions::default()
        })
        .unwrap();
        bench.detune(S1, 10.0).unwrap();
        let p = bench.problem(DecisionMode::SetPoint).unwrap();
        let c = solve_coherence(&p, &bench.nominal_setpoint(), None, &settings(UpdateStrategy::anderson(15), 1e-6, 500))
            .unwrap();
        assert!(c.converged(), "seed {seed}");
    }
}

#[test]
fn control_profile_mode_on_benchmark() {
    let bench = four_subsystem_benchmark(&BenchmarkOptions::default()).unwrap();
    let p = bench.problem(DecisionMode::ControlProfile).unwrap();
    let res = optimize_decision(&p, &DVector::zeros(p.decision_dim()), None, &FpSettings::default(), &OuterOptions::default())
        .unwrap();
    assert!(res.complete);
    let round = coordinator_round(&p, &res.decision, &res.profile).unwrap();
    assert!((round.v_in - &res.profile).amax() < 1e-5);
    // the central optimum beats the local controllers' own set-point responses
    let sp = bench.problem(DecisionMode::SetPoint).unwrap();
    let c = solve_coherence(&sp, &bench.nominal_setpoint(), None, &FpSettings::default()).unwrap();
    assert!(res.cost.total <= c.cost.total);
}
