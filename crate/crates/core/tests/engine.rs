use std::time::Instant;

use hiercoord::benchmark::{four_subsystem_benchmark, gaussian, rng, with_spectral_radius, BenchmarkOptions};
use hiercoord::engine::{
    certify_matrix_filter, certify_scalar_mix, design_pi_filter, dlqr, run_fixed_point, solve_dare, solve_gamma,
    spectral_radius, AndersonState, FixedPointOptions, Termination, UpdateStrategy,
};
use hiercoord::Error;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn affine(a: &DMatrix<f64>, b: &DVector<f64>) -> impl FnMut(&DVector<f64>) -> hiercoord::Result<DVector<f64>> {
    let (a, b) = (a.clone(), b.clone());
    move |v: &DVector<f64>| Ok(&a * v + &b)
}

fn oracle(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.nrows();
    (DMatrix::identity(n, n) - a).lu().solve(b).unwrap()
}

fn vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    gaussian(rng, n, 1).column(0).into_owned()
}

/// Real normal matrix with prescribed eigenvalues: an orthogonal similarity
/// of a block diagonal of reals and 2x2 rotation-scalings.
fn normal_matrix(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> DMatrix<f64> {
    let mut block = DMatrix::zeros(d, d);
    let mut i = 0;
    while i < d {
        if i + 1 < d && rng.random_bool(0.5) {
            let r = radius * rng.random::<f64>().sqrt();
            let th = rng.random_range(0.0..std::f64::consts::PI);
            block[(i, i)] = r * th.cos();
            block[(i + 1, i + 1)] = r * th.cos();
            block[(i, i + 1)] = -r * th.sin();
            block[(i + 1, i)] = r * th.sin();
            i += 2;
        } else {
            block[(i, i)] = rng.random_range(-radius..radius);
            i += 1;
        }
    }
    let q = gaussian(rng, d, d).qr().q();
    &q * block * q.transpose()
}

#[test]
fn identity_map_converges_immediately() {
    let v0 = DVector::from_vec(vec![1.0, -2.0, 3.0]);
    for strategy in [
        UpdateStrategy::Plain,
        UpdateStrategy::ScalarMix { beta: 0.5 },
        UpdateStrategy::MatrixFilter { pi: DMatrix::identity(3, 3) * 0.3 },
        UpdateStrategy::anderson(2),
    ] {
        let rep = run_fixed_point(|v: &DVector<f64>| Ok(v.clone()), &v0, &strategy, &FixedPointOptions::default())
            .unwrap();
        assert_eq!(rep.termination, Termination::Converged);
        assert_eq!(rep.evaluations, 1);
        assert_eq!(rep.final_eps(), 0.0);
        assert_eq!(rep.profile, v0);
    }
}

#[test]
fn half_contraction_rate_and_limit() {
    let a = DMatrix::identity(4, 4) * 0.5;
    let b = DVector::from_element(4, 1.0);
    let rep = run_fixed_point(affine(&a, &b), &DVector::zeros(4), &UpdateStrategy::Plain, &FixedPointOptions::new(1e-12, 500))
        .unwrap();
    assert!(rep.converged());
    assert!((&rep.profile - DVector::from_element(4, 2.0)).amax() < 1e-11);
    for w in rep.trace.windows(2) {
        assert!((w[1].eps / w[0].eps - 0.5).abs() < 1e-6);
    }
    let rep = run_fixed_point(affine(&a, &b), &DVector::zeros(4), &UpdateStrategy::anderson(4), &FixedPointOptions::new(1e-10, 500))
        .unwrap();
    assert!(rep.converged());
    assert!(rep.iterations() <= 6);
}

#[test]
fn anderson_terminates_finitely_on_affine_maps() {
    let start = Instant::now();
    let mut rng = rng(17);
    for d in 2..=8 {
        for _ in 0..20 {
            let rho = rng.random_range(0.3..0.95);
            let a = with_spectral_radius(&mut rng, d, rho).unwrap();
            let b = vector(&mut rng, d);
            let rep = run_fixed_point(
                affine(&a, &b),
                &DVector::zeros(d),
                &UpdateStrategy::anderson(d),
                &FixedPointOptions::new(1e-10, d + 3),
            )
            .unwrap();
            assert!(rep.converged(), "D={d}: {:?}", rep.termination);
            assert!(rep.iterations() <= d + 2);
            assert!((&rep.profile - oracle(&a, &b)).amax() <= 1e-8);
        }
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn memory_one_step_has_closed_form() {
    let mut st = AndersonState::new(1, 0.0).unwrap();
    let v0 = DVector::from_vec(vec![0.0, 0.0]);
    let g0 = DVector::from_vec(vec![1.0, 2.0]);
    let first = st.step(&v0, &(&v0 + &g0), &g0).unwrap();
    let v1 = first.next;
    let g1 = DVector::from_vec(vec![0.5, -0.25]);
    let dv = &v1 - &v0;
    let dg = &g1 - &g0;
    let gamma = dg.dot(&g1) / dg.dot(&dg);
    let expected = &v1 + &g1 - (&dv + &dg) * gamma;
    let step = st.step(&v1, &(&v1 + &g1), &g1).unwrap();
    assert_eq!(step.memory_used, 1);
    assert!((step.next - expected).amax() < 1e-14);
}

#[test]
fn restart_counter_sequence() {
    let mut st = AndersonState::new(3, 0.0).unwrap();
    let mut seq = Vec::new();
    let mut v = DVector::from_element(4, 1.0);
    for k in 0..20 {
        seq.push(st.current_memory());
        let gv = v.map(|x| 0.5 * x + 1.0) + DVector::from_element(4, 1e-3 * k as f64);
        let g = &gv - &v;
        v = st.step(&v, &gv, &g).unwrap().next;
    }
    assert_eq!(seq, vec![0, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1]);
}

#[test]
fn gamma_matches_normal_equations_and_is_optimal() {
    let mut rng = rng(23);
    for _ in 0..50 {
        let cols = rng.random_range(1..=4);
        let dg = gaussian(&mut rng, 8, cols);
        let g = vector(&mut rng, 8);
        let gamma = solve_gamma(&dg, &g, 0.0).unwrap();
        let normal = (dg.transpose() * &dg).lu().solve(&(dg.transpose() * &g)).unwrap();
        assert!((&gamma - normal).amax() < 1e-9);
        let objective = |x: &DVector<f64>| (&g - &dg * x).norm_squared();
        let best = objective(&gamma);
        for _ in 0..20 {
            let dir = vector(&mut rng, cols);
            assert!(objective(&(&gamma + dir.normalize() * 1e-3)) >= best);
        }
        // residual orthogonal to the column space
        assert!((dg.transpose() * (&g - &dg * &gamma)).amax() < 1e-8);
    }
}

#[test]
fn gamma_degenerate_cases() {
    let g = DVector::from_vec(vec![1.0, 2.0, 3.0]);
    assert_eq!(solve_gamma(&DMatrix::zeros(3, 2), &g, 0.0).unwrap(), DVector::zeros(2));
    let exact = solve_gamma(&DMatrix::from_column_slice(3, 1, g.as_slice()), &g, 0.0).unwrap();
    assert!((exact[0] - 1.0).abs() < 1e-15);
    // duplicated column: minimum-norm splits the weight
    let dup = DMatrix::from_fn(3, 2, |i, _| g[i]);
    let gamma = solve_gamma(&dup, &g, 0.0).unwrap();
    assert!((&gamma - DVector::from_element(2, 0.5)).amax() < 1e-12);
    // orthonormal columns: projection
    let q = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    assert!((solve_gamma(&q, &g, 0.0).unwrap() - DVector::from_vec(vec![1.0, 2.0])).amax() < 1e-15);
    assert!(matches!(solve_gamma(&DMatrix::zeros(3, 0), &g, 0.0), Err(Error::LeastSquares(_))));
}

#[test]
fn spectral_radius_of_companion_matrices() {
    let mut rng = rng(31);
    for _ in 0..20 {
        // eight well-separated real roots in (-0.95, 0.95)
        let mut grid: Vec<f64> = (0..19).map(|k| -0.9 + 0.1 * k as f64).collect();
        grid.shuffle(&mut rng);
        let roots: Vec<f64> = grid[..8].iter().map(|r| r + rng.random_range(-0.02..0.02)).collect();
        let mut coeffs = vec![1.0];
        for &r in &roots {
            let mut next = vec![0.0; coeffs.len() + 1];
            for (i, c) in coeffs.iter().enumerate() {
                next[i] += c;
                next[i + 1] -= r * c;
            }
            coeffs = next;
        }
        // companion of x^8 + c1 x^7 + ... + c8
        let mut comp = DMatrix::zeros(8, 8);
        for j in 0..8 {
            comp[(0, j)] = -coeffs[j + 1];
        }
        for i in 1..8 {
            comp[(i, i - 1)] = 1.0;
        }
        let expected = roots.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let rho = spectral_radius(&comp).unwrap();
        assert!((rho - expected).abs() <= 1e-8 * expected, "{rho} vs {expected}");
    }
    // complex pair 0.6 +- 0.8i has modulus 1
    let rot = DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
    assert!((spectral_radius(&rot).unwrap() - 1.0).abs() < 1e-12);
    assert!(matches!(spectral_radius(&DMatrix::zeros(2, 3)), Err(Error::Dimension { .. })));
}

#[test]
fn scalar_mix_dichotomy_on_normal_maps() {
    let mut rng = rng(41);
    let mut checked = 0;
    while checked < 50 {
        let d = rng.random_range(2..=6);
        let m = normal_matrix(&mut rng, d, 1.6);
        let beta = rng.random_range(0.05..1.95);
        let cert = certify_scalar_mix(&m, beta).unwrap();
        if (cert.rho - 1.0).abs() < 0.02 {
            continue;
        }
        checked += 1;
        let b = vector(&mut rng, d);
        let eps = 2e-4 * b.amax();
        let rep = run_fixed_point(
            affine(&m, &b),
            &DVector::zeros(d),
            &UpdateStrategy::ScalarMix { beta },
            &FixedPointOptions::new(eps, 500),
        )
        .unwrap();
        assert_eq!(rep.converged(), cert.converges, "rho {} beta {beta}", cert.rho);
    }
}

#[test]
fn strategy_equivalences() {
    let mut rng = rng(43);
    let a = with_spectral_radius(&mut rng, 6, 0.8).unwrap();
    let b = vector(&mut rng, 6);
    let opts = FixedPointOptions::new(1e-9, 300);
    let run = |s: UpdateStrategy| run_fixed_point(affine(&a, &b), &DVector::zeros(6), &s, &opts).unwrap();
    let plain = run(UpdateStrategy::Plain);
    assert!(plain.same_numerics(&run(UpdateStrategy::ScalarMix { beta: 1.0 })));
    let mix = run(UpdateStrategy::ScalarMix { beta: 0.6 });
    let filt = run(UpdateStrategy::MatrixFilter { pi: DMatrix::identity(6, 6) * 0.6 });
    assert_eq!(mix.evaluations, filt.evaluations);
    for (x, y) in mix.trace.iter().zip(&filt.trace) {
        assert!((x.eps - y.eps).abs() <= 1e-13 * (1.0 + x.eps));
    }
    assert!((mix.profile - filt.profile).amax() < 1e-13);
    // beta = 0 stalls
    let stall = run(UpdateStrategy::ScalarMix { beta: 0.0 });
    assert_eq!(stall.termination, Termination::MaxIterations);
}

#[test]
fn divergence_is_reported() {
    let a = DMatrix::identity(2, 2) * 3.0;
    let b = DVector::from_element(2, 1.0);
    let rep = run_fixed_point(affine(&a, &b), &DVector::zeros(2), &UpdateStrategy::Plain, &FixedPointOptions::default())
        .unwrap();
    assert_eq!(rep.termination, Termination::Diverged);
    let rep = run_fixed_point(
        |v: &DVector<f64>| Ok(v.map(|_| f64::NAN)),
        &DVector::zeros(2),
        &UpdateStrategy::Plain,
        &FixedPointOptions::default(),
    )
    .unwrap();
    assert_eq!(rep.termination, Termination::Diverged);
}

#[test]
fn converged_reports_are_coherent() {
    let mut rng = rng(47);
    for _ in 0..20 {
        let a = with_spectral_radius(&mut rng, 10, 0.9).unwrap();
        let b = vector(&mut rng, 10);
        for s in [UpdateStrategy::Plain, UpdateStrategy::ScalarMix { beta: 0.8 }, UpdateStrategy::anderson(5)] {
            let eps = 1e-8;
            let rep = run_fixed_point(affine(&a, &b), &DVector::zeros(10), &s, &FixedPointOptions::new(eps, 1000)).unwrap();
            if rep.converged() {
                assert!((&a * &rep.profile + &b - &rep.profile).amax() <= 10.0 * eps);
                assert_eq!(rep.trace.len(), rep.evaluations);
            }
        }
    }
}

#[test]
fn riccati_solution_satisfies_the_equation() {
    let mut rng = rng(53);
    for _ in 0..10 {
        let a = gaussian(&mut rng, 4, 4) * 0.6;
        let b = gaussian(&mut rng, 4, 2);
        let q = DMatrix::identity(4, 4);
        let r = DMatrix::identity(2, 2) * 0.5;
        let (k, p) = dlqr(&a, &b, &q, &r).unwrap();
        let btpb = &r + b.transpose() * &p * &b;
        let rhs = &q + a.transpose() * &p * &a
            - a.transpose() * &p * &b * btpb.clone().lu().solve(&(b.transpose() * &p * &a)).unwrap();
        assert!((&p - rhs).amax() < 1e-8);
        assert!(spectral_radius(&(&a - &b * k)).unwrap() < 1.0);
    }
    let err = solve_dare(
        &DMatrix::identity(2, 2),
        &DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        &DMatrix::identity(2, 2),
        &DMatrix::identity(1, 1),
        1e-10,
        1000,
    );
    assert!(matches!(err, Err(Error::Design(_))));
}

#[test]
fn pi_filter_certifies_and_converges_on_benchmarks() {
    for seed in 0..20 {
        let bench = four_subsystem_benchmark(&BenchmarkOptions {
            seed,
            ..BenchmarkOptions::default()
        })
        .unwrap();
        let c = hiercoord::subsystem::build_condensed(&bench.topology, &bench.subsystems().unwrap()).unwrap();
        let d = c.m_v.nrows();
        let pi = design_pi_filter(&c.m_v, &DMatrix::identity(d, d), &(DMatrix::identity(d, d) * 1e-6)).unwrap();
        let cert = certify_matrix_filter(&c.m_v, &pi).unwrap();
        assert!(cert.converges && cert.rho < 1.0);
        let x = DVector::from_iterator(
            bench.x0.iter().map(|x| x.len()).sum(),
            bench.x0.iter().flat_map(|x| x.iter().copied()),
        );
        let b = &c.m_x * x + &c.m_r * bench.nominal_setpoint();
        let rep = run_fixed_point(
            affine(&c.m_v, &b),
            &DVector::zeros(d),
            &UpdateStrategy::MatrixFilter { pi },
            &FixedPointOptions::new(1e-8, 500),
        )
        .unwrap();
        assert!(rep.converged(), "seed {seed}");
    }
}

#[test]
fn pi_design_names_the_failed_condition() {
    let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5]));
    match design_pi_filter(&m, &DMatrix::identity(2, 2), &DMatrix::identity(2, 2)) {
        Err(Error::Design(msg)) => assert!(msg.contains("stabilizable"), "{msg}"),
        other => panic!("expected a design error, got {other:?}"),
    }
}

#[test]
fn invalid_strategies_are_rejected() {
    let v0 = DVector::zeros(2);
    let id = |v: &DVector<f64>| Ok(v.clone());
    let opts = FixedPointOptions::default();
    assert!(run_fixed_point(id, &v0, &UpdateStrategy::anderson(0), &opts).is_err());
    assert!(run_fixed_point(id, &v0, &UpdateStrategy::ScalarMix { beta: f64::NAN }, &opts).is_err());
    assert!(run_fixed_point(id, &v0, &UpdateStrategy::MatrixFilter { pi: DMatrix::zeros(3, 3) }, &opts).is_err());
    assert!(run_fixed_point(id, &v0, &UpdateStrategy::Plain, &FixedPointOptions::new(0.0, 10)).is_err());
    assert!(run_fixed_point(id, &v0, &UpdateStrategy::Plain, &FixedPointOptions::new(1e-8, 0)).is_err());
}
