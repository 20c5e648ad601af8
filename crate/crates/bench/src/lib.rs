//! Shared instances for the criterion benchmarks.

use hiercoord::benchmark::{four_subsystem_benchmark, Benchmark, BenchmarkOptions};
use hiercoord::subsystem::build_condensed;
use nalgebra::{DMatrix, DVector};

/// The default four-subsystem benchmark for `seed`.
pub fn benchmark(seed: u64) -> Benchmark {
    four_subsystem_benchmark(&BenchmarkOptions {
        seed,
        ..BenchmarkOptions::default()
    })
    .expect("benchmark instance")
}

/// The coupling map of a benchmark at its nominal set-point, as `(M_v, b)`
/// with `G(v) = M_v v + b`.
pub fn coupling_map(bench: &Benchmark) -> (DMatrix<f64>, DVector<f64>) {
    let subsystems = bench.subsystems().expect("subsystems");
    let c = build_condensed(&bench.topology, &subsystems).expect("condensed model");
    let x = DVector::from_iterator(
        bench.x0.iter().map(|x| x.len()).sum(),
        bench.x0.iter().flat_map(|x| x.iter().copied()),
    );
    let b = &c.m_x * x + &c.m_r * bench.nominal_setpoint();
    (c.m_v, b)
}
