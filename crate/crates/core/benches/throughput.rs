//! Sequential versus rayon execution of the data-parallel hot spots.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use shortpulse::appendix::failure_scan;
use shortpulse::evolution::{evolve, gaussian_derivative, Snapshot, SolverConfig};
use shortpulse::exec::Exec;
use shortpulse::lp::{build_cutoff, hyp_ell_decompose};
use shortpulse::probe::{PacketParams, ProbeTable};

const MODES: [(&str, Exec); 2] = [("seq", Exec::Sequential), ("par", Exec::Parallel)];

fn snapshots() -> Vec<Snapshot> {
    let cfg = SolverConfig {
        n: 1 << 13,
        length: 400.0,
        dt: 0.02,
        t_final: 32.0,
        energy_check: false,
        wrap_threshold: 1.0,
        ..SolverConfig::default()
    };
    let grid = cfg.grid().unwrap();
    let traj = evolve(&gaussian_derivative(&grid, 0.1, 1.0), &cfg, &mut []).unwrap();
    traj.snapshots.into_iter().filter(|s| s.t >= 16.0).collect()
}

fn bench(c: &mut Criterion) {
    let snaps = snapshots();
    let refs: Vec<&Snapshot> = snaps.iter().collect();
    let params = PacketParams::default();
    let spec = build_cutoff(1.0).unwrap();
    let last = snaps.last().unwrap();

    let mut g = c.benchmark_group("probes");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| ProbeTable::build(&refs, &params, exec))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("bands");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| hyp_ell_decompose(&last.u, last.t, &spec, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("appendix_scan");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| failure_scan(0.25, 32.0, 1024.0, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
