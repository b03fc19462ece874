use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use leakscope_bench::{function, lowered, FIXTURES};
use leakscope_core::leakage::{analyze_record, brute_force_metrics};
use leakscope_core::mir::LoopBounds;
use leakscope_core::pipeline::lower;
use leakscope_core::solver::{BackendKind, SolverConfig};
use leakscope_core::tvla::{gen_test_vectors, simulate_traces, welch_t, LeakModel};
use leakscope_core::{AnalysisConfig, Analyzer};

fn lowering(c: &mut Criterion) {
    let f = function("kyber_frommsg");
    c.bench_function("lower/kyber_frommsg", |b| {
        b.iter(|| lower(black_box(&f), &LoopBounds::default()).unwrap())
    });
}

fn whole_function(c: &mut Criterion) {
    let mut g = c.benchmark_group("analyze");
    g.sample_size(10);
    for (name, _) in FIXTURES {
        let (_, trace) = lowered(name);
        let cfg = AnalysisConfig {
            jobs: Some(1),
            ..Default::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(name), &trace, |b, t| {
            b.iter(|| Analyzer::new(cfg.clone()).run(t).unwrap())
        });
    }
    g.finish();
}

fn backends(c: &mut Criterion) {
    let (_, trace) = lowered("cadd");
    let rec = trace.record(1).unwrap();
    let mut g = c.benchmark_group("cadd-mask");
    g.sample_size(20);
    for backend in [BackendKind::Builtin, BackendKind::BruteForce] {
        let cfg = AnalysisConfig {
            solver: SolverConfig {
                oracle_cap: 24,
                ..SolverConfig::with_backend(backend)
            },
            ..Default::default()
        };
        g.bench_function(format!("{backend:?}"), |b| {
            b.iter(|| analyze_record(black_box(rec), &cfg).unwrap())
        });
    }
    g.bench_function("enumeration", |b| {
        b.iter(|| brute_force_metrics(black_box(rec), 24).unwrap())
    });
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let (f, trace) = lowered("cadd_control");
    let recs = Analyzer::new(AnalysisConfig::default())
        .run(&trace)
        .unwrap();
    let poi = recs.iter().find(|r| r.address == 1).unwrap();
    let v = gen_test_vectors(&trace, poi, 100, 0, &SolverConfig::default()).unwrap();
    let m = LeakModel::default();
    c.bench_function("tvla/simulate-100", |b| {
        b.iter(|| simulate_traces(&f, black_box(&v.a), &m, 0).unwrap())
    });
    let a = simulate_traces(&f, &v.a, &m, 0).unwrap();
    let bb = simulate_traces(&f, &v.b, &m, 100).unwrap();
    c.bench_function("tvla/welch", |b| {
        b.iter(|| welch_t(black_box(&a), &bb).unwrap())
    });
}

criterion_group!(benches, lowering, whole_function, backends, simulation);
criterion_main!(benches);
