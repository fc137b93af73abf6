use std::path::PathBuf;

use axiomfit_core::reason::{generalization_error, GridSpec, Metric, Solver};
use axiomfit_core::{
    enumerate_gentrees, fit_gentree, knee_point, parse, AxiomSystem, Dataset, OperatorSet, ParetoPoint, SearchConfig,
};
use criterion::{black_box, criterion_group, criterion_main, Criterion};

fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn axioms(name: &str) -> AxiomSystem {
    AxiomSystem::parse(&std::fs::read_to_string(data_path(name)).unwrap()).unwrap()
}

fn enumeration(c: &mut Criterion) {
    let ops = OperatorSet::arithmetic_sqrt();
    c.bench_function("enumerate depth 3", |b| b.iter(|| enumerate_gentrees(black_box(&ops), 3).unwrap().len()));
}

fn fitting(c: &mut Criterion) {
    let data = Dataset::load(&data_path("langmuir9.csv"), None).unwrap();
    let trees = enumerate_gentrees(&OperatorSet::arithmetic(), 1).unwrap();
    let cfg = SearchConfig { max_constants: 2, power_bound: 1, power_budget: 1, ..SearchConfig::default() };
    c.bench_function("fit depth-1 gentrees on langmuir", |b| {
        b.iter(|| trees.iter().map(|t| fit_gentree(t, &data, &cfg, None).unwrap().sse).fold(f64::INFINITY, f64::min))
    });
}

fn solving(c: &mut Criterion) {
    let sys = axioms("kepler_solar.axioms");
    let data = Dataset::load(&data_path("solar.csv"), None).unwrap();
    c.bench_function("solve kepler axioms at 8 points", |b| {
        b.iter(|| {
            let mut s = Solver::new(&sys);
            data.x.iter().map(|x| s.eval_dataset_point(x).unwrap()).sum::<f64>()
        })
    });
}

fn auditing(c: &mut Criterion) {
    let sys = axioms("relativity.axioms");
    let names = vec!["v".to_string()];
    let f = parse("-0.00563*v^2", &["v"]).unwrap();
    let grid = GridSpec { per_dim: 32, refine_top: 3 };
    c.bench_function("generalization error, time dilation", |b| {
        b.iter(|| {
            generalization_error(&f, &sys, &names, &vec![(37.0, 200.0)], Metric::Absolute, &grid, &[]).unwrap().value
        })
    });
}

fn knee(c: &mut Criterion) {
    let front: Vec<ParetoPoint> =
        (1..200).map(|i| ParetoPoint::new(i as f64, 100.0 / i as f64 + 0.01 * i as f64)).collect();
    c.bench_function("knee of 199-point front", |b| b.iter(|| knee_point(black_box(&front), 1.0).unwrap()));
}

criterion_group!(benches, enumeration, fitting, solving, auditing, knee);
criterion_main!(benches);
