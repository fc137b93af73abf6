mod support;

use std::time::{Duration, Instant};

use axiomfit_core::dims::{assignment_ok, dim_feasible, leaf_unit, UnitSpec};
use axiomfit_core::fit::{Prepared, TreeFit};
use axiomfit_core::reason::{
    generalization_error, pointwise_reasoning_errors, solve_axioms, AxiomSystem, GridSpec, Metric, Solver,
};
use axiomfit_core::select::pareto_front;
use axiomfit_core::{
    contains_pruned_pattern, enumerate_gentrees, knee_point, parse, run_search, Dataset, Formula, GenTree, OperatorSet,
    ParetoPoint, SearchConfig, UnitVector,
};
use proptest::prelude::*;
use support::{kepler_period, read, time_dilation};

fn formula_text() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (-50.0f64..50.0).prop_map(|c| format!("{c}")),
        Just("x".to_string()),
        Just("y".to_string()),
        (1i32..4).prop_map(|k| format!("x^{k}")),
        (-3i32..0).prop_map(|k| format!("y^{k}")),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} / {b})")),
            inner.clone().prop_map(|a| format!("sqrt(abs({a}))")),
        ]
    })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs()) || (a.is_nan() && b.is_nan())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn serialization_round_trip(text in formula_text(), x in 0.1f64..5.0, y in 0.1f64..5.0) {
        let names = vec!["x".to_string(), "y".to_string()];
        let f = parse(&text, &["x", "y"]).unwrap();
        let g = parse(&f.to_infix(&names), &["x", "y"]).unwrap();
        match (f.eval(&[x, y]), g.eval(&[x, y])) {
            (Ok(a), Ok(b)) => prop_assert!(close(a, b, 1e-12), "{text}: {a} vs {b}"),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{text}: {a:?} vs {b:?}"),
        }
    }

    #[test]
    fn evaluation_is_pure(text in formula_text(), x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let f = parse(&text, &["x", "y"]).unwrap();
        let a = f.eval(&[x, y]).map(f64::to_bits);
        let b = f.eval(&[x, y]).map(f64::to_bits);
        prop_assert_eq!(a.ok(), b.ok());
    }

    #[test]
    fn embedding_never_lowers_complexity(text in formula_text(), other in formula_text()) {
        let f = parse(&text, &["x", "y"]).unwrap();
        let g = parse(&other, &["x", "y"]).unwrap();
        let wrapped = parse(&format!("sqrt({text})"), &["x", "y"]).unwrap();
        let summed = parse(&format!("({text}) + ({other})"), &["x", "y"]).unwrap();
        prop_assert!(wrapped.complexity() > f.complexity());
        prop_assert!(summed.complexity() > f.complexity().max(g.complexity()));
    }

    #[test]
    fn knee_ignores_affine_rescaling(
        raw in proptest::collection::vec((1.0f64..100.0, 0.01f64..50.0), 3..12),
        a in 0.1f64..10.0, b in 0.0f64..5.0, c in 0.1f64..10.0, d in 0.0f64..5.0,
    ) {
        let pts: Vec<ParetoPoint> = raw.iter().map(|(x, y)| ParetoPoint::new(*x, *y)).collect();
        let front = pareto_front(&pts);
        prop_assume!(front.len() >= 3);
        let k = knee_point(&front, 1.0).unwrap();
        prop_assert!(k < front.len());
        let scaled: Vec<ParetoPoint> = front.iter().map(|p| ParetoPoint::new(a * p.complexity + b, c * p.score + d)).collect();
        prop_assert_eq!(knee_point(&scaled, 1.0).unwrap(), k);
    }

    #[test]
    fn normalization_round_trip(
        rows in proptest::collection::vec((0.001f64..1e6, -1e3f64..1e3), 1..10),
        dx in 1e-3f64..1e9, dy in 1e-3f64..1e9,
    ) {
        let mut ds = Dataset::new(vec!["x".into()], "y".into(), rows.iter().map(|r| vec![r.0]).collect(), rows.iter().map(|r| r.1).collect()).unwrap();
        let orig = ds.clone();
        ds.normalize("x", dx).unwrap();
        ds.normalize("y", dy).unwrap();
        ds.denormalize();
        for (a, b) in ds.x.iter().zip(&orig.x) {
            prop_assert!(close(a[0], b[0], 1e-12));
        }
        for (a, b) in ds.y.iter().zip(&orig.y) {
            prop_assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn unit_feasibility_monotone_in_constant_units(depth in 0usize..3, t in proptest::collection::vec(-3i32..4, 3), idx in 0usize..64) {
        let trees = enumerate_gentrees(&OperatorSet::arithmetic_sqrt(), depth).unwrap();
        let g = &trees[idx % trees.len()];
        let vars = vec![UnitVector(vec![1, 0, 0]), UnitVector(vec![0, 1, 0]), UnitVector(vec![0, 0, 1])];
        let target = UnitVector(t);
        if dim_feasible(g, &target, &vars, false, 2, 6).feasible {
            prop_assert!(dim_feasible(g, &target, &vars, true, 2, 6).feasible);
        }
    }
}

// The unit of a lone leaf is computed here from scratch and must agree with every accepted assignment.
proptest! {
    #[test]
    fn accepted_leaf_assignments_carry_the_target_unit(a in -2i32..3, b in -2i32..3, c in -2i32..3, t in proptest::collection::vec(-4i32..5, 2)) {
        let vars = vec![UnitVector(vec![1, 0]), UnitVector(vec![0, 1]), UnitVector(vec![1, -1])];
        let target = UnitVector(t.clone());
        let powers = vec![a, b, c];
        let mine = vec![a + c, b - c];
        let ok = assignment_ok(&GenTree::Leaf, &[powers.clone()], &[false], &vars, &target, false);
        prop_assert_eq!(ok, mine == t);
        prop_assert_eq!(leaf_unit(&powers, &vars, &UnitVector::zero(2)).0, mine);
    }

    #[test]
    fn kepler_solves_match_closed_form(m1 in 0.05f64..20.0, m2 in 1e-4f64..400.0, d in 0.01f64..200.0) {
        let sys = AxiomSystem::parse(&read("kepler_solar.axioms")).unwrap();
        let mut s = Solver::new(&sys);
        let p = s.eval_dataset_point(&[m1, m2, d]).unwrap();
        let want = kepler_period(m1, m2, d, 5.972e24, 86_400_000.0);
        prop_assert!(close(p, want, 1e-8), "{p} vs {want}");
        let sol = s.solve(&[m1 * 1.9885e30, m2 * 5.972e24, d * 1.496e11]).unwrap();
        prop_assert!(sol.residual < 1e-10);
    }

    #[test]
    fn relativity_solves_match_closed_form(v in 0.01f64..1e8) {
        let sys = AxiomSystem::parse(&read("relativity.axioms")).unwrap();
        let r = solve_axioms(&sys, &[("v", v)]).unwrap() * 1e15;
        prop_assert!(close(r, time_dilation(v), 1e-8), "{r} vs {}", time_dilation(v));
    }

    #[test]
    fn linf_never_exceeds_l2(c in 0.01f64..1.0, k in 0.2f64..5.0) {
        let sys = AxiomSystem::parse(&read("langmuir1.axioms")).unwrap();
        let data = Dataset::load(&support::data_dir().join("langmuir9.csv"), None).unwrap();
        let f = parse(&format!("p/({c}*p+{k})"), &["p"]).unwrap();
        let b = pointwise_reasoning_errors(&f, &data, &sys).unwrap();
        prop_assert!(b.rel_linf <= b.rel_l2 + 1e-15);
        prop_assert!(b.abs_linf <= b.abs_l2 + 1e-15);
        let g = generalization_error(&f, &sys, &data.names, &data.bounding_box(), Metric::Relative, &GridSpec { per_dim: 32, refine_top: 3 }, &data.x).unwrap();
        prop_assert!(g.value >= b.rel_linf - 1e-6);
    }
}

#[test]
fn no_enumerated_tree_is_pruned_and_order_is_stable() {
    for ops in [OperatorSet::arithmetic(), OperatorSet::arithmetic_sqrt()] {
        let a = enumerate_gentrees(&ops, 3).unwrap();
        let b = enumerate_gentrees(&ops, 3).unwrap();
        assert!(a.iter().all(|t| contains_pruned_pattern(t).is_none()));
        assert_eq!(
            a.iter().map(GenTree::serialize).collect::<Vec<_>>(),
            b.iter().map(GenTree::serialize).collect::<Vec<_>>()
        );
    }
}

#[test]
fn derivable_functions_have_no_reasoning_error() {
    let unit = kepler_period(1.0, 0.0, 1.0, 5.972e24, 86_400_000.0);
    let kepler = format!("{unit}*sqrt(d^3/(m1 + {}*m2))", 5.972e24 / 1.9885e30);
    let cases: [(&str, &str, &str); 4] = [
        ("kepler_solar.axioms", "solar.csv", &kepler),
        ("relativity.axioms", "timedilation.csv", "-1e15*(v^2/9e16)/(1 + sqrt(1 - v^2/9e16))"),
        ("langmuir1.axioms", "langmuir9.csv", "p/(1+p)"),
        ("langmuir2.axioms", "sun1998.csv", "p/(1+p) + 20*p/(1+10*p)"),
    ];
    for (ax, csv, text) in cases {
        let sys = AxiomSystem::parse(&read(ax)).unwrap();
        let data = support::load(csv);
        let f = parse(text, &data.name_refs()).unwrap();
        let b = pointwise_reasoning_errors(&f, &data, &sys).unwrap();
        assert!(b.rel_l2 < 1e-8 && b.rel_linf < 1e-8, "{ax}: {b:?}");
    }
}

#[test]
fn newtonian_axioms_reject_every_table_candidate() {
    let sys = AxiomSystem::parse(&read("relativity_newtonian.axioms")).unwrap();
    let data = support::load("timedilation.csv");
    for text in [
        "-0.00563*v^2",
        "v/(1+0.00689*v) - v",
        "-0.00537*v^2*sqrt(v + v^2)/(v-1)",
        "-0.00545*v^4/(sqrt(v^2 + v^-2)*(v-1))",
    ] {
        let f = parse(text, &["v"]).unwrap();
        let mut worst: f64 = 0.0;
        for x in &data.x {
            worst = worst.max(f.eval(x).unwrap().abs());
        }
        // The Newtonian derivable function is identically zero, so the absolute error is |f|.
        let b = axiomfit_core::reason::pointwise_reasoning_errors(&f, &data, &sys);
        assert!(b.is_err() || worst > 1.0);
        assert!(worst > 1.0, "{text}: {worst}");
    }
}

#[test]
fn fit_incumbent_only_improves() {
    let xs: Vec<f64> = (1..9).map(|i| i as f64 * 0.4).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (2.0 * x * x * x + 1.0).sqrt() / x).collect();
    let data = Dataset::new(vec!["x".into()], "y".into(), xs.iter().map(|x| vec![*x]).collect(), ys).unwrap();
    let cfg = SearchConfig { depth: 3, max_constants: 2, exhaustive_limit: 10, ..SearchConfig::default() };
    let prep = Prepared::new(&data, &cfg, None).unwrap();
    let trees = enumerate_gentrees(&OperatorSet::arithmetic_sqrt(), 2).unwrap();
    for t in trees.iter().take(6) {
        let mut fit = TreeFit::new(t, &prep, &cfg);
        let mut last = f64::INFINITY;
        let deadline = Instant::now() + Duration::from_secs(5);
        for _ in 0..20 {
            let done = fit.step(200, Some(deadline));
            assert!(fit.best_sse() <= last);
            last = fit.best_sse();
            if done {
                break;
            }
        }
        let r = fit.result();
        if let Some(f) = &r.formula {
            let sse: f64 = data.x.iter().zip(&data.y).map(|(x, y)| (f.eval(x).unwrap() - y).powi(2)).sum();
            assert!((sse - r.sse).abs() <= 1e-9 * r.sse.max(1e-300) + 1e-300, "{sse} vs {}", r.sse);
        }
    }
}

#[test]
fn search_is_deterministic_and_within_bounds() {
    let data = support::load("langmuir9.csv");
    let cfg = SearchConfig {
        depth: 2,
        max_constants: 2,
        slice_evals: 2000,
        max_evals_per_tree: 4000,
        budget_s: 60.0,
        ..SearchConfig::default()
    };
    let ops = OperatorSet::arithmetic();
    let a = run_search(&data, &cfg, &ops, None).unwrap();
    let b = run_search(&data, &cfg, &ops, None).unwrap();
    let key =
        |r: &[axiomfit_core::FitResult]| r.iter().map(|x| (x.tree.serialize(), x.sse.to_bits())).collect::<Vec<_>>();
    assert_eq!(key(&a), key(&b));
    let c = run_search(&data, &SearchConfig { workers: 3, ..cfg.clone() }, &ops, None).unwrap();
    assert!((a[0].sse - c[0].sse).abs() <= 1e-9 * a[0].sse.max(1.0));
    let best = a.iter().map(|r| r.sse).fold(f64::INFINITY, f64::min);
    assert!(a[0].sse <= best * (1.0 + 1e-8));
    for r in &a {
        let f: &Formula = r.formula.as_ref().unwrap();
        let free = f.leaves().iter().filter(|l| l.coeff.is_free()).count();
        assert!(free <= cfg.max_constants);
        for l in f.leaves() {
            assert!(l.within(cfg.power_bound, cfg.power_budget));
            assert!(l.coeff.value().abs() <= cfg.const_bound);
        }
    }
}

#[test]
fn unit_file_feeds_feasibility() {
    let spec = UnitSpec::parse(&read("kepler.units")).unwrap();
    assert!(!spec.constants_have_units);
}
