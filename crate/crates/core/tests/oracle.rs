mod support;

use axiomfit_core::{enumerate_gentrees, fit_gentree, OperatorSet, SearchConfig};
use support::{brute_force_sse, synthetic};

fn cfg(depth: usize) -> SearchConfig {
    SearchConfig { depth, max_constants: 1, power_bound: 1, power_budget: 1, ..SearchConfig::default() }
}

#[test]
fn matches_brute_force_on_shallow_trees() {
    let trees = enumerate_gentrees(&OperatorSet::arithmetic(), 1).unwrap();
    for seed in 0..20 {
        let data = synthetic(seed);
        for t in &trees {
            let got = fit_gentree(t, &data, &cfg(1), None).unwrap().sse;
            let want = brute_force_sse(t, &data, 1, 100.0);
            assert!(
                (got - want).abs() <= 1e-6 * want.max(1e-12),
                "seed {seed} tree {}: {got} vs {want}",
                t.serialize()
            );
        }
    }
}

#[test]
fn matches_brute_force_on_depth_two() {
    let trees = enumerate_gentrees(&OperatorSet::arithmetic_sqrt(), 2).unwrap();
    for seed in 100..103 {
        let data = synthetic(seed);
        for t in trees.iter().filter(|t| t.leaf_count() <= 3) {
            let got = fit_gentree(t, &data, &cfg(2), None).unwrap().sse;
            let want = brute_force_sse(t, &data, 1, 100.0);
            assert!(got <= want * (1.0 + 1e-6) + 1e-12, "seed {seed} tree {}: {got} vs {want}", t.serialize());
            assert!(
                (got - want).abs() <= 1e-6 * want.max(1e-12),
                "seed {seed} tree {}: {got} vs {want}",
                t.serialize()
            );
        }
    }
}
