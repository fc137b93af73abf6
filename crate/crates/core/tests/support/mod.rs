//! Reference computations written independently of the library's fitting and solving code.
#![allow(dead_code)]

use std::path::PathBuf;

use axiomfit_core::{Coeff, Dataset, Formula, GenTree, LMonomial};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn load(name: &str) -> Dataset {
    Dataset::load(&data_dir().join(name), None).unwrap()
}

pub fn read(name: &str) -> String {
    std::fs::read_to_string(data_dir().join(name)).unwrap()
}

/// Kepler's third law in dataset units.
pub fn kepler_period(m1: f64, m2: f64, d: f64, m2_unit: f64, p_unit: f64) -> f64 {
    let g = 6.674e-11;
    let (m1, m2, d) = (m1 * 1.9885e30, m2 * m2_unit, d * 1.496e11);
    2.0 * std::f64::consts::PI * (d.powi(3) / (g * (m1 + m2))).sqrt() / p_unit
}

/// Relative frequency shift of a moving clock, scaled by 1e15.
pub fn time_dilation(v: f64) -> f64 {
    let x = v * v / 9e16;
    -1e15 * x / (1.0 + (1.0 - x).sqrt())
}

fn sse_of(f: &Formula, data: &Dataset) -> f64 {
    data.x
        .iter()
        .zip(&data.y)
        .map(|(x, y)| match f.eval(x) {
            Ok(v) if v.is_finite() => (v - y) * (v - y),
            _ => f64::INFINITY,
        })
        .sum()
}

// Best sse over h in [-bound, bound] for a formula with one free slot: dense scan, then golden-section refinement.
fn best_over_h(build: impl Fn(f64) -> Formula, data: &Dataset, bound: f64) -> f64 {
    let n = 4001;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..n {
        let h = -bound + 2.0 * bound * i as f64 / (n - 1) as f64;
        let s = sse_of(&build(h), data);
        if s < best.0 {
            best = (s, h);
        }
    }
    let step = 2.0 * bound / (n - 1) as f64;
    let (mut a, mut b) = ((best.1 - step).max(-bound), (best.1 + step).min(bound));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if sse_of(&build(c), data) < sse_of(&build(d), data) {
            b = d;
        } else {
            a = c;
        }
    }
    best.0.min(sse_of(&build((a + b) / 2.0), data))
}

/// Exhaustive minimum sse of a single-variable gentree with exponents in [-delta, delta] and at most one free constant.
pub fn brute_force_sse(tree: &GenTree, data: &Dataset, delta: i32, bound: f64) -> f64 {
    let leaves = tree.leaf_count();
    let slots = tree.sign_slots();
    let choices: Vec<i32> = (-delta..=delta).collect();
    let mut best = f64::INFINITY;
    let mut powers = vec![0usize; leaves];
    loop {
        for signs in 0..(1usize << slots) {
            let minus: Vec<bool> = (0..slots).map(|i| signs >> i & 1 == 1).collect();
            let fixed = |free: Option<(usize, f64)>| -> Formula {
                let ls: Vec<LMonomial> = (0..leaves)
                    .map(|i| {
                        let c = match free {
                            Some((j, h)) if j == i => Coeff::Free(h),
                            _ => Coeff::One,
                        };
                        LMonomial::new(c, vec![choices[powers[i]]])
                    })
                    .collect();
                tree.instantiate(&ls, &minus)
            };
            best = best.min(sse_of(&fixed(None), data));
            for j in 0..leaves {
                best = best.min(best_over_h(|h| fixed(Some((j, h))), data, bound));
            }
        }
        let mut i = 0;
        loop {
            if i == leaves {
                return best;
            }
            powers[i] += 1;
            if powers[i] < choices.len() {
                break;
            }
            powers[i] = 0;
            i += 1;
        }
    }
}

/// Two-term power law with small uniform noise on eight points of [0.5, 3].
pub fn synthetic(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    let (p, q) = (rng.gen_range(-2..=2), rng.gen_range(-2..=2));
    let xs: Vec<f64> = (0..8).map(|i| 0.5 + 2.5 * i as f64 / 7.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x: &f64| a * x.powi(p) + b * x.powi(q) + rng.gen_range(-0.05..0.05)).collect();
    Dataset::new(vec!["x".into()], "y".into(), xs.iter().map(|x| vec![*x]).collect(), ys).unwrap()
}
