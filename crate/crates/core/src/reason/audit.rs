//! Error measures of a candidate formula against data and against the axioms.

use serde::Serialize;
use thiserror::Error;

use super::axioms::AxiomSystem;
use super::solve::{SolveError, Solver};
use crate::data::Dataset;
use crate::expr::{DomainError, Formula};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Relative,
    Absolute,
}

/// l2 and l-infinity aggregates of relative and absolute deviations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ErrorQuad {
    pub rel_l2: f64,
    pub rel_linf: f64,
    pub abs_l2: f64,
    pub abs_linf: f64,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum AuditError {
    #[error("formula undefined at point {point}: {source}")]
    Domain { point: usize, source: DomainError },
    #[error("reference value is zero at point {0}; relative error undefined")]
    ZeroReference(usize),
    #[error("axiom solve failed at {point:?}: {source}")]
    Solve { point: Vec<f64>, source: SolveError },
    #[error("axiom system has no measured variable '{0}' matching the data")]
    Mapping(String),
    #[error("box must give one interval per variable with lo <= hi")]
    BadBox,
}

/// Per-variable closed interval.
pub type Bounds = Vec<(f64, f64)>;

fn quad(f: &[f64], reference: &[f64]) -> Result<ErrorQuad, AuditError> {
    let mut q = ErrorQuad::default();
    for (i, (a, b)) in f.iter().zip(reference).enumerate() {
        if *b == 0.0 {
            return Err(AuditError::ZeroReference(i));
        }
        let abs = (a - b).abs();
        let rel = abs / b.abs();
        q.rel_l2 += rel * rel;
        q.abs_l2 += abs * abs;
        q.rel_linf = q.rel_linf.max(rel);
        q.abs_linf = q.abs_linf.max(abs);
    }
    q.rel_l2 = q.rel_l2.sqrt();
    q.abs_l2 = q.abs_l2.sqrt();
    Ok(q)
}

fn eval_all(f: &Formula, data: &Dataset) -> Result<Vec<f64>, AuditError> {
    data.x
        .iter()
        .enumerate()
        .map(|(i, x)| f.eval(x).map_err(|source| AuditError::Domain { point: i, source }))
        .collect()
}

/// Errors of `f` against the observed targets.
pub fn numerical_errors(f: &Formula, data: &Dataset) -> Result<ErrorQuad, AuditError> {
    quad(&eval_all(f, data)?, &data.y)
}

/// The derivable function on dataset coordinates.
#[derive(Clone, Debug)]
pub struct Oracle {
    solver: Solver,
    columns: Vec<usize>,
}

impl Oracle {
    pub fn new(sys: &AxiomSystem, names: &[String]) -> Result<Self, AuditError> {
        let columns = sys
            .measured()
            .iter()
            .map(|v| names.iter().position(|n| *n == v.name).ok_or_else(|| AuditError::Mapping(v.name.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Oracle { solver: Solver::new(sys), columns })
    }

    /// f_B at a point in dataset column order and units.
    pub fn eval(&mut self, x: &[f64]) -> Result<f64, AuditError> {
        let m: Vec<f64> = self.columns.iter().map(|&c| x[c]).collect();
        self.solver.eval_dataset_point(&m).map_err(|source| AuditError::Solve { point: x.to_vec(), source })
    }
}

/// Errors of `f` against the derivable function at the data points.
pub fn pointwise_reasoning_errors(f: &Formula, data: &Dataset, sys: &AxiomSystem) -> Result<ErrorQuad, AuditError> {
    let mut oracle = Oracle::new(sys, &data.names)?;
    let fb = data.x.iter().map(|x| oracle.eval(x)).collect::<Result<Vec<_>, _>>()?;
    quad(&eval_all(f, data)?, &fb)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub per_dim: usize,
    pub refine_top: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { per_dim: 64, refine_top: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenError {
    pub value: f64,
    pub worst: Vec<f64>,
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if hi <= lo || n < 2 {
        return vec![lo];
    }
    let log = lo > 0.0 && hi / lo > 10.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            if i == n - 1 {
                hi
            } else if log {
                (lo.ln() + t * (hi.ln() - lo.ln())).exp()
            } else {
                lo + t * (hi - lo)
            }
        })
        .collect()
}

fn deviation(f: &Formula, oracle: &mut Oracle, x: &[f64], metric: Metric) -> Result<f64, AuditError> {
    let fb = oracle.eval(x)?;
    let Ok(v) = f.eval(x) else { return Ok(f64::INFINITY) };
    let d = (v - fb).abs();
    Ok(match metric {
        Metric::Absolute => d,
        Metric::Relative if fb == 0.0 => {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
        Metric::Relative => d / fb.abs(),
    })
}

/// Approximate sup of the deviation between `f` and the derivable function over a box.
/// `seeds` are extra points (typically the data) scored alongside the grid; those outside the box are ignored.
pub fn generalization_error(
    f: &Formula,
    sys: &AxiomSystem,
    names: &[String],
    bounds: &Bounds,
    metric: Metric,
    grid: &GridSpec,
    seeds: &[Vec<f64>],
) -> Result<GenError, AuditError> {
    if bounds.len() != names.len() || bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
        return Err(AuditError::BadBox);
    }
    let mut oracle = Oracle::new(sys, names)?;
    let axes: Vec<Vec<f64>> = bounds.iter().map(|(lo, hi)| axis(*lo, *hi, grid.per_dim)).collect();
    let total: usize = axes.iter().map(Vec::len).product();
    let mut idx = vec![0usize; axes.len()];
    let mut top: Vec<(f64, Vec<usize>)> = Vec::new();
    for _ in 0..total {
        let x: Vec<f64> = idx.iter().zip(&axes).map(|(i, a)| a[*i]).collect();
        let e = deviation(f, &mut oracle, &x, metric)?;
        if top.len() < grid.refine_top.max(1) || e > top.last().map(|t| t.0).unwrap_or(f64::NEG_INFINITY) {
            top.push((e, idx.clone()));
            top.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            top.truncate(grid.refine_top.max(1));
        }
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
    let mut best = GenError { value: f64::NEG_INFINITY, worst: Vec::new() };
    for x in seeds {
        if x.len() == bounds.len() && x.iter().zip(bounds).all(|(v, (lo, hi))| lo <= v && v <= hi) {
            let e = deviation(f, &mut oracle, x, metric)?;
            if e > best.value || (e == best.value && *x < best.worst) {
                best = GenError { value: e, worst: x.clone() };
            }
        }
    }
    for (e, cell) in top {
        let x0: Vec<f64> = cell.iter().zip(&axes).map(|(i, a)| a[*i]).collect();
        let (e, x) = if e.is_finite() { refine(f, &mut oracle, metric, bounds, &axes, &cell, x0, e)? } else { (e, x0) };
        if e > best.value || (e == best.value && x < best.worst) {
            best = GenError { value: e, worst: x };
        }
    }
    Ok(best)
}

// Compass search inside the neighbouring grid cells of a starting point.
#[allow(clippy::too_many_arguments)]
fn refine(
    f: &Formula,
    oracle: &mut Oracle,
    metric: Metric,
    bounds: &Bounds,
    axes: &[Vec<f64>],
    cell: &[usize],
    mut x: Vec<f64>,
    mut e: f64,
) -> Result<(f64, Vec<f64>), AuditError> {
    let mut step: Vec<f64> = cell
        .iter()
        .zip(axes)
        .map(|(&i, a)| {
            if a.len() < 2 {
                0.0
            } else {
                let lo = a[i.saturating_sub(1)];
                let hi = a[(i + 1).min(a.len() - 1)];
                (hi - lo) / 2.0
            }
        })
        .collect();
    for _ in 0..200 {
        if step.iter().zip(bounds).all(|(s, (lo, hi))| *s <= 1e-9 * (hi - lo).abs().max(1e-300) || *s == 0.0) {
            break;
        }
        let mut improved = false;
        for d in 0..x.len() {
            if step[d] == 0.0 {
                continue;
            }
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[d] = (y[d] + dir * step[d]).clamp(bounds[d].0, bounds[d].1);
                if y[d] == x[d] {
                    continue;
                }
                let ey = deviation(f, oracle, &y, metric)?;
                if ey > e {
                    e = ey;
                    x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s /= 2.0);
        }
    }
    Ok((e, x))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DomainVerdict {
    pub pass: bool,
    pub error: GenError,
}

/// Passes iff the generalization error over the box is at most `threshold`.
pub fn verify_domain(
    f: &Formula,
    sys: &AxiomSystem,
    names: &[String],
    bounds: &Bounds,
    metric: Metric,
    threshold: f64,
    grid: &GridSpec,
) -> Result<DomainVerdict, AuditError> {
    let error = generalization_error(f, sys, names, bounds, metric, grid, &[])?;
    Ok(DomainVerdict { pass: error.value <= threshold, error })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DepFlag {
    Correct,
    Missing,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dependence {
    pub variable: String,
    pub flag: DepFlag,
    pub extended_error: f64,
}

/// Widens one variable's interval at a time by a factor of ten on each side.
pub fn extend_interval(lo: f64, hi: f64) -> (f64, f64) {
    if lo > 0.0 {
        (lo / 10.0, hi * 10.0)
    } else {
        let span = (hi - lo).max(hi.abs()).max(1.0);
        (lo - 4.5 * span, hi + 4.5 * span)
    }
}

pub fn dependence_analysis(
    f: &Formula,
    sys: &AxiomSystem,
    data: &Dataset,
    metric: Metric,
    grid: &GridSpec,
) -> Result<(f64, Vec<Dependence>), AuditError> {
    let bounds = data.bounding_box();
    let base = generalization_error(f, sys, &data.names, &bounds, metric, grid, &data.x)?.value;
    let cutoff = (2.0 * base).max(0.01);
    let mut out = Vec::new();
    for (j, name) in data.names.iter().enumerate() {
        let mut b = bounds.clone();
        b[j] = extend_interval(b[j].0, b[j].1);
        let e = generalization_error(f, sys, &data.names, &b, metric, grid, &data.x)?.value;
        let flag = if e > cutoff { DepFlag::Missing } else { DepFlag::Correct };
        out.push(Dependence { variable: name.clone(), flag, extended_error: e });
    }
    Ok((base, out))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub point: Vec<f64>,
    pub formula_value: f64,
    pub derived_value: f64,
    pub relative_error: f64,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Searches the box for a point where `f` deviates from the derivable function by more than `tol` (relative).
pub fn counterexample_search(
    f: &Formula,
    sys: &AxiomSystem,
    names: &[String],
    bounds: &Bounds,
    tol: f64,
    budget: usize,
) -> Result<Option<Witness>, AuditError> {
    if bounds.len() != names.len() || bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
        return Err(AuditError::BadBox);
    }
    let mut oracle = Oracle::new(sys, names)?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let samples = budget.max(1) * 3 / 4 + 1;
    let witness = |x: Vec<f64>, oracle: &mut Oracle| -> Result<Option<Witness>, AuditError> {
        let fb = oracle.eval(&x)?;
        let Ok(fv) = f.eval(&x) else { return Ok(None) };
        let rel = if fb == 0.0 { f64::INFINITY } else { (fv - fb).abs() / fb.abs() };
        Ok((rel > tol).then(|| Witness { point: x, formula_value: fv, derived_value: fb, relative_error: rel }))
    };
    for i in 1..=samples as u64 {
        let x: Vec<f64> = bounds
            .iter()
            .enumerate()
            .map(|(d, (lo, hi))| lo + radical_inverse(i, PRIMES[d % PRIMES.len()]) * (hi - lo))
            .collect();
        let e = match oracle.eval(&x) {
            Ok(_) => deviation(f, &mut oracle, &x, Metric::Relative)?,
            Err(_) => continue,
        };
        if e > tol {
            if let Some(w) = witness(x, &mut oracle)? {
                return Ok(Some(w));
            }
            continue;
        }
        if best.as_ref().map(|b| e > b.0).unwrap_or(true) {
            best = Some((e, x));
        }
    }
    // Local ascent from the worst sample with the remaining budget.
    let Some((mut e, mut x)) = best else { return Ok(None) };
    let mut step: Vec<f64> = bounds.iter().map(|(lo, hi)| (hi - lo) / 8.0).collect();
    let mut left = budget.saturating_sub(samples);
    while left > 0 && step.iter().any(|s| *s > 0.0) {
        let mut improved = false;
        for d in 0..x.len() {
            for dir in [1.0, -1.0] {
                if left == 0 {
                    break;
                }
                left -= 1;
                let mut y = x.clone();
                y[d] = (y[d] + dir * step[d]).clamp(bounds[d].0, bounds[d].1);
                let Ok(ey) = deviation(f, &mut oracle, &y, Metric::Relative) else { continue };
                if ey > e {
                    e = ey;
                    x = y;
                    improved = true;
                }
            }
        }
        if e > tol {
            return witness(x, &mut oracle);
        }
        if !improved {
            step.iter_mut().for_each(|s| *s /= 2.0);
            if step.iter().zip(bounds).all(|(s, (lo, hi))| *s < 1e-9 * (hi - lo).abs()) {
                break;
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    const LANG1: &str = include_str!("../../../../data/langmuir1.axioms");
    const REL: &str = include_str!("../../../../data/relativity.axioms");

    fn langmuir_data(f: impl Fn(f64) -> f64) -> Dataset {
        let ps = [0.1, 0.5, 1.0, 2.0, 8.0];
        Dataset::new(
            vec!["p".into()],
            "q".into(),
            ps.iter().map(|p| vec![*p]).collect(),
            ps.iter().map(|p| f(*p)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn quad_by_hand() {
        let q = quad(&[1.0, 3.0], &[2.0, 2.0]).unwrap();
        assert!((q.rel_l2 - (0.5f64).sqrt()).abs() < 1e-15);
        assert_eq!(q.rel_linf, 0.5);
        assert!((q.abs_l2 - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(q.abs_linf, 1.0);
        assert_eq!(quad(&[1.0], &[0.0]), Err(AuditError::ZeroReference(0)));
    }

    #[test]
    fn derivable_function_has_no_reasoning_error() {
        let sys = AxiomSystem::parse(LANG1).unwrap();
        let data = langmuir_data(|p| p / (1.0 + p) * 1.1);
        let f = parse("p/(1+p)", &["p"]).unwrap();
        let b = pointwise_reasoning_errors(&f, &data, &sys).unwrap();
        assert!(b.rel_l2 < 1e-12 && b.abs_linf < 1e-12);
        let e = numerical_errors(&f, &data).unwrap();
        assert!((e.rel_linf - 0.1 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn box_sup_dominates_data_max() {
        let sys = AxiomSystem::parse(LANG1).unwrap();
        let data = langmuir_data(|p| p);
        let f = parse("p/(1.2+p)", &["p"]).unwrap();
        let b = pointwise_reasoning_errors(&f, &data, &sys).unwrap();
        let g = generalization_error(
            &f,
            &sys,
            &data.names,
            &data.bounding_box(),
            Metric::Relative,
            &GridSpec::default(),
            &[],
        )
        .unwrap();
        assert!(g.value >= b.rel_linf - 1e-6);
        assert!(g.value <= 0.2 / 1.2 + 1e-9);
    }

    #[test]
    fn time_dilation_domain() {
        let sys = AxiomSystem::parse(REL).unwrap();
        let names = vec!["v".to_string()];
        let f = parse("-0.00563*v^2", &["v"]).unwrap();
        let grid = GridSpec::default();
        assert!(verify_domain(&f, &sys, &names, &vec![(37.0, 115.0)], Metric::Absolute, 1.0, &grid).unwrap().pass);
        assert!(!verify_domain(&f, &sys, &names, &vec![(37.0, 200.0)], Metric::Absolute, 1.0, &grid).unwrap().pass);
    }

    #[test]
    fn counterexamples() {
        let sys = AxiomSystem::parse(LANG1).unwrap();
        let names = vec!["p".to_string()];
        let exact = parse("p/(1+p)", &["p"]).unwrap();
        assert_eq!(counterexample_search(&exact, &sys, &names, &vec![(0.01, 100.0)], 1e-6, 400).unwrap(), None);
        let wrong = parse("p/(1+p) + 0.001*p^2", &["p"]).unwrap();
        let w = counterexample_search(&wrong, &sys, &names, &vec![(0.01, 100.0)], 0.05, 400).unwrap().unwrap();
        assert!(w.relative_error > 0.05);
        assert!((w.derived_value - w.point[0] / (1.0 + w.point[0])).abs() < 1e-12);
    }

    #[test]
    fn extension_rule() {
        assert_eq!(extend_interval(1.0, 5.0), (0.1, 50.0));
        let (lo, hi) = extend_interval(-1.0, 1.0);
        assert!(lo < -1.0 && hi > 1.0);
    }

    #[test]
    fn mapping_and_box_errors() {
        let sys = AxiomSystem::parse(LANG1).unwrap();
        assert!(matches!(Oracle::new(&sys, &["x".to_string()]), Err(AuditError::Mapping(_))));
        let f = parse("p", &["p"]).unwrap();
        let r = generalization_error(
            &f,
            &sys,
            &["p".to_string()],
            &vec![(2.0, 1.0)],
            Metric::Relative,
            &GridSpec::default(),
            &[],
        );
        assert_eq!(r, Err(AuditError::BadBox));
    }
}
