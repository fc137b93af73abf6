//! Numeric evaluation of the derivable function: solve the axiom equations for the target.

use crate::dd::Dd;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::axioms::{AxiomSystem, Role, Sign};
use crate::expr::{BinOp, Coeff, Formula, Real, UnOp};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("measured variable '{0}' has no value")]
    MissingMeasured(String),
    #[error("measured variable '{0}' violates its sign constraint")]
    SignViolation(String),
    #[error("axiom solve did not converge (best max residual {residual:e})")]
    NoConvergence { residual: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    /// Latent values followed by the target, in declaration order.
    pub values: Vec<f64>,
    pub target: f64,
    /// Largest relative equation residual, evaluated in double-double.
    pub residual: f64,
}

const F64_ITERS: usize = 50;
const DD_ITERS: usize = 30;
const TOL: f64 = 1e-10;

/// Reusable solver for one axiom system; keeps the last solution as a warm start.
#[derive(Clone, Debug)]
pub struct Solver {
    sys: AxiomSystem,
    consts: Vec<f64>,
    measured_pos: Vec<usize>,
    unknown_pos: Vec<usize>,
    log_param: Vec<bool>,
    warm: Option<Vec<f64>>,
    nsym: usize,
    // Symbol position defined by each equation of the form `unknown = expr`.
    defines: Vec<Option<usize>>,
}

#[derive(Clone, Copy)]
enum Form<'a, R> {
    // ln(l/r) where defined; relative differences saturate far from a solution.
    Log,
    Relative,
    // Relative to fixed denominators, so the residual is affine in each side.
    Frozen(&'a [R]),
}

// Difference step scale for a free unknown; an exact zero gets a unit step.
fn free_scale(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.abs()
    }
}

// First-order size of the rounding noise in `f`, relative to unit roundoff: additive terms contribute their
// own magnitudes, and symbols carry the magnitudes of the sums that define them.
fn magnitude<R: Real>(f: &Formula, sym: &[R], mag: &[R]) -> Option<R> {
    Some(match f {
        Formula::Leaf(m) => {
            let mut v = R::from_f64(m.coeff.value().abs());
            for (i, a) in m.powers.iter().enumerate() {
                if *a > 0 {
                    v = v * mag[i].powi(*a);
                } else if *a < 0 {
                    v = v * sym[i].abs().powi(*a);
                }
            }
            v
        }
        Formula::Binary(BinOp::Add | BinOp::Sub, a, b) => magnitude(a, sym, mag)? + magnitude(b, sym, mag)?,
        Formula::Binary(BinOp::Mul, a, b) => magnitude(a, sym, mag)? * magnitude(b, sym, mag)?,
        Formula::Binary(BinOp::Div, a, b) => magnitude(a, sym, mag)? / b.eval_real(sym).ok()?.abs(),
        Formula::Unary(UnOp::Sqrt, a) => magnitude(a, sym, mag)?.sqrt(),
        Formula::Unary(UnOp::Powi(k), a) if *k > 0 => magnitude(a, sym, mag)?.powi(*k),
        _ => f.eval_real(sym).ok()?.abs(),
    })
}

fn nonzero<R: Real>(s: R) -> R {
    if s == R::from_f64(0.0) {
        R::from_f64(1.0)
    } else {
        s
    }
}

fn residual<R: Real>((l, r, scale): (R, R, R), form: Form<R>, i: usize) -> R {
    let zero = R::from_f64(0.0);
    match form {
        Form::Log if l != zero && r != zero && (l > zero) == (r > zero) => (l / r).ln(),
        Form::Frozen(s) => (l - r) / s[i],
        _ => (l - r) / scale,
    }
}

// Row and column equilibration before LU; graded Jacobians arise from cancelling equations.
fn equilibrated_solve(mut jac: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let (m, n) = jac.shape();
    let mut b = rhs.clone();
    for i in 0..m {
        let s = jac.row(i).amax();
        if s > 0.0 {
            jac.row_mut(i).scale_mut(1.0 / s);
            b[i] /= s;
        }
    }
    let cs: Vec<f64> = (0..n).map(|j| jac.column(j).amax()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
    for (j, s) in cs.iter().enumerate() {
        jac.column_mut(j).scale_mut(1.0 / s);
    }
    let y =
        if m == n { jac.clone().lu().solve(&b) } else { None }.or_else(|| jac.svd(true, true).solve(&b, 1e-15).ok())?;
    Some(DVector::from_iterator(n, y.iter().zip(&cs).map(|(y, s)| y / s)))
}

impl Solver {
    pub fn new(sys: &AxiomSystem) -> Self {
        let consts: Vec<f64> = sys.constants.iter().map(|(_, v)| *v).collect();
        let nc = consts.len();
        let pos = |name: &str| nc + sys.vars.iter().position(|v| v.name == name).unwrap_or(0);
        let measured_pos = sys.measured().iter().map(|v| pos(&v.name)).collect();
        let unknowns = sys.unknowns();
        let unknown_pos: Vec<usize> = unknowns.iter().map(|v| pos(&v.name)).collect();
        let log_param = unknowns.iter().map(|v| v.sign != Sign::Free).collect();
        let defines = sys
            .equations
            .iter()
            .map(|eq| match &eq.lhs {
                Formula::Leaf(m) if m.coeff == Coeff::One && m.nonzero_powers() == 1 => {
                    let p = m.powers.iter().position(|a| *a == 1)?;
                    unknown_pos.contains(&p).then_some(p)
                }
                _ => None,
            })
            .collect();
        Solver {
            sys: sys.clone(),
            consts,
            measured_pos,
            unknown_pos,
            log_param,
            warm: None,
            nsym: nc + sys.vars.len(),
            defines,
        }
    }

    pub fn system(&self) -> &AxiomSystem {
        &self.sys
    }

    pub fn clear_warm_start(&mut self) {
        self.warm = None;
    }

    // Equations of the form `unknown = expr` assign their left side from the current values, in order,
    // so chains of definitions start out consistent.
    fn substitute(&self, measured: &[f64], u: &mut [f64]) {
        for _ in 0..2 {
            for (eq, d) in self.sys.equations.iter().zip(&self.defines) {
                let Some(p) = d else { continue };
                let j = self.unknown_pos.iter().position(|q| q == p).unwrap_or(0);
                let Ok(x) = eq.rhs.eval(&self.symbols(measured, &self.values_of(u))) else { continue };
                if self.log_param[j] {
                    if x > 0.0 {
                        u[j] = x.ln();
                    }
                } else {
                    u[j] = x;
                }
            }
        }
    }

    fn values_of<R: Real>(&self, u: &[R]) -> Vec<R> {
        u.iter().zip(&self.log_param).map(|(u, l)| if *l { u.exp() } else { *u }).collect()
    }

    fn sides<R: Real>(&self, measured: &[f64], u: &[R], form: Form<R>) -> Option<Vec<(R, R, R)>> {
        self.sides_at(measured, &self.values_of(u), !matches!(form, Form::Log))
    }

    fn symbols<R: Real>(&self, measured: &[f64], values: &[R]) -> Vec<R> {
        let mut sym: Vec<R> = self.consts.iter().map(|c| R::from_f64(*c)).collect();
        sym.resize(self.nsym, R::from_f64(0.0));
        for (p, v) in self.measured_pos.iter().zip(measured) {
            sym[*p] = R::from_f64(*v);
        }
        for (p, v) in self.unknown_pos.iter().zip(values) {
            sym[*p] = *v;
        }
        sym
    }

    // Left side, right side and residual scale of every equation; without `propagate` the scale is the
    // larger side.
    fn sides_at<R: Real>(&self, measured: &[f64], values: &[R], propagate: bool) -> Option<Vec<(R, R, R)>> {
        let sym = self.symbols(measured, values);
        if !propagate {
            return self
                .sys
                .equations
                .iter()
                .map(|eq| {
                    let l = eq.lhs.eval_real(&sym).ok()?;
                    let r = eq.rhs.eval_real(&sym).ok()?;
                    let scale = nonzero(if l.abs() > r.abs() { l.abs() } else { r.abs() });
                    (l.is_finite() && r.is_finite()).then_some((l, r, scale))
                })
                .collect();
        }
        let mut mag: Vec<R> = sym.iter().map(|x| x.abs()).collect();
        for (eq, d) in self.sys.equations.iter().zip(&self.defines) {
            if let Some(p) = d {
                let m = magnitude(&eq.rhs, &sym, &mag)?;
                if m > mag[*p] {
                    mag[*p] = m;
                }
            }
        }
        self.sys
            .equations
            .iter()
            .map(|eq| {
                let l = eq.lhs.eval_real(&sym).ok()?;
                let r = eq.rhs.eval_real(&sym).ok()?;
                let a = magnitude(&eq.lhs, &sym, &mag)?;
                let b = magnitude(&eq.rhs, &sym, &mag)?;
                let scale = nonzero(if a > b { a } else { b });
                (l.is_finite() && r.is_finite() && scale.is_finite()).then_some((l, r, scale))
            })
            .collect()
    }

    // Residuals at parameters `u` (log scale for sign-constrained unknowns).
    fn resid<R: Real>(&self, measured: &[f64], u: &[R], out: &mut [R], form: Form<R>) -> bool {
        let Some(sides) = self.sides(measured, u, form) else { return false };
        for (i, side) in sides.into_iter().enumerate() {
            out[i] = residual(side, form, i);
        }
        true
    }

    fn scales<R: Real>(&self, measured: &[f64], values: &[R]) -> Option<Vec<R>> {
        Some(self.sides_at(measured, values, true)?.into_iter().map(|(_, _, s)| s).collect())
    }

    fn jacobian<R: Real>(&self, measured: &[f64], u: &[R], r: &[R], form: Form<R>) -> Option<DMatrix<f64>> {
        let m = r.len();
        let mut rp = vec![R::from_f64(0.0); m];
        let mut jac = DMatrix::zeros(m, u.len());
        for j in 0..u.len() {
            let h = if self.log_param[j] { 1e-7 } else { 1e-7 * free_scale(u[j].to_f64()) };
            let mut up = u.to_vec();
            up[j] = up[j] + R::from_f64(h);
            let sign = if self.resid(measured, &up, &mut rp, form) {
                1.0
            } else {
                up[j] = u[j] - R::from_f64(h);
                if !self.resid(measured, &up, &mut rp, form) {
                    return None;
                }
                -1.0
            };
            for i in 0..m {
                jac[(i, j)] = sign * (rp[i] - r[i]).to_f64() / h;
            }
        }
        Some(jac)
    }

    // Levenberg-Marquardt in f64; returns the end point and its Jacobian.
    fn lm_f64(&self, measured: &[f64], mut u: Vec<f64>) -> Option<(Vec<f64>, DMatrix<f64>)> {
        let m = self.sys.equations.len();
        let n = u.len();
        let mut r = vec![0.0; m];
        let mut rp = vec![0.0; m];
        if !self.resid(measured, &u, &mut r, Form::Log) {
            return None;
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let mut cur = norm(&r);
        let mut jac = self.jacobian(measured, &u, &r, Form::Log)?;
        let mut lambda = 1e-4;
        for _ in 0..F64_ITERS {
            if cur < 1e-26 {
                break;
            }
            let jt = jac.transpose();
            let g = &jt * DVector::from_column_slice(&r);
            let a = &jt * &jac;
            let mut accepted = false;
            while lambda < 1e12 {
                let mut damped = a.clone();
                for i in 0..n {
                    damped[(i, i)] += lambda * a[(i, i)].max(1e-12);
                }
                let Some(step) = damped.lu().solve(&(-&g)) else {
                    lambda *= 10.0;
                    continue;
                };
                let un: Vec<f64> = u.iter().zip(step.iter()).map(|(a, d)| a + d.clamp(-50.0, 50.0)).collect();
                if self.resid(measured, &un, &mut rp, Form::Log) {
                    let nn = norm(&rp);
                    if nn < cur {
                        u = un;
                        std::mem::swap(&mut r, &mut rp);
                        cur = nn;
                        lambda = (lambda * 0.1).max(1e-12);
                        accepted = true;
                        break;
                    }
                }
                lambda *= 10.0;
            }
            if !accepted {
                break;
            }
            jac = self.jacobian(measured, &u, &r, Form::Log)?;
        }
        Some((u, jac))
    }

    fn max_abs(v: &[Dd]) -> f64 {
        v.iter().map(|x| Real::to_f64(*x).abs()).fold(0.0, f64::max)
    }

    fn resid_dd(&self, measured: &[f64], v: &[Dd], out: &mut [Dd], scales: Option<&[Dd]>) -> bool {
        let Some(sides) = self.sides_at(measured, v, scales.is_none()) else { return false };
        for (i, side) in sides.into_iter().enumerate() {
            out[i] = match scales {
                Some(s) => residual(side, Form::Frozen(s), i),
                None => residual(side, Form::Relative, i),
            };
        }
        true
    }

    // Relative steps for sign-constrained unknowns, absolute for free ones.
    fn apply(&self, v: &[Dd], step: &[f64], alpha: f64) -> Vec<Dd> {
        v.iter()
            .zip(step)
            .zip(&self.log_param)
            .map(|((x, d), lp)| {
                let d = alpha * d;
                if *lp {
                    *x + *x * Dd::from(d.clamp(-0.5, 1.0))
                } else {
                    *x + Dd::from(d)
                }
            })
            .collect()
    }

    fn jacobian_dd(&self, measured: &[f64], v: &[Dd], scales: &[Dd], r: &[Dd]) -> Option<DMatrix<f64>> {
        let m = r.len();
        let mut rp = vec![Dd::from(0.0); m];
        let mut jac = DMatrix::zeros(m, v.len());
        for j in 0..v.len() {
            let mut step = vec![0.0; v.len()];
            let h = if self.log_param[j] { 1e-9 } else { 1e-9 * free_scale(Real::to_f64(v[j])) };
            step[j] = h;
            if !self.resid_dd(measured, &self.apply(v, &step, 1.0), &mut rp, Some(scales)) {
                return None;
            }
            for i in 0..m {
                jac[(i, j)] = Real::to_f64(rp[i] - r[i]) / h;
            }
        }
        Some(jac)
    }

    // Damped Newton in double-double on the values; chord steps with the f64 Jacobian come first.
    fn polish_dd(&self, measured: &[f64], mut v: Vec<Dd>, chord: &DMatrix<f64>) -> Option<(Vec<Dd>, f64)> {
        let m = self.sys.equations.len();
        let zero = Dd::from(0.0);
        let mut r = vec![zero; m];
        let mut rp = vec![zero; m];
        if !self.resid_dd(measured, &v, &mut r, None) {
            return None;
        }
        let mut best = Self::max_abs(&r);
        let chord_svd = chord.clone().svd(true, true);
        let mut chord_ok = true;
        for _ in 0..DD_ITERS {
            if best < 1e-30 {
                break;
            }
            let rhs = DVector::from_iterator(m, r.iter().map(|x| -Real::to_f64(*x)));
            let step = if chord_ok {
                chord_svd.solve(&rhs, 1e-14).ok()
            } else {
                let sc = self.scales(measured, &v)?;
                let mut rf = vec![zero; m];
                self.resid_dd(measured, &v, &mut rf, Some(&sc));
                let jac = self.jacobian_dd(measured, &v, &sc, &rf)?;
                equilibrated_solve(jac, &rhs)
            };
            let Some(step) = step else { break };
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let vn = self.apply(&v, step.as_slice(), alpha);
                if self.resid_dd(measured, &vn, &mut rp, None) {
                    let nb = Self::max_abs(&rp);
                    // Chord steps must contract quickly to be worth keeping.
                    let enough = if chord_ok { nb < best * 1e-2 } else { nb < best };
                    if enough {
                        v = vn;
                        std::mem::swap(&mut r, &mut rp);
                        best = nb;
                        accepted = true;
                        break;
                    }
                }
                if chord_ok {
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                if chord_ok {
                    chord_ok = false;
                    continue;
                }
                break;
            }
        }
        Some((v, best))
    }

    /// Solves for the unknowns given measured values (SI, in declaration order).
    pub fn solve(&mut self, measured: &[f64]) -> Result<Solution, SolveError> {
        for (v, x) in self.sys.measured().iter().zip(measured) {
            let bad = match v.sign {
                Sign::Positive => !(*x > 0.0),
                Sign::NonNegative => !(*x >= 0.0),
                Sign::Free => !x.is_finite(),
            };
            if bad {
                return Err(SolveError::SignViolation(v.name.clone()));
            }
        }
        let n = self.unknown_pos.len();
        let mut starts: Vec<Vec<f64>> = Vec::new();
        if let Some(w) = &self.warm {
            starts.push(w.clone());
        }
        for s in [0.0f64, 3.0, -3.0, 10.0, -10.0, 25.0] {
            starts.push((0..n).map(|j| if self.log_param[j] { s } else { s.signum() * s.abs().exp() }).collect());
        }
        let mut best_res = f64::INFINITY;
        for mut u0 in starts {
            self.substitute(measured, &mut u0);
            let Some((u, jac)) = self.lm_f64(measured, u0) else { continue };
            let vd: Vec<Dd> = self.values_of(&u).into_iter().map(Dd::from).collect();
            let Some((v, res)) = self.polish_dd(measured, vd, &jac) else { continue };
            if res < TOL {
                let ok = self
                    .sys
                    .unknowns()
                    .iter()
                    .zip(&v)
                    .all(|(d, x)| d.sign != Sign::NonNegative || Real::to_f64(*x) >= 0.0);
                if ok {
                    self.warm = Some(
                        v.iter()
                            .zip(&self.log_param)
                            .map(|(x, l)| if *l { Real::to_f64(*x).ln() } else { Real::to_f64(*x) })
                            .collect(),
                    );
                    let values: Vec<f64> = v.iter().map(|x| Real::to_f64(*x)).collect();
                    let target = values[n - 1];
                    return Ok(Solution { values, target, residual: res });
                }
            }
            best_res = best_res.min(res);
        }
        self.warm = None;
        Err(SolveError::NoConvergence { residual: best_res })
    }

    /// Target in dataset units at a point given in dataset units (normalization applied both ways).
    pub fn eval_dataset_point(&mut self, x: &[f64]) -> Result<f64, SolveError> {
        let si: Vec<f64> = self.sys.measured().iter().zip(x).map(|(v, x)| x * self.sys.divisor(&v.name)).collect();
        let sol = self.solve(&si)?;
        Ok(sol.target / self.sys.divisor(&self.sys.target().name))
    }
}

/// Solves the axioms at one point given by name (SI units) and returns the target.
pub fn solve_axioms(sys: &AxiomSystem, measured: &[(&str, f64)]) -> Result<f64, SolveError> {
    let mut vals = Vec::new();
    for v in sys.vars.iter().filter(|v| v.role == Role::Measured) {
        let x =
            measured.iter().find(|(n, _)| *n == v.name).ok_or_else(|| SolveError::MissingMeasured(v.name.clone()))?;
        vals.push(x.1);
    }
    Solver::new(sys).solve(&vals).map(|s| s.target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(text: &str) -> AxiomSystem {
        AxiomSystem::parse(text).unwrap()
    }

    const KEPLER: &str = include_str!("../../../../data/kepler.axioms");
    const REL: &str = include_str!("../../../../data/relativity.axioms");
    const NEWT: &str = include_str!("../../../../data/relativity_newtonian.axioms");
    const LANG1: &str = include_str!("../../../../data/langmuir1.axioms");
    const LANG2: &str = include_str!("../../../../data/langmuir2.axioms");

    fn kepler_closed(m1: f64, m2: f64, d: f64) -> f64 {
        2.0 * std::f64::consts::PI * (d.powi(3) / (6.674e-11 * (m1 + m2))).sqrt()
    }

    #[test]
    fn kepler_matches_closed_form() {
        let s = sys(KEPLER);
        for (m1, m2, d) in [(1.9885e30, 5.972e24, 1.496e11), (1.9885e30, 1.898e27, 7.8e11), (2.6e30, 2.8e30, 1.9e13)] {
            let p = solve_axioms(&s, &[("m1", m1), ("m2", m2), ("d", d)]).unwrap();
            let want = kepler_closed(m1, m2, d);
            assert!(((p - want) / want).abs() < 1e-8, "{p} vs {want}");
        }
    }

    #[test]
    fn solar_normalization_round_trip() {
        let mut s = Solver::new(&sys(include_str!("../../../../data/kepler_solar.axioms")));
        let p = s.eval_dataset_point(&[1.0, 1.0, 1.0]).unwrap();
        let want = kepler_closed(1.9885e30, 5.972e24, 1.496e11) / 86_400_000.0;
        assert!(((p - want) / want).abs() < 1e-8);
        assert!((p - 0.3652).abs() < 2e-3);
    }

    #[test]
    fn relativity_resolves_tiny_shift() {
        let mut s = Solver::new(&sys(REL));
        for v in [1.0, 37.0, 115.0, 1e4] {
            let r = s.eval_dataset_point(&[v]).unwrap();
            let x: f64 = v * v / 9e16;
            let want = -1e15 * x / (1.0 + (1.0 - x).sqrt());
            assert!(((r - want) / want).abs() < 1e-8, "v={v}: {r} vs {want}");
        }
    }

    #[test]
    fn newtonian_clock_has_no_shift() {
        let mut s = Solver::new(&sys(NEWT));
        for v in [0.5, 10.0, 300.0] {
            assert!(s.eval_dataset_point(&[v]).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn langmuir_isotherms() {
        let one = solve_axioms(&sys(LANG1), &[("p", 1.0)]).unwrap();
        assert!((one - 0.5).abs() < 1e-14);
        let s2 = sys(LANG2);
        for p in [0.01, 1.0, 50.0] {
            let q = solve_axioms(&s2, &[("p", p)]).unwrap();
            let want = p / (1.0 + p) + 2.0 * 10.0 * p / (1.0 + 10.0 * p);
            assert!(((q - want) / want).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_is_reported_below_tolerance() {
        let mut s = Solver::new(&sys(KEPLER));
        let sol = s.solve(&[2e30, 6e24, 1.5e11]).unwrap();
        assert!(sol.residual < TOL);
        assert!(sol.values.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn bad_inputs() {
        let s = sys(KEPLER);
        assert_eq!(solve_axioms(&s, &[("m1", 1.0), ("m2", 1.0)]), Err(SolveError::MissingMeasured("d".into())));
        assert_eq!(
            solve_axioms(&s, &[("m1", -1.0), ("m2", 1.0), ("d", 1.0)]),
            Err(SolveError::SignViolation("m1".into()))
        );
        let contradiction = sys("var x >0 measured\nvar y >0 target\neq y = x\neq y = x + 1\n");
        assert!(matches!(solve_axioms(&contradiction, &[("x", 1.0)]), Err(SolveError::NoConvergence { .. })));
    }
}
