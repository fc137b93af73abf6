//! Adsorption-specific audits: template matching against the one- and two-site isotherms and thermodynamic checks.

use serde::Serialize;

use crate::expr::Formula;
use crate::fit::solve_small;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// q = S0 K p / (1 + K p)
    OneSite,
    /// q = sum over two sites of q_i K_i p / (1 + K_i p)
    TwoSite,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TemplateMatch {
    pub family: Family,
    /// (S0, K) or (q1, K1, q2, K2).
    pub params: Vec<f64>,
    pub sup_residual: f64,
    pub consistent: bool,
}

/// Log-spaced positive pressures.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1).max(1) as f64).exp()).collect()
}

fn family_value(family: Family, params: &[f64], p: f64) -> f64 {
    match family {
        Family::OneSite => params[0] * params[1] * p / (1.0 + params[1] * p),
        Family::TwoSite => {
            params[0] * params[1] * p / (1.0 + params[1] * p) + params[2] * params[3] * p / (1.0 + params[3] * p)
        }
    }
}

fn sup_rel(family: Family, params: &[f64], grid: &[f64], target: &[f64]) -> f64 {
    grid.iter().zip(target).map(|(p, t)| ((family_value(family, params, *p) - t) / t).abs()).fold(0.0, |a: f64, b| {
        if b.is_nan() {
            f64::INFINITY
        } else {
            a.max(b)
        }
    })
}

fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let k = rows.first()?.len();
    let mut ata = vec![vec![0.0; k]; k];
    let mut atb = vec![0.0; k];
    for (r, b) in rows.iter().zip(rhs) {
        for i in 0..k {
            atb[i] += r[i] * b;
            for j in 0..k {
                ata[i][j] += r[i] * r[j];
            }
        }
    }
    solve_small(ata, atb)
}

// Levenberg-Marquardt on log-parameters, minimizing squared relative residuals.
fn polish(family: Family, mut params: Vec<f64>, grid: &[f64], target: &[f64]) -> Vec<f64> {
    if params.iter().any(|v| !(*v > 0.0)) {
        return params;
    }
    let k = params.len();
    let resid = |ps: &[f64]| -> Vec<f64> {
        grid.iter().zip(target).map(|(p, t)| family_value(family, ps, *p) / t - 1.0).collect()
    };
    let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut r = resid(&params);
    let mut cur = norm(&r);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        if cur < 1e-30 {
            break;
        }
        let mut jac = vec![vec![0.0; grid.len()]; k];
        for c in 0..k {
            let mut pp = params.clone();
            pp[c] *= 1.0 + 1e-7;
            let rp = resid(&pp);
            for i in 0..grid.len() {
                jac[c][i] = (rp[i] - r[i]) / 1e-7;
            }
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let mut a = vec![vec![0.0; k]; k];
            let mut g = vec![0.0; k];
            for i in 0..k {
                for j in 0..k {
                    a[i][j] = (0..grid.len()).map(|t| jac[i][t] * jac[j][t]).sum();
                }
                a[i][i] *= 1.0 + lambda;
                g[i] = -(0..grid.len()).map(|t| jac[i][t] * r[t]).sum::<f64>();
            }
            if let Some(d) = solve_small(a, g) {
                let np: Vec<f64> = params.iter().zip(&d).map(|(p, d)| p * d.clamp(-5.0, 5.0).exp()).collect();
                let nr = resid(&np);
                let nn = norm(&nr);
                if nn < cur {
                    params = np;
                    r = nr;
                    let gain = cur - nn;
                    cur = nn;
                    lambda = (lambda / 4.0).max(1e-15);
                    accepted = gain > 1e-16 * cur;
                    break;
                }
            }
            lambda *= 8.0;
        }
        if !accepted {
            break;
        }
    }
    params
}

/// Fits the family to `f` on `grid` and declares consistency when the sup relative residual is below 1e-7
/// with every parameter positive.
pub fn template_match(f: &Formula, family: Family, grid: &[f64]) -> TemplateMatch {
    let fail = |params: Vec<f64>| TemplateMatch { family, params, sup_residual: f64::INFINITY, consistent: false };
    let mut target = Vec::with_capacity(grid.len());
    for p in grid {
        match f.eval(&[*p]) {
            Ok(v) if v > 0.0 && v.is_finite() => target.push(v),
            _ => return fail(Vec::new()),
        }
    }
    let initial = match family {
        Family::OneSite => {
            // 1/q = (1/(S0 K)) (1/p) + 1/S0, weighted to relative error
            let rows: Vec<Vec<f64>> = grid.iter().zip(&target).map(|(p, q)| vec![q / p, *q]).collect();
            let rhs = vec![1.0; grid.len()];
            let Some(c) = least_squares(&rows, &rhs) else { return fail(Vec::new()) };
            let s0 = 1.0 / c[1];
            vec![s0, c[1] / c[0]]
        }
        Family::TwoSite => {
            // q (1 + a p + b p^2) = A p + B p^2, each row divided by q
            let rows: Vec<Vec<f64>> =
                grid.iter().zip(&target).map(|(p, q)| vec![p / q, p * p / q, -p, -p * p]).collect();
            let rhs = vec![1.0; grid.len()];
            let Some(c) = least_squares(&rows, &rhs) else { return fail(Vec::new()) };
            let (big_a, big_b, a, b) = (c[0], c[1], c[2], c[3]);
            let disc = a * a - 4.0 * b;
            if !(disc >= 0.0) || !(b > 0.0) {
                return fail(vec![big_a, big_b, a, b]);
            }
            let k1 = (a + disc.sqrt()) / 2.0;
            let k2 = b / k1;
            // A = q1 K1 + q2 K2, B = K1 K2 (q1 + q2)
            let total = big_b / b;
            if (k1 - k2).abs() <= 1e-12 * k1 {
                vec![total / 2.0, k1, total / 2.0, k2]
            } else {
                let q1 = (big_a - total * k2) / (k1 - k2);
                vec![q1, k1, total - q1, k2]
            }
        }
    };
    let params = polish(family, initial, grid, &target);
    let sup = sup_rel(family, &params, grid, &target);
    let positive = params.iter().all(|v| *v > 0.0);
    TemplateMatch { family, consistent: positive && sup < 1e-7, sup_residual: sup, params }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThermoReport {
    pub satisfied: usize,
    /// Verdicts for the five constraints, in order.
    pub verdicts: [bool; 5],
}

fn at(f: &Formula, p: f64) -> Option<f64> {
    f.eval(&[p]).ok().filter(|v| v.is_finite())
}

/// Five limiting and monotonicity constraints on a loading curve q = f(p).
pub fn thermo_check(f: &Formula) -> ThermoReport {
    let grid = log_grid(1e-6, 1e6, 121);
    let c1 = at(f, 1e-9).map(|v| v.abs() < 1e-6).unwrap_or(false);
    let c2 = grid.iter().all(|p| at(f, *p).map(|v| v > 0.0).unwrap_or(false));
    let c3 = grid.iter().all(|p| {
        let h = 1e-6 * p;
        match (at(f, p + h), at(f, p - h)) {
            (Some(a), Some(b)) => (a - b) / (2.0 * h) >= -1e-8,
            _ => false,
        }
    });
    let slope = |p: f64, h: f64| Some((at(f, p + h)? - at(f, p)?) / h).filter(|s| s.is_finite());
    let c4 = match (slope(1e-9, 1e-12), slope(1e-6, 1e-9)) {
        (Some(a), Some(b)) => a > 0.0 && b > 0.0 && (a - b).abs() <= 0.01 * a.max(b),
        _ => false,
    };
    let tail: Option<Vec<f64>> = [1e6, 1e8, 1e10].iter().map(|p| at(f, *p)).collect();
    let c5 = match tail {
        Some(v) if v.iter().all(|x| *x > 0.0) => {
            let hi = v.iter().copied().fold(f64::MIN, f64::max);
            let lo = v.iter().copied().fold(f64::MAX, f64::min);
            (hi - lo) / hi < 0.01
        }
        _ => false,
    };
    let verdicts = [c1, c2, c3, c4, c5];
    ThermoReport { satisfied: verdicts.iter().filter(|v| **v).count(), verdicts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn f(s: &str) -> Formula {
        parse(s, &["p"]).unwrap()
    }

    #[test]
    fn one_site_parameters() {
        let m = template_match(&f("p/(0.00927*p+0.0759)"), Family::OneSite, &log_grid(1e-3, 1e3, 200));
        assert!(m.consistent, "{m:?}");
        assert!((m.params[0] - 1.0 / 0.00927).abs() < 1e-6 * m.params[0]);
        assert!((m.params[1] - 0.00927 / 0.0759).abs() < 1e-9);
    }

    #[test]
    fn offset_curve_is_not_one_site() {
        let m = template_match(&f("(8.86*p+13.9)/(0.0787*p+1)"), Family::OneSite, &log_grid(1e-3, 1e3, 200));
        assert!(!m.consistent);
    }

    #[test]
    fn two_site_recovers_sites() {
        let m = template_match(&f("2*3*p/(1+3*p) + 5*0.01*p/(1+0.01*p)"), Family::TwoSite, &log_grid(1e-3, 1e3, 200));
        assert!(m.consistent, "{m:?}");
        assert!((m.params[0] - 2.0).abs() < 1e-6 && (m.params[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn thermo_tallies() {
        assert_eq!(thermo_check(&f("p/(0.00927*p+0.0759)")).satisfied, 5);
        assert_eq!(thermo_check(&f("(p^2+2*p-1)/(0.00888*p^2+0.118*p)")).satisfied, 2);
        assert_eq!(thermo_check(&f("(p+3)/(0.584*p+4.01)")).satisfied, 4);
    }
}
