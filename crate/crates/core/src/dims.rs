//! Dimensional analysis over integer unit exponents.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::enumerate::GenTree;
use crate::expr::UnOp;

/// Exponents over a dataset's base dimensions, e.g. force = (1, 1, -2) over (mass, length, time).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UnitVector(pub Vec<i32>);

impl UnitVector {
    pub fn zero(dims: usize) -> Self {
        UnitVector(vec![0; dims])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|e| *e == 0)
    }

    pub fn add(&self, o: &UnitVector) -> UnitVector {
        UnitVector(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, o: &UnitVector) -> UnitVector {
        UnitVector(self.0.iter().zip(&o.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, k: i32) -> UnitVector {
        UnitVector(self.0.iter().map(|a| a * k).collect())
    }

    /// Half of the vector when every component is even.
    pub fn halve(&self) -> Option<UnitVector> {
        if self.0.iter().all(|a| a % 2 == 0) {
            Some(UnitVector(self.0.iter().map(|a| a / 2).collect()))
        } else {
            None
        }
    }

    pub fn render(&self, basis: &[String]) -> String {
        let parts: Vec<String> = self
            .0
            .iter()
            .zip(basis)
            .filter(|(e, _)| **e != 0)
            .map(|(e, b)| if *e == 1 { b.clone() } else { format!("{b}^{e}") })
            .collect();
        if parts.is_empty() {
            "1".to_string()
        } else {
            parts.join(" ")
        }
    }
}

/// `sum_i powers_i * unit(x_i) + const_unit`.
pub fn leaf_unit(powers: &[i32], var_units: &[UnitVector], const_unit: &UnitVector) -> UnitVector {
    let mut u = const_unit.clone();
    for (a, v) in powers.iter().zip(var_units) {
        u = u.add(&v.scale(*a));
    }
    u
}

/// Units of every variable plus the target, over a shared basis.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitSpec {
    pub basis: Vec<String>,
    pub vars: Vec<(String, UnitVector)>,
    pub target: Option<UnitVector>,
    pub constants_have_units: bool,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum UnitError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
}

impl UnitSpec {
    /// Parses lines `name: mass^a length^b time^c`, `target: ...`, `constants_have_units: bool`.
    pub fn parse(text: &str) -> Result<UnitSpec, UnitError> {
        let mut basis: Vec<String> = ["mass", "length", "time"].iter().map(|s| s.to_string()).collect();
        let mut raw: Vec<(String, Vec<(String, i32)>)> = Vec::new();
        let mut constants_have_units = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| UnitError::Syntax { line: i + 1, msg: msg.to_string() };
            let (name, rest) = line.split_once(':').ok_or_else(|| err("expected 'name: units'"))?;
            let (name, rest) = (name.trim(), rest.trim());
            if name == "constants_have_units" {
                constants_have_units = match rest {
                    "true" => true,
                    "false" => false,
                    _ => return Err(err("expected true or false")),
                };
                continue;
            }
            let mut comps = Vec::new();
            for tok in rest.split_whitespace() {
                if tok == "1" || tok == "dimensionless" {
                    continue;
                }
                let (b, e) = match tok.split_once('^') {
                    Some((b, e)) => (b, e.parse::<i32>().map_err(|_| err("bad exponent"))?),
                    None => (tok, 1),
                };
                if !basis.iter().any(|x| x == b) {
                    basis.push(b.to_string());
                }
                comps.push((b.to_string(), e));
            }
            raw.push((name.to_string(), comps));
        }
        let to_vec = |comps: &[(String, i32)]| {
            let mut v = vec![0; basis.len()];
            for (b, e) in comps {
                let k = basis.iter().position(|x| x == b).unwrap_or(0);
                v[k] += e;
            }
            UnitVector(v)
        };
        let mut vars = Vec::new();
        let mut target = None;
        for (name, comps) in &raw {
            if name == "target" {
                target = Some(to_vec(comps));
            } else {
                vars.push((name.clone(), to_vec(comps)));
            }
        }
        Ok(UnitSpec { basis, vars, target, constants_have_units })
    }

    /// Variable units in the given column order; unknown names are dimensionless.
    pub fn units_for(&self, names: &[String]) -> Vec<UnitVector> {
        names
            .iter()
            .map(|n| {
                self.vars
                    .iter()
                    .find(|(v, _)| v == n)
                    .map(|(_, u)| u.clone())
                    .unwrap_or_else(|| UnitVector::zero(self.basis.len()))
            })
            .collect()
    }
}

/// Dimensional verdict for a gentree.
#[derive(Clone, Debug, PartialEq)]
pub struct DimVerdict {
    pub feasible: bool,
    /// Linear unit equations over leaf units `u1, u2, ...` (depth-first leaf order).
    pub equations: Vec<String>,
}

impl fmt::Display for DimVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", if self.feasible { "feasible" } else { "infeasible" })?;
        for e in &self.equations {
            write!(f, "; {e}")?;
        }
        Ok(())
    }
}

/// Every exponent vector with `|a_i| <= delta` and `sum |a_i| <= tau`, in lexicographic order.
pub fn power_lattice(n: usize, delta: i32, tau: i32) -> Vec<Vec<i32>> {
    let mut out = Vec::new();
    let mut cur = vec![-delta; n];
    if n == 0 {
        return vec![Vec::new()];
    }
    loop {
        if cur.iter().map(|a| a.abs()).sum::<i32>() <= tau {
            out.push(cur.clone());
        }
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < delta {
                cur[i] += 1;
                break;
            }
            cur[i] = -delta;
        }
    }
}

/// Decides whether some lattice assignment makes the tree's unit equal `target`.
pub fn dim_feasible(
    g: &GenTree,
    target: &UnitVector,
    var_units: &[UnitVector],
    constants_have_units: bool,
    delta: i32,
    tau: i32,
) -> DimVerdict {
    let equations = unit_equations(g, target);
    if constants_have_units {
        return DimVerdict { feasible: true, equations };
    }
    let dims = target.0.len();
    let zero = UnitVector::zero(dims);
    let leaf: HashSet<UnitVector> =
        power_lattice(var_units.len(), delta, tau).iter().map(|p| leaf_unit(p, var_units, &zero)).collect();
    let reach = reachable(g, &leaf, dims);
    DimVerdict { feasible: reach.contains(target), equations }
}

fn reachable(g: &GenTree, leaf: &HashSet<UnitVector>, dims: usize) -> HashSet<UnitVector> {
    match g {
        GenTree::Leaf => leaf.clone(),
        GenTree::Sum(c) => {
            let mut acc = reachable(&c[0], leaf, dims);
            for child in &c[1..] {
                if acc.is_empty() {
                    break;
                }
                let r = if child.is_leaf() { leaf.clone() } else { reachable(child, leaf, dims) };
                acc.retain(|u| r.contains(u));
            }
            acc
        }
        GenTree::Mul(a, b) | GenTree::Div(a, b) => {
            let ra = reachable(a, leaf, dims);
            let rb = reachable(b, leaf, dims);
            let mul = matches!(g, GenTree::Mul(..));
            let mut out = HashSet::new();
            for u in &ra {
                for v in &rb {
                    out.insert(if mul { u.add(v) } else { u.sub(v) });
                }
            }
            out
        }
        GenTree::Unary(UnOp::Sqrt, a) => reachable(a, leaf, dims).iter().filter_map(UnitVector::halve).collect(),
        GenTree::Unary(_, a) => {
            let zero = UnitVector::zero(dims);
            if reachable(a, leaf, dims).contains(&zero) {
                HashSet::from([zero])
            } else {
                HashSet::new()
            }
        }
    }
}

fn unit_equations(g: &GenTree, target: &UnitVector) -> Vec<String> {
    let mut eqs = Vec::new();
    let mut next = 0;
    let root = linear_form(g, &mut next, &mut eqs);
    eqs.push(format!("{} = target{:?}", render_form(&root), target.0));
    eqs
}

// Linear combination of leaf units as (leaf index, coefficient) pairs.
fn linear_form(g: &GenTree, next: &mut usize, eqs: &mut Vec<String>) -> Vec<(usize, f64)> {
    match g {
        GenTree::Leaf => {
            *next += 1;
            vec![(*next, 1.0)]
        }
        GenTree::Sum(c) => {
            let first = linear_form(&c[0], next, eqs);
            for child in &c[1..] {
                let f = linear_form(child, next, eqs);
                eqs.push(format!("{} = {}", render_form(&f), render_form(&first)));
            }
            first
        }
        GenTree::Mul(a, b) | GenTree::Div(a, b) => {
            let sign = if matches!(g, GenTree::Mul(..)) { 1.0 } else { -1.0 };
            let mut fa = linear_form(a, next, eqs);
            fa.extend(linear_form(b, next, eqs).into_iter().map(|(i, c)| (i, sign * c)));
            fa
        }
        GenTree::Unary(UnOp::Sqrt, a) => linear_form(a, next, eqs).into_iter().map(|(i, c)| (i, c / 2.0)).collect(),
        GenTree::Unary(_, a) => {
            let f = linear_form(a, next, eqs);
            eqs.push(format!("{} = 0", render_form(&f)));
            Vec::new()
        }
    }
}

fn render_form(f: &[(usize, f64)]) -> String {
    if f.is_empty() {
        return "0".to_string();
    }
    f.iter().map(|(i, c)| if *c == 1.0 { format!("u{i}") } else { format!("{c}*u{i}") }).collect::<Vec<_>>().join(" + ")
}

/// Unit of a bound tree; `None` means a free constant lets the unit be anything.
///
/// Returns `Err(())` when the leaf units contradict each other.
pub fn assignment_unit(
    g: &GenTree,
    powers: &[Vec<i32>],
    active: &[bool],
    var_units: &[UnitVector],
    constants_have_units: bool,
) -> Result<Option<UnitVector>, ()> {
    let dims = var_units.first().map(|u| u.0.len()).unwrap_or(0);
    let mut idx = 0;
    unit_of(g, powers, active, var_units, constants_have_units, dims, &mut idx)
}

fn unit_of(
    g: &GenTree,
    powers: &[Vec<i32>],
    active: &[bool],
    var_units: &[UnitVector],
    cu: bool,
    dims: usize,
    idx: &mut usize,
) -> Result<Option<UnitVector>, ()> {
    let rec = |t: &GenTree, idx: &mut usize| unit_of(t, powers, active, var_units, cu, dims, idx);
    match g {
        GenTree::Leaf => {
            let i = *idx;
            *idx += 1;
            if cu && active[i] {
                return Ok(None);
            }
            Ok(Some(leaf_unit(&powers[i], var_units, &UnitVector::zero(dims))))
        }
        GenTree::Sum(c) => {
            let mut known: Option<UnitVector> = None;
            for child in c {
                if let Some(u) = rec(child, idx)? {
                    match &known {
                        Some(k) if *k != u => return Err(()),
                        _ => known = Some(u),
                    }
                }
            }
            Ok(known)
        }
        GenTree::Mul(a, b) | GenTree::Div(a, b) => {
            let ua = rec(a, idx)?;
            let ub = rec(b, idx)?;
            Ok(match (ua, ub) {
                (Some(x), Some(y)) => Some(if matches!(g, GenTree::Mul(..)) { x.add(&y) } else { x.sub(&y) }),
                _ => None,
            })
        }
        GenTree::Unary(UnOp::Sqrt, a) => match rec(a, idx)? {
            Some(u) => u.halve().map(Some).ok_or(()),
            None => Ok(None),
        },
        GenTree::Unary(_, a) => match rec(a, idx)? {
            Some(u) if !u.is_zero() => Err(()),
            _ => Ok(Some(UnitVector::zero(dims))),
        },
    }
}

/// True when the bound tree can carry the target unit.
pub fn assignment_ok(
    g: &GenTree,
    powers: &[Vec<i32>],
    active: &[bool],
    var_units: &[UnitVector],
    target: &UnitVector,
    constants_have_units: bool,
) -> bool {
    match assignment_unit(g, powers, active, var_units, constants_have_units) {
        Ok(Some(u)) => u == *target,
        Ok(None) => true,
        Err(()) => false,
    }
}
