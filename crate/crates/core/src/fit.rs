//! Per-gentree fitting over integer leaf powers, constant activations and real constants.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::Dataset;
use crate::dims::{self, UnitSpec, UnitVector};
use crate::enumerate::GenTree;
use crate::expr::{Coeff, Formula, LMonomial, UnOp};

/// Bounds and budgets shared by fitting and search.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    /// Depth limit `d`.
    pub depth: usize,
    /// At most `k` leaves carry a free constant.
    pub max_constants: usize,
    /// `delta`: every exponent lies in `[-delta, delta]`.
    pub power_bound: i32,
    /// `tau`: per-leaf bound on the sum of absolute exponents.
    pub power_budget: i32,
    /// `Omega`: constants lie in `[-Omega, Omega]`.
    pub const_bound: f64,
    pub tolerance: f64,
    pub time_slice_s: f64,
    pub budget_s: f64,
    pub seed: u64,
    pub dimensional: bool,
    /// Signs available to summands after the first: (plus, minus).
    pub signs: (bool, bool),
    /// Inner fits per round-robin slice.
    pub slice_evals: u64,
    /// Inner fits after which a tree's local search stops.
    pub max_evals_per_tree: u64,
    /// Lattices at most this large are enumerated exhaustively.
    pub exhaustive_limit: u64,
    /// Parallel workers for search; results do not depend on it.
    pub workers: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            depth: 3,
            max_constants: 1,
            power_bound: 2,
            power_budget: 6,
            const_bound: 100.0,
            tolerance: 1e-4,
            time_slice_s: 10.0,
            budget_s: 1200.0,
            seed: 0,
            dimensional: false,
            signs: (true, true),
            slice_evals: 20_000,
            max_evals_per_tree: 50_000,
            exhaustive_limit: 200_000,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(&'static str),
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.power_bound < 0 || self.power_budget < 0 {
            return Err(ConfigError::Invalid("power bounds must be nonnegative"));
        }
        if !(self.const_bound > 0.0) {
            return Err(ConfigError::Invalid("constant bound must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(ConfigError::Invalid("tolerance must be positive"));
        }
        if !(self.budget_s > 0.0) || !(self.time_slice_s > 0.0) {
            return Err(ConfigError::Invalid("time budget and slice must be positive"));
        }
        if !(self.signs.0 || self.signs.1) {
            return Err(ConfigError::Invalid("no summand sign available"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitStatus {
    OptimalWithinEnumeration,
    TimeLimited,
    InfeasibleDimensional,
    AbortedByIncumbent,
}

impl FitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FitStatus::OptimalWithinEnumeration => "optimal-within-enumeration",
            FitStatus::TimeLimited => "time-limited",
            FitStatus::InfeasibleDimensional => "infeasible-dimensional",
            FitStatus::AbortedByIncumbent => "aborted-by-incumbent",
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub tree: GenTree,
    /// Best formula found; `None` when nothing finite was found.
    pub formula: Option<Formula>,
    pub sse: f64,
    pub status: FitStatus,
    pub elapsed: f64,
    pub evaluated: u64,
}

impl FitResult {
    pub fn complexity(&self) -> usize {
        self.formula.as_ref().map(Formula::complexity).unwrap_or(usize::MAX)
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum FitError {
    #[error("dataset has no points")]
    EmptyData,
    #[error("dimensional filtering needs a unit file with a target unit")]
    MissingUnits,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Dataset-level tables shared by every tree: the power lattice and monomial values.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub lattice: Vec<Vec<i32>>,
    /// `table[v][i]`: monomial `v` at point `i` (NaN where undefined).
    pub table: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub zero_index: usize,
    pub n: usize,
    pub units: Option<(Vec<UnitVector>, UnitVector, bool)>,
}

impl Prepared {
    pub fn new(data: &Dataset, cfg: &SearchConfig, units: Option<&UnitSpec>) -> Result<Self, FitError> {
        if data.is_empty() {
            return Err(FitError::EmptyData);
        }
        cfg.validate()?;
        let n = data.n_vars();
        let lattice = dims::power_lattice(n, cfg.power_bound, cfg.power_budget);
        let table = lattice
            .iter()
            .map(|p| {
                data.x
                    .iter()
                    .map(|row| {
                        let v = LMonomial::new(Coeff::One, p.clone()).eval(row);
                        if v.is_finite() {
                            v
                        } else {
                            f64::NAN
                        }
                    })
                    .collect()
            })
            .collect();
        let zero_index = lattice.iter().position(|p| p.iter().all(|a| *a == 0)).unwrap_or(0);
        let units = if cfg.dimensional {
            let spec = units.or(data.units.as_ref()).ok_or(FitError::MissingUnits)?;
            let target = spec.target.clone().ok_or(FitError::MissingUnits)?;
            Some((spec.units_for(&data.names), target, spec.constants_have_units))
        } else {
            None
        };
        Ok(Prepared { lattice, table, x: data.x.clone(), y: data.y.clone(), zero_index, n, units })
    }
}

#[derive(Clone, Copy, Debug)]
enum Ins {
    Leaf(usize),
    Sum { n: usize, slot: usize },
    Mul,
    Div,
    Un(UnOp),
}

fn compile(g: &GenTree, prog: &mut Vec<Ins>, leaf: &mut usize, slot: &mut usize) {
    match g {
        GenTree::Leaf => {
            prog.push(Ins::Leaf(*leaf));
            *leaf += 1;
        }
        GenTree::Sum(c) => {
            let first = *slot;
            *slot += c.len() - 1;
            for child in c {
                compile(child, prog, leaf, slot);
            }
            prog.push(Ins::Sum { n: c.len(), slot: first });
        }
        GenTree::Mul(a, b) | GenTree::Div(a, b) => {
            compile(a, prog, leaf, slot);
            compile(b, prog, leaf, slot);
            prog.push(if matches!(g, GenTree::Mul(..)) { Ins::Mul } else { Ins::Div });
        }
        GenTree::Unary(op, a) => {
            compile(a, prog, leaf, slot);
            prog.push(Ins::Un(*op));
        }
    }
}

// Sign slots along the all-sum path to each top-level summand leaf.
fn top_level(
    g: &GenTree,
    leaf: &mut usize,
    slot: &mut usize,
    path: &mut Vec<usize>,
    out: &mut Vec<Option<Vec<usize>>>,
) {
    match g {
        GenTree::Leaf => {
            out.push(Some(path.clone()));
            *leaf += 1;
        }
        GenTree::Sum(c) => {
            let first = *slot;
            *slot += c.len() - 1;
            for (i, child) in c.iter().enumerate() {
                if i > 0 {
                    path.push(first + i - 1);
                }
                top_level(child, leaf, slot, path, out);
                if i > 0 {
                    path.pop();
                }
            }
        }
        other => {
            let k = other.leaf_count();
            *slot += other.sign_slots();
            out.extend(std::iter::repeat(None).take(k));
            *leaf += k;
        }
    }
}

fn run(prog: &[Ins], leafv: &[f64], minus: &[bool], stack: &mut Vec<f64>) -> Option<f64> {
    stack.clear();
    for ins in prog {
        match *ins {
            Ins::Leaf(l) => stack.push(leafv[l]),
            Ins::Sum { n, slot } => {
                let base = stack.len() - n;
                let mut acc = stack[base];
                for j in 1..n {
                    let v = stack[base + j];
                    acc = if minus[slot + j - 1] { acc - v } else { acc + v };
                }
                stack.truncate(base);
                stack.push(acc);
            }
            Ins::Mul => {
                let b = stack.pop()?;
                let a = stack.pop()?;
                stack.push(a * b);
            }
            Ins::Div => {
                let b = stack.pop()?;
                let a = stack.pop()?;
                if b == 0.0 {
                    return None;
                }
                stack.push(a / b);
            }
            Ins::Un(op) => {
                let a = stack.pop()?;
                let v = match op {
                    UnOp::Sqrt if a < 0.0 => return None,
                    UnOp::Sqrt => a.sqrt(),
                    UnOp::Exp => a.exp(),
                    UnOp::Log if a <= 0.0 => return None,
                    UnOp::Log => a.ln(),
                    UnOp::Abs => a.abs(),
                    UnOp::Powi(k) => a.powi(k),
                };
                stack.push(v);
            }
        }
        if let Some(v) = stack.last() {
            if !v.is_finite() {
                return None;
            }
        }
    }
    stack.pop()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Assign {
    p: Vec<usize>,
    z: Vec<bool>,
    minus: Vec<bool>,
}

#[derive(Clone, Debug)]
struct Best {
    assign: Assign,
    h: Vec<f64>,
    sse: f64,
    key: (usize, Vec<i32>),
}

enum Phase {
    Exhaustive { counter: Vec<usize>, done: bool },
    Local { rng: ChaCha8Rng, restarts: u64 },
}

/// Resumable fit of one gentree; the search drives it in slices.
pub struct TreeFit<'a> {
    pub tree: GenTree,
    prep: &'a Prepared,
    cfg: SearchConfig,
    prog: Vec<Ins>,
    top: Vec<Option<Vec<usize>>>,
    leaves: usize,
    slots: usize,
    zsets: Vec<Vec<bool>>,
    signsets: Vec<Vec<bool>>,
    phase: Phase,
    best: Option<Best>,
    cache: HashMap<Assign, (f64, Vec<f64>)>,
    pub evaluated: u64,
    elapsed: Duration,
    status: Option<FitStatus>,
    stack: Vec<f64>,
}

fn subsets_up_to(m: usize, k: usize) -> Vec<Vec<bool>> {
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << m) {
        if (mask.count_ones() as usize) <= k {
            out.push((0..m).map(|i| mask >> i & 1 == 1).collect());
        }
    }
    out.sort_by_key(|z: &Vec<bool>| z.iter().filter(|b| **b).count());
    out
}

fn sign_patterns(s: usize, signs: (bool, bool)) -> Vec<Vec<bool>> {
    match signs {
        (true, true) => (0u64..(1u64 << s)).map(|mask| (0..s).map(|i| mask >> i & 1 == 1).collect()).collect(),
        (false, true) => vec![vec![true; s]],
        _ => vec![vec![false; s]],
    }
}

impl<'a> TreeFit<'a> {
    pub fn new(tree: &GenTree, prep: &'a Prepared, cfg: &SearchConfig) -> Self {
        let mut prog = Vec::new();
        let (mut leaves, mut slots) = (0, 0);
        compile(tree, &mut prog, &mut leaves, &mut slots);
        let mut top = Vec::new();
        top_level(tree, &mut 0, &mut 0, &mut Vec::new(), &mut top);
        let zsets = subsets_up_to(leaves, cfg.max_constants.min(leaves));
        let signsets = sign_patterns(slots, cfg.signs);
        let size = (prep.lattice.len() as f64).powi(leaves as i32) * zsets.len() as f64 * signsets.len() as f64;
        let seed = cfg.seed ^ fnv(&tree.serialize());
        let phase = if size <= cfg.exhaustive_limit as f64 {
            Phase::Exhaustive { counter: vec![0; leaves + 2], done: false }
        } else {
            Phase::Local { rng: ChaCha8Rng::seed_from_u64(seed), restarts: 0 }
        };
        let mut fit = TreeFit {
            tree: tree.clone(),
            prep,
            cfg: cfg.clone(),
            prog,
            top,
            leaves,
            slots,
            zsets,
            signsets,
            phase,
            best: None,
            cache: HashMap::new(),
            evaluated: 0,
            elapsed: Duration::ZERO,
            status: None,
            stack: Vec::with_capacity(64),
        };
        if let Some((vu, target, cu)) = &prep.units {
            let v = dims::dim_feasible(tree, target, vu, *cu, cfg.power_bound, cfg.power_budget);
            if !v.feasible {
                fit.status = Some(FitStatus::InfeasibleDimensional);
            }
        }
        fit
    }

    pub fn is_finished(&self) -> bool {
        self.status.is_some()
    }

    pub fn best_sse(&self) -> f64 {
        self.best.as_ref().map(|b| b.sse).unwrap_or(f64::INFINITY)
    }

    /// Stops the fit with the given status, keeping the incumbent.
    pub fn stop(&mut self, status: FitStatus) {
        if self.status.is_none() {
            self.status = Some(status);
        }
    }

    fn units_ok(&self, a: &Assign) -> bool {
        match &self.prep.units {
            None => true,
            Some((vu, target, cu)) => {
                let powers: Vec<Vec<i32>> = a.p.iter().map(|&v| self.prep.lattice[v].clone()).collect();
                dims::assignment_ok(&self.tree, &powers, &a.z, vu, target, *cu)
            }
        }
    }

    /// Runs up to `max_evals` inner fits or until `deadline`; returns true once finished.
    pub fn step(&mut self, max_evals: u64, deadline: Option<Instant>) -> bool {
        if self.status.is_some() {
            return true;
        }
        let start = Instant::now();
        let stop_at = self.evaluated + max_evals;
        let out_of_time = |e: u64| e >= stop_at || deadline.map(|d| Instant::now() >= d).unwrap_or(false);
        loop {
            if out_of_time(self.evaluated) {
                break;
            }
            let finished = match self.phase {
                Phase::Exhaustive { .. } => self.exhaustive_chunk(512),
                Phase::Local { .. } => self.local_round(),
            };
            if finished {
                break;
            }
        }
        self.elapsed += start.elapsed();
        self.status.is_some()
    }

    fn exhaustive_chunk(&mut self, chunk: usize) -> bool {
        for _ in 0..chunk {
            let (counter, done) = match &mut self.phase {
                Phase::Exhaustive { counter, done } => (counter.clone(), *done),
                _ => return false,
            };
            if done {
                self.status = Some(FitStatus::OptimalWithinEnumeration);
                return true;
            }
            let m = self.leaves;
            let a = Assign {
                p: counter[..m].to_vec(),
                z: self.zsets[counter[m]].clone(),
                minus: self.signsets[counter[m + 1]].clone(),
            };
            if self.units_ok(&a) {
                self.evaluate(&a);
            }
            if let Phase::Exhaustive { counter, done } = &mut self.phase {
                let radix: Vec<usize> =
                    (0..m).map(|_| self.prep.lattice.len()).chain([self.zsets.len(), self.signsets.len()]).collect();
                let mut i = counter.len();
                loop {
                    if i == 0 {
                        *done = true;
                        break;
                    }
                    i -= 1;
                    counter[i] += 1;
                    if counter[i] < radix[i] {
                        break;
                    }
                    counter[i] = 0;
                }
            }
        }
        false
    }

    fn random_assign(&self, rng: &mut ChaCha8Rng) -> Assign {
        let nv = self.prep.lattice.len();
        Assign {
            p: (0..self.leaves).map(|_| rng.gen_range(0..nv)).collect(),
            z: self.zsets[rng.gen_range(0..self.zsets.len())].clone(),
            minus: self.signsets[rng.gen_range(0..self.signsets.len())].clone(),
        }
    }

    fn feasible_start(&self, rng: &mut ChaCha8Rng, base: Option<&Assign>) -> Option<Assign> {
        for attempt in 0..5000 {
            let a = match base {
                Some(b) if attempt < 2500 => {
                    let mut a = b.clone();
                    let kicks = 1 + rng.gen_range(0..2.min(self.leaves.max(1)));
                    for _ in 0..kicks {
                        let l = rng.gen_range(0..self.leaves);
                        a.p[l] = rng.gen_range(0..self.prep.lattice.len());
                    }
                    if rng.gen_bool(0.3) {
                        a.z = self.zsets[rng.gen_range(0..self.zsets.len())].clone();
                    }
                    if rng.gen_bool(0.3) {
                        a.minus = self.signsets[rng.gen_range(0..self.signsets.len())].clone();
                    }
                    a
                }
                _ => self.random_assign(rng),
            };
            if self.units_ok(&a) {
                return Some(a);
            }
        }
        None
    }

    // One descent from a start point to a local optimum.
    fn local_round(&mut self) -> bool {
        if self.evaluated >= self.cfg.max_evals_per_tree {
            self.status = Some(FitStatus::TimeLimited);
            return true;
        }
        let (mut rng, restarts) = match &mut self.phase {
            Phase::Local { rng, restarts } => (rng.clone(), *restarts),
            _ => return false,
        };
        let start = if restarts == 0 {
            let a = Assign {
                p: vec![self.prep.zero_index; self.leaves],
                z: self.zsets[self.zsets.len() - 1].clone(),
                minus: self.signsets[0].clone(),
            };
            if self.units_ok(&a) {
                Some(a)
            } else {
                self.feasible_start(&mut rng, None)
            }
        } else {
            let base = if rng.gen_bool(0.7) { self.best.as_ref().map(|b| b.assign.clone()) } else { None };
            self.feasible_start(&mut rng, base.as_ref())
        };
        if let Phase::Local { rng: r, restarts } = &mut self.phase {
            *r = rng;
            *restarts += 1;
        }
        let Some(mut cur) = start else {
            if restarts > 50 && self.best.is_none() {
                self.status = Some(FitStatus::InfeasibleDimensional);
                return true;
            }
            return false;
        };
        let mut cur_sse = self.evaluate(&cur);
        loop {
            let mut improved = false;
            for l in 0..self.leaves {
                for v in 0..self.prep.lattice.len() {
                    if v == cur.p[l] {
                        continue;
                    }
                    let mut a = cur.clone();
                    a.p[l] = v;
                    if !self.units_ok(&a) {
                        continue;
                    }
                    let s = self.evaluate(&a);
                    if s < cur_sse * (1.0 - 1e-12) {
                        cur = a;
                        cur_sse = s;
                        improved = true;
                    }
                }
            }
            for zi in 0..self.zsets.len() {
                let mut a = cur.clone();
                a.z = self.zsets[zi].clone();
                if a.z == cur.z || !self.units_ok(&a) {
                    continue;
                }
                let s = self.evaluate(&a);
                if s < cur_sse * (1.0 - 1e-12) {
                    cur = a;
                    cur_sse = s;
                    improved = true;
                }
            }
            for j in 0..self.slots {
                if self.signsets.len() < 2 {
                    break;
                }
                let mut a = cur.clone();
                a.minus[j] = !a.minus[j];
                let s = self.evaluate(&a);
                if s < cur_sse * (1.0 - 1e-12) {
                    cur = a;
                    cur_sse = s;
                    improved = true;
                }
            }
            if !improved || self.evaluated >= self.cfg.max_evals_per_tree {
                break;
            }
        }
        false
    }

    fn evaluate(&mut self, a: &Assign) -> f64 {
        if let Some((s, _)) = self.cache.get(a) {
            return *s;
        }
        self.evaluated += 1;
        let (sse, h) = self.inner_fit(a);
        if self.cache.len() < 400_000 {
            self.cache.insert(a.clone(), (sse, h.clone()));
        }
        if sse.is_finite() {
            let powers: Vec<i32> = a.p.iter().flat_map(|&v| self.prep.lattice[v].iter().copied()).collect();
            let cx = self.formula_of(a, &h).complexity();
            let key = (cx, powers);
            let better = match &self.best {
                None => true,
                Some(b) => {
                    let tie = (sse - b.sse).abs() <= 1e-12 * b.sse.max(1e-300);
                    if tie {
                        key < b.key
                    } else {
                        sse < b.sse
                    }
                }
            };
            if better {
                self.best = Some(Best { assign: a.clone(), h, sse, key });
            }
        }
        sse
    }

    fn formula_of(&self, a: &Assign, h: &[f64]) -> Formula {
        let mut hi = 0;
        let leaves: Vec<LMonomial> = (0..self.leaves)
            .map(|l| {
                let coeff = if a.z[l] {
                    hi += 1;
                    Coeff::Free(h[hi - 1])
                } else {
                    Coeff::One
                };
                LMonomial::new(coeff, self.prep.lattice[a.p[l]].clone())
            })
            .collect();
        self.tree.instantiate(&leaves, &a.minus)
    }

    fn sse_with(&mut self, a: &Assign, h: &[f64]) -> f64 {
        let m = self.prep.y.len();
        let mut leafv = vec![0.0; self.leaves];
        let mut sse = 0.0;
        for i in 0..m {
            let mut hi = 0;
            for l in 0..self.leaves {
                let base = self.prep.table[a.p[l]][i];
                leafv[l] = if a.z[l] {
                    hi += 1;
                    h[hi - 1] * base
                } else {
                    base
                };
            }
            match run(&self.prog, &leafv, &a.minus, &mut self.stack) {
                Some(v) if !leafv.iter().any(|x| x.is_nan()) => {
                    let r = v - self.prep.y[i];
                    sse += r * r;
                }
                _ => return f64::INFINITY,
            }
        }
        if sse.is_finite() {
            sse
        } else {
            f64::INFINITY
        }
    }

    fn residuals(&mut self, a: &Assign, h: &[f64], out: &mut [f64]) -> bool {
        let mut leafv = vec![0.0; self.leaves];
        for (i, o) in out.iter_mut().enumerate() {
            let mut hi = 0;
            for l in 0..self.leaves {
                let base = self.prep.table[a.p[l]][i];
                if base.is_nan() {
                    return false;
                }
                leafv[l] = if a.z[l] {
                    hi += 1;
                    h[hi - 1] * base
                } else {
                    base
                };
            }
            match run(&self.prog, &leafv, &a.minus, &mut self.stack) {
                Some(v) => *o = v - self.prep.y[i],
                None => return false,
            }
        }
        true
    }

    fn inner_fit(&mut self, a: &Assign) -> (f64, Vec<f64>) {
        let active: Vec<usize> = (0..self.leaves).filter(|&l| a.z[l]).collect();
        if active.is_empty() {
            return (self.sse_with(a, &[]), Vec::new());
        }
        let omega = self.cfg.const_bound;
        let linear = active.iter().all(|&l| self.top[l].is_some());
        if linear {
            if let Some(h) = self.linear_fit(a, &active) {
                let clamped: Vec<f64> = h.iter().map(|v| v.clamp(-omega, omega)).collect();
                if clamped == h {
                    return (self.sse_with(a, &h), h);
                }
                let (s, hp) = self.lm(a, clamped);
                return (s, hp);
            }
        }
        self.multistart(a, &active)
    }

    fn linear_fit(&mut self, a: &Assign, active: &[usize]) -> Option<Vec<f64>> {
        let m = self.prep.y.len();
        let k = active.len();
        let zeros = vec![0.0; k];
        // rest = f with the active summands removed
        let mut rest = vec![0.0; m];
        {
            let mut leafv = vec![0.0; self.leaves];
            for (i, r) in rest.iter_mut().enumerate() {
                for l in 0..self.leaves {
                    let base = self.prep.table[a.p[l]][i];
                    if base.is_nan() {
                        return None;
                    }
                    leafv[l] = if a.z[l] { 0.0 } else { base };
                }
                *r = run(&self.prog, &leafv, &a.minus, &mut self.stack)?;
            }
        }
        let _ = zeros;
        let sign = |l: usize| -> f64 {
            let flips = self.top[l].as_ref().map(|p| p.iter().filter(|&&s| a.minus[s]).count()).unwrap_or(0);
            if flips % 2 == 1 {
                -1.0
            } else {
                1.0
            }
        };
        let cols: Vec<Vec<f64>> = active
            .iter()
            .map(|&l| {
                let s = sign(l);
                (0..m).map(|i| s * self.prep.table[a.p[l]][i]).collect()
            })
            .collect();
        let b: Vec<f64> = (0..m).map(|i| self.prep.y[i] - rest[i]).collect();
        if k == 1 {
            let aa: f64 = cols[0].iter().map(|v| v * v).sum();
            let ab: f64 = cols[0].iter().zip(&b).map(|(u, v)| u * v).sum();
            if aa == 0.0 || !aa.is_finite() {
                return Some(vec![0.0]);
            }
            return Some(vec![ab / aa]);
        }
        let mat = DMatrix::from_fn(m, k, |i, j| cols[j][i]);
        let rhs = DVector::from_vec(b);
        let svd = mat.svd(true, true);
        let sol = svd.solve(&rhs, 1e-12).ok()?;
        Some(sol.iter().copied().collect())
    }

    fn multistart(&mut self, a: &Assign, active: &[usize]) -> (f64, Vec<f64>) {
        let omega = self.cfg.const_bound;
        let k = active.len();
        let ymed = median(self.prep.y.iter().map(|v| v.abs()));
        let scales: Vec<f64> = active
            .iter()
            .map(|&l| {
                let b = median(self.prep.table[a.p[l]].iter().map(|v| v.abs()));
                let s = if b > 0.0 && ymed > 0.0 { ymed / b } else { 1.0 };
                s.clamp(-omega, omega)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        let rho: f64 = rng.gen_range(0.1f64..10.0);
        let mut best = (f64::INFINITY, vec![0.0; k]);
        for start in 0..8 {
            let h0: Vec<f64> = (0..k)
                .map(|c| {
                    let pat = (start + c) % 8;
                    match pat {
                        0 => 1.0,
                        1 => -1.0,
                        2 => omega / 10.0,
                        3 => -omega / 10.0,
                        4 => scales[c],
                        5 => -scales[c],
                        6 => (scales[c] * rho).clamp(-omega, omega),
                        _ => (-scales[c] / rho).clamp(-omega, omega),
                    }
                })
                .collect();
            let (s, h) = self.lm(a, h0);
            if s < best.0 {
                best = (s, h);
            }
            if best.0 == 0.0 {
                break;
            }
        }
        best
    }

    /// Bounded Levenberg-Marquardt on the active constants.
    fn lm(&mut self, a: &Assign, mut h: Vec<f64>) -> (f64, Vec<f64>) {
        let omega = self.cfg.const_bound;
        let m = self.prep.y.len();
        let k = h.len();
        let mut r = vec![0.0; m];
        if !self.residuals(a, &h, &mut r) {
            return (f64::INFINITY, h);
        }
        let mut sse: f64 = r.iter().map(|v| v * v).sum();
        let mut lambda = 1e-3;
        let mut jac = vec![vec![0.0; m]; k];
        let mut rp = vec![0.0; m];
        for _ in 0..40 {
            for c in 0..k {
                let step = 1e-7 * h[c].abs().max(1e-4);
                let mut hp = h.clone();
                hp[c] += step;
                if !self.residuals(a, &hp, &mut rp) {
                    hp[c] = h[c] - step;
                    if !self.residuals(a, &hp, &mut rp) {
                        return (sse, h);
                    }
                    for i in 0..m {
                        jac[c][i] = (r[i] - rp[i]) / step;
                    }
                } else {
                    for i in 0..m {
                        jac[c][i] = (rp[i] - r[i]) / step;
                    }
                }
            }
            let mut jtj = vec![vec![0.0; k]; k];
            let mut jtr = vec![0.0; k];
            for p in 0..k {
                for q in 0..k {
                    jtj[p][q] = (0..m).map(|i| jac[p][i] * jac[q][i]).sum();
                }
                jtr[p] = (0..m).map(|i| jac[p][i] * r[i]).sum();
            }
            let mut accepted = false;
            while lambda < 1e10 {
                let mut a_m = jtj.clone();
                for p in 0..k {
                    a_m[p][p] += lambda * (jtj[p][p] + 1e-12);
                }
                let Some(delta) = solve_small(a_m, jtr.iter().map(|v| -v).collect()) else {
                    lambda *= 10.0;
                    continue;
                };
                let hn: Vec<f64> = h.iter().zip(&delta).map(|(x, d)| (x + d).clamp(-omega, omega)).collect();
                if self.residuals(a, &hn, &mut rp) {
                    let sn: f64 = rp.iter().map(|v| v * v).sum();
                    if sn < sse {
                        let gain = sse - sn;
                        h = hn;
                        std::mem::swap(&mut r, &mut rp);
                        sse = sn;
                        lambda = (lambda / 3.0).max(1e-12);
                        accepted = true;
                        if gain <= 1e-10 * sse {
                            return (sse, h);
                        }
                        break;
                    }
                }
                lambda *= 4.0;
            }
            if !accepted || sse == 0.0 {
                break;
            }
        }
        (sse, h)
    }

    pub fn result(&self) -> FitResult {
        let (formula, sse) = match &self.best {
            Some(b) => {
                let f = self.formula_of(&b.assign, &b.h);
                let sse = sse_of(&f, self.prep);
                (Some(f), sse)
            }
            None => (None, f64::INFINITY),
        };
        FitResult {
            tree: self.tree.clone(),
            formula,
            sse,
            status: self.status.unwrap_or(FitStatus::TimeLimited),
            elapsed: self.elapsed.as_secs_f64(),
            evaluated: self.evaluated,
        }
    }
}

fn sse_of(f: &Formula, prep: &Prepared) -> f64 {
    let mut sse = 0.0;
    for (x, y) in prep.x.iter().zip(&prep.y) {
        match f.eval(x) {
            Ok(v) => sse += (y - v) * (y - v),
            Err(_) => return f64::INFINITY,
        }
    }
    sse
}

fn median(it: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = it.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

/// Gaussian elimination with partial pivoting.
pub(crate) fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 || !a[p][c].is_finite() {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for q in c..n {
                a[r][q] -= f * a[c][q];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|q| a[c][q] * x[q]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    Some(x)
}

fn fnv(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Fits one gentree to completion (or until its time slice / evaluation cap runs out).
pub fn fit_gentree(
    g: &GenTree,
    data: &Dataset,
    cfg: &SearchConfig,
    units: Option<&UnitSpec>,
) -> Result<FitResult, FitError> {
    let prep = Prepared::new(data, cfg, units)?;
    let mut fit = TreeFit::new(g, &prep, cfg);
    let deadline = Instant::now() + Duration::from_secs_f64(cfg.time_slice_s);
    while !fit.step(cfg.slice_evals, Some(deadline)) {
        if Instant::now() >= deadline {
            fit.stop(FitStatus::TimeLimited);
            break;
        }
    }
    Ok(fit.result())
}

/// Minimizes the sse over the free constants of a bound formula skeleton.
///
/// Returns the fitted constants (one per active leaf) and the sse.
pub fn inner_fit_constants(
    g: &GenTree,
    powers: &[Vec<i32>],
    active: &[bool],
    minus: &[bool],
    data: &Dataset,
    cfg: &SearchConfig,
) -> Result<(Vec<f64>, f64), FitError> {
    let mut c = cfg.clone();
    c.power_bound = powers.iter().flatten().map(|a| a.abs()).max().unwrap_or(0).max(cfg.power_bound);
    c.power_budget =
        powers.iter().map(|p| p.iter().map(|a| a.abs()).sum::<i32>()).max().unwrap_or(0).max(cfg.power_budget);
    c.dimensional = false;
    let prep = Prepared::new(data, &c, None)?;
    let mut fit = TreeFit::new(g, &prep, &c);
    let idx: Vec<usize> = powers.iter().map(|p| prep.lattice.iter().position(|q| q == p).unwrap_or(0)).collect();
    let a = Assign { p: idx, z: active.to_vec(), minus: minus.to_vec() };
    let (sse, h) = fit.inner_fit(&a);
    Ok((h, sse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn ds(xs: &[f64], ys: &[f64]) -> Dataset {
        Dataset::new(vec!["x".into()], "y".into(), xs.iter().map(|v| vec![*v]).collect(), ys.to_vec()).unwrap()
    }

    #[test]
    fn linear_inner_exact() {
        let d = ds(&[1.0, 2.0], &[2.0, 4.0]);
        let (h, sse) =
            inner_fit_constants(&GenTree::Leaf, &[vec![1]], &[true], &[], &d, &SearchConfig::default()).unwrap();
        assert!((h[0] - 2.0).abs() < 1e-12);
        assert!(sse < 1e-20);
        let d = ds(&[1.0, 2.0, 3.0], &[5.0, 7.0, 9.0]);
        let s2 = GenTree::Sum(vec![GenTree::Leaf, GenTree::Leaf]);
        let (h, sse) =
            inner_fit_constants(&s2, &[vec![1], vec![0]], &[true, true], &[false], &d, &SearchConfig::default())
                .unwrap();
        assert!((h[0] - 2.0).abs() < 1e-9 && (h[1] - 3.0).abs() < 1e-9);
        assert!(sse < 1e-18);
    }

    #[test]
    fn constant_target() {
        let d = ds(&[1.0, 2.0, 5.0], &[4.0, 4.0, 4.0]);
        let r = fit_gentree(&GenTree::Leaf, &d, &SearchConfig::default(), None).unwrap();
        let f = r.formula.unwrap();
        assert!(r.sse < 1e-20);
        assert_eq!(f.leaves()[0].powers, vec![0]);
        assert_eq!(r.status, FitStatus::OptimalWithinEnumeration);
    }

    #[test]
    fn power_law() {
        let xs: Vec<f64> = (1..8).map(|i| i as f64 * 0.7).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        let r = fit_gentree(&GenTree::Leaf, &ds(&xs, &ys), &SearchConfig::default(), None).unwrap();
        let f = r.formula.unwrap();
        assert_eq!(f.leaves()[0].powers, vec![2]);
        match f.leaves()[0].coeff {
            Coeff::Free(h) => assert!((h - 3.0).abs() < 1e-12),
            Coeff::One => panic!("constant not fitted"),
        }
        assert!(r.sse < 1e-20);
    }

    #[test]
    fn nonlinear_sqrt() {
        let xs: Vec<f64> = (1..9).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (0.5 * x * x * x + x).sqrt()).collect();
        let g = GenTree::Unary(UnOp::Sqrt, Box::new(GenTree::Sum(vec![GenTree::Leaf, GenTree::Leaf])));
        let cfg = SearchConfig { power_bound: 3, power_budget: 3, ..SearchConfig::default() };
        let r = fit_gentree(&g, &ds(&xs, &ys), &cfg, None).unwrap();
        assert!(r.sse < 1e-16, "{}", r.sse);
        let f = r.formula.unwrap();
        let names = vec!["x".to_string()];
        let back = parse(&f.to_infix(&names), &["x"]).unwrap();
        assert!((back.eval(&[2.0]).unwrap() - 2.0f64.sqrt() * 3.0f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn reported_sse_matches_formula() {
        let xs = [0.5, 1.0, 1.5, 2.5];
        let ys = [1.0, 0.2, 3.0, -1.0];
        let g = GenTree::Sum(vec![GenTree::Leaf, GenTree::Leaf]);
        let r = fit_gentree(&g, &ds(&xs, &ys), &SearchConfig::default(), None).unwrap();
        let f = r.formula.unwrap();
        let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (f.eval(&[*x]).unwrap() - y).powi(2)).sum();
        assert!((sse - r.sse).abs() <= 1e-9 * sse.max(1e-300));
    }

    #[test]
    fn empty_data_rejected() {
        let d = Dataset { x: vec![], y: vec![], ..ds(&[1.0], &[1.0]) };
        assert!(matches!(fit_gentree(&GenTree::Leaf, &d, &SearchConfig::default(), None), Err(FitError::EmptyData)));
    }
}
