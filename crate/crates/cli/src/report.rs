use std::fmt::Write as _;

use axiomfit_core::reason::{AuditReport, DepFlag, ErrorQuad, Witness};
use axiomfit_core::ParetoPoint;
use serde::Serialize;

use crate::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub seed: Option<u64>,
    pub config: Option<RunConfig>,
    pub data: Option<DataSummary>,
    pub candidates: Vec<Candidate>,
    pub pareto_front: Option<Vec<FrontPoint>>,
    pub knee: Option<usize>,
    pub counterexample: Option<Witness>,
    pub search: Option<SearchSummary>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SearchSummary {
    pub trees: usize,
    pub rounds: usize,
    pub cancelled: usize,
    pub elapsed_s: f64,
}

impl Report {
    pub fn new(command: &str) -> Report {
        Report {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            seed: None,
            config: None,
            data: None,
            candidates: Vec::new(),
            pareto_front: None,
            knee: None,
            counterexample: None,
            search: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DataSummary {
    pub path: String,
    pub rows: usize,
    pub variables: Vec<String>,
    pub target: String,
    /// Divisor per column, variables then target.
    pub divisors: Vec<f64>,
    pub extra_point: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Candidate {
    pub rank: usize,
    pub sse: Option<f64>,
    pub status: Option<String>,
    #[serde(flatten)]
    pub audit: AuditReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct FrontPoint {
    pub complexity: f64,
    pub score: f64,
    pub label: String,
}

impl From<&ParetoPoint> for FrontPoint {
    fn from(p: &ParetoPoint) -> Self {
        FrontPoint { complexity: p.complexity, score: p.score, label: p.label.clone() }
    }
}

fn num(v: Option<f64>) -> String {
    match v {
        Some(v) if v.abs() >= 1e5 || (v != 0.0 && v.abs() < 1e-4) => format!("{v:.3e}"),
        Some(v) => format!("{v:.5}"),
        None => "-".to_string(),
    }
}

fn pair(q: Option<&ErrorQuad>) -> (String, String) {
    (num(q.map(|q| q.rel_l2)), num(q.map(|q| q.rel_linf)))
}

/// Plain-text rendering for terminals.
pub fn table(r: &Report) -> String {
    let mut s = String::new();
    if let Some(d) = &r.data {
        let _ = writeln!(s, "data: {} ({} rows; {} -> {})", d.path, d.rows, d.variables.join(", "), d.target);
    }
    if let Some(seed) = r.seed {
        let _ = writeln!(s, "seed: {seed}");
    }
    if !r.candidates.is_empty() {
        let _ = writeln!(
            s,
            "{:>4} {:>4} {:>11} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8} {:>6}  formula",
            "rank", "C", "sse", "eps2_r", "epsinf_r", "beta2_r", "betainf_r", "gen_r", "deps", "thermo"
        );
        for c in &r.candidates {
            let a = &c.audit;
            let (e2, ei) = pair(a.numerical.as_ref());
            let (b2, bi) = pair(a.pointwise.as_ref());
            let deps = a
                .dependence
                .as_ref()
                .map(|d| d.iter().map(|x| if x.flag == DepFlag::Correct { 'c' } else { 'm' }).collect())
                .unwrap_or_else(|| "-".to_string());
            let thermo = a.thermo.as_ref().map(|t| format!("{}/5", t.satisfied)).unwrap_or_else(|| "-".to_string());
            let _ = writeln!(
                s,
                "{:>4} {:>4} {:>11} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8} {:>6}  {}",
                c.rank,
                a.complexity,
                num(c.sse),
                e2,
                ei,
                b2,
                bi,
                num(a.generalization.as_ref().map(|g| g.value)),
                deps,
                thermo,
                a.formula
            );
            if let Some(t) = &a.template {
                let verdict = if t.consistent { "consistent" } else { "inconsistent" };
                let _ = writeln!(s, "     template {:?}: {verdict} (residual {})", t.family, num(Some(t.sup_residual)));
            }
            for n in &a.notes {
                let _ = writeln!(s, "     note: {n}");
            }
        }
    } else if r.pareto_front.is_none() && r.counterexample.is_none() {
        let _ = writeln!(s, "no candidates");
    }
    if let Some(front) = &r.pareto_front {
        let _ = writeln!(s, "pareto front:");
        for (i, p) in front.iter().enumerate() {
            let mark = if r.knee == Some(i) { " <- knee" } else { "" };
            let _ = writeln!(s, "  {:>3} {:>10} {:>14}  {}{mark}", i, p.complexity, num(Some(p.score)), p.label);
        }
    }
    if r.command == "counterexample" {
        match &r.counterexample {
            Some(w) => {
                let _ = writeln!(
                    s,
                    "counterexample at {:?}: formula {} vs derived {} (relative error {})",
                    w.point,
                    num(Some(w.formula_value)),
                    num(Some(w.derived_value)),
                    num(Some(w.relative_error))
                );
            }
            None => {
                let _ = writeln!(s, "no counterexample found");
            }
        }
    }
    s
}
