//! Checking candidate formulas against background theory given as axioms.

mod audit;
mod axioms;
mod langmuir;
mod solve;

use serde::Serialize;

use crate::data::Dataset;
use crate::expr::Formula;

pub use audit::{
    counterexample_search, dependence_analysis, extend_interval, generalization_error, numerical_errors,
    pointwise_reasoning_errors, verify_domain, AuditError, Bounds, DepFlag, Dependence, DomainVerdict, ErrorQuad,
    GenError, GridSpec, Metric, Oracle, Witness,
};
pub use axioms::{AxiomError, AxiomSystem, Equation, Role, Sign, VarDecl};
pub use langmuir::{log_grid, template_match, thermo_check, Family, TemplateMatch, ThermoReport};
pub use solve::{solve_axioms, Solution, SolveError, Solver};

/// Everything known about one candidate; fields that do not apply stay `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AuditReport {
    pub formula: String,
    pub complexity: usize,
    pub numerical: Option<ErrorQuad>,
    pub pointwise: Option<ErrorQuad>,
    pub generalization: Option<GenError>,
    #[serde(rename = "box")]
    pub bounds: Option<Bounds>,
    pub dependence: Option<Vec<Dependence>>,
    pub thermo: Option<ThermoReport>,
    pub template: Option<TemplateMatch>,
    pub notes: Vec<String>,
}

/// What [`audit`] computes beyond the numerical errors.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditOptions {
    /// Box for the generalization error; the data's bounding box when `None`.
    pub bounds: Option<Bounds>,
    pub metric: Metric,
    pub grid: GridSpec,
    pub dependence: bool,
    pub thermo: bool,
    pub template: Option<Family>,
    pub template_grid: Vec<f64>,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            bounds: None,
            metric: Metric::Relative,
            grid: GridSpec::default(),
            dependence: false,
            thermo: false,
            template: None,
            template_grid: log_grid(1e-3, 1e3, 200),
        }
    }
}

/// Runs every requested measure on `f`; a measure that fails leaves its field empty and adds a note.
pub fn audit(f: &Formula, data: &Dataset, sys: Option<&AxiomSystem>, opts: &AuditOptions) -> AuditReport {
    let mut r = AuditReport { formula: f.to_infix(&data.names), complexity: f.complexity(), ..AuditReport::default() };
    let mut note = |what: &str, e: &dyn std::fmt::Display| r.notes.push(format!("{what}: {e}"));
    let numerical = numerical_errors(f, data).map_err(|e| note("numerical error", &e)).ok();
    let mut pointwise = None;
    let mut generalization = None;
    let mut bounds = None;
    let mut dependence = None;
    if let Some(sys) = sys {
        pointwise = pointwise_reasoning_errors(f, data, sys).map_err(|e| note("pointwise reasoning error", &e)).ok();
        let b = opts.bounds.clone().unwrap_or_else(|| data.bounding_box());
        generalization = generalization_error(f, sys, &data.names, &b, opts.metric, &opts.grid, &data.x)
            .map_err(|e| note("generalization error", &e))
            .ok();
        bounds = Some(b);
        if opts.dependence {
            dependence = dependence_analysis(f, sys, data, opts.metric, &opts.grid)
                .map(|(_, d)| d)
                .map_err(|e| note("dependence", &e))
                .ok();
        }
    }
    let thermo = (opts.thermo && data.n_vars() == 1).then(|| thermo_check(f));
    let template = opts.template.filter(|_| data.n_vars() == 1).map(|fam| template_match(f, fam, &opts.template_grid));
    if opts.thermo && data.n_vars() != 1 {
        note("thermodynamic check", &"needs a single pressure variable");
    }
    if opts.template.is_some() && data.n_vars() != 1 {
        note("template match", &"needs a single pressure variable");
    }
    r.numerical = numerical;
    r.pointwise = pointwise;
    r.generalization = generalization;
    r.bounds = bounds;
    r.dependence = dependence;
    r.thermo = thermo;
    r.template = template;
    r
}
