mod config;
mod report;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use axiomfit_core::expr::ParseError;
use axiomfit_core::reason::{self, AuditOptions, AxiomSystem, Family, GridSpec, Metric};
use axiomfit_core::search::{run_search_logged, SearchError};
use axiomfit_core::select::{knee_point, pareto_front};
use axiomfit_core::{enumerate_gentrees, parse, Dataset, Formula, OperatorSet, ParetoPoint};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{parse_assignment, parse_interval, RunConfig};
use report::{Candidate, DataSummary, FrontPoint, Report, SearchSummary};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Parser)]
#[command(name = "axiomfit", version, about = "Symbolic regression by gentree enumeration, with axiom-based auditing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print every gentree up to a depth, one per line.
    Enumerate {
        #[arg(long, default_value = "+,-,*,/,sqrt")]
        ops: String,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long)]
        count_only: bool,
    },
    /// Search for formulas fitting a dataset.
    Discover(DiscoverArgs),
    /// Score given formulas against data and, optionally, axioms.
    Audit(AuditArgs),
    /// Thermodynamic constraints on q = f(p).
    CheckThermo(FormulaArgs),
    /// Compare q = f(p) against a Langmuir isotherm family.
    MatchTemplate {
        #[command(flatten)]
        formulas: FormulaArgs,
        #[arg(long, value_enum, default_value = "one-site")]
        family: FamilyArg,
    },
    /// Nondominated points of a (complexity, score) CSV.
    Pareto(PointsArgs),
    /// Knee of the Pareto front of a (complexity, score) CSV.
    Knee {
        #[command(flatten)]
        points: PointsArgs,
        #[arg(long, default_value_t = 1.0)]
        sensitivity: f64,
    },
    /// Look for a point in a box where a formula disagrees with the axioms.
    Counterexample(CounterArgs),
}

#[derive(Args)]
struct Output {
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    units: Option<PathBuf>,
    /// Divide a column by a constant, e.g. `p=86400000`.
    #[arg(long, value_parser = parse_assignment)]
    normalize: Vec<(String, f64)>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DiscoverArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    axioms: Option<PathBuf>,
    #[arg(long)]
    ops: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    /// Maximum number of free constants.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    power_bound: Option<i32>,
    #[arg(long)]
    power_budget: Option<i32>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dimensional: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Append the point (v, ..., v) before searching.
    #[arg(long, num_args = 0..=1, default_missing_value = "0.001")]
    extra_point: Option<f64>,
    /// Number of ranked candidates to audit and report.
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[command(flatten)]
    audit: AuditFlags,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct AuditFlags {
    #[arg(long)]
    dependence: bool,
    #[arg(long)]
    thermo: bool,
    #[arg(long, value_enum)]
    template: Option<FamilyArg>,
    #[arg(long, value_enum, default_value = "relative")]
    metric: MetricArg,
    /// Grid points per variable for the generalization error.
    #[arg(long, default_value_t = 64)]
    grid: usize,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    axioms: Option<PathBuf>,
    /// Candidate formula in the dataset's variable names; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    formula: Vec<String>,
    /// File with one formula per line.
    #[arg(long)]
    formulas: Option<PathBuf>,
    /// Generalization box for one variable, e.g. `v=37:115`; repeatable.
    #[arg(long = "box", value_parser = parse_interval)]
    bounds: Vec<(String, [f64; 2])>,
    #[command(flatten)]
    audit: AuditFlags,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct FormulaArgs {
    #[arg(long, required = true, allow_hyphen_values = true)]
    formula: Vec<String>,
    /// Name of the pressure variable.
    #[arg(long, default_value = "p")]
    var: String,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct PointsArgs {
    /// CSV with header `complexity,score[,label]`.
    #[arg(long)]
    points: PathBuf,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CounterArgs {
    #[arg(long)]
    axioms: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    formula: String,
    /// Dataset supplying variable names and the default box.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated variable names when no dataset is given.
    #[arg(long, value_delimiter = ',')]
    vars: Vec<String>,
    #[arg(long = "box", value_parser = parse_interval)]
    bounds: Vec<(String, [f64; 2])>,
    /// Relative deviation that counts as a counterexample.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Maximum number of axiom solves.
    #[arg(long, default_value_t = 2000)]
    budget: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    OneSite,
    TwoSite,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Family {
        match f {
            FamilyArg::OneSite => Family::OneSite,
            FamilyArg::TwoSite => Family::TwoSite,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Relative,
    Absolute,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Metric {
        match m {
            MetricArg::Relative => Metric::Relative,
            MetricArg::Absolute => Metric::Absolute,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Enumerate { ops, depth, count_only } => {
            let ops = OperatorSet::parse(&ops).map_err(usage)?;
            let trees = enumerate_gentrees(&ops, depth).map_err(usage)?;
            let mut out = String::new();
            if count_only {
                out = format!("{}\n", trees.len());
            } else {
                for t in &trees {
                    out.push_str(&t.serialize());
                    out.push('\n');
                }
            }
            stdout(&out);
            Ok(())
        }
        Command::Discover(a) => discover(a),
        Command::Audit(a) => audit(a),
        Command::CheckThermo(a) => single_var(a, "check-thermo", None),
        Command::MatchTemplate { formulas, family } => single_var(formulas, "match-template", Some(family.into())),
        Command::Pareto(a) => front(a, None),
        Command::Knee { points, sensitivity } => front(points, Some(sensitivity)),
        Command::Counterexample(a) => counterexample(a),
    }
}

fn emit(r: &Report, out: &Output) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(r).map_err(data_err)?;
    if let Some(p) = &out.out {
        std::fs::write(p, format!("{json}\n"))
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display())))?;
    }
    if out.json {
        stdout(&format!("{json}\n"));
    } else {
        stdout(&report::table(r));
    }
    Ok(())
}

// A closed pipe (e.g. `| head`) is not an error for a batch tool.
fn stdout(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn load_axioms(path: &Path) -> Result<AxiomSystem, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    AxiomSystem::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    path.map(RunConfig::load).transpose().map(Option::unwrap_or_default)
}

/// Loads the dataset and applies normalizations from the config and then the command line.
fn load_data(a: &DataArgs, cfg: &mut RunConfig) -> Result<Dataset, CliError> {
    if a.units.is_some() {
        cfg.units = a.units.clone();
    }
    let mut data = Dataset::load(&a.data, cfg.units.as_deref())
        .map_err(|e| CliError::Data(format!("{}: {e}", a.data.display())))?;
    let norm = cfg.normalize.get_or_insert_with(BTreeMap::new);
    norm.extend(a.normalize.iter().cloned());
    for (col, div) in norm.iter() {
        data.normalize(col, *div).map_err(data_err)?;
    }
    if norm.is_empty() {
        cfg.normalize = None;
    }
    Ok(data)
}

fn summary(path: &Path, data: &Dataset, extra_point: Option<f64>) -> DataSummary {
    DataSummary {
        path: path.display().to_string(),
        rows: data.len(),
        variables: data.names.clone(),
        target: data.target.clone(),
        divisors: data.divisors.clone(),
        extra_point,
    }
}

fn parse_formula(text: &str, names: &[String]) -> Result<Formula, CliError> {
    let vars: Vec<&str> = names.iter().map(String::as_str).collect();
    parse(text, &vars).map_err(|e: ParseError| CliError::Usage(format!("formula '{text}': {e}")))
}

fn audit_options(f: &AuditFlags, bounds: Option<Vec<(f64, f64)>>) -> AuditOptions {
    AuditOptions {
        bounds,
        metric: f.metric.into(),
        grid: GridSpec { per_dim: f.grid.max(2), ..GridSpec::default() },
        dependence: f.dependence,
        thermo: f.thermo,
        template: f.template.map(Family::from),
        ..AuditOptions::default()
    }
}

/// Box from per-variable overrides on top of a default box.
fn resolve_box(
    names: &[String],
    default: Vec<(f64, f64)>,
    overrides: &BTreeMap<String, [f64; 2]>,
) -> Result<Vec<(f64, f64)>, CliError> {
    let mut b = default;
    for (name, [lo, hi]) in overrides {
        let j = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CliError::Usage(format!("box names unknown variable '{name}'")))?;
        if !(lo <= hi) {
            return Err(CliError::Usage(format!("box for '{name}' has lo > hi")));
        }
        b[j] = (*lo, *hi);
    }
    Ok(b)
}

fn discover(a: DiscoverArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.data.config.as_deref())?;
    macro_rules! set {
        ($($flag:ident => $key:ident),*) => { $(if a.$flag.is_some() { cfg.$key = a.$flag.clone(); })* };
    }
    set!(ops => operators, depth => depth, k => max_constants, power_bound => power_bound, power_budget => power_budget,
         budget => budget_s, seed => seed, extra_point => extra_point, axioms => axioms);
    if a.dimensional {
        cfg.dimensional = Some(true);
    }
    let ops_text = cfg.operators.clone().unwrap_or_else(|| "+,-,*,/,sqrt".to_string());
    let ops = OperatorSet::parse(&ops_text).map_err(usage)?;
    let data = load_data(&a.data, &mut cfg)?;
    let sys = cfg.axioms.as_deref().map(load_axioms).transpose()?;
    if let Some(v) = cfg.extra_point {
        if !(v > 0.0) {
            return Err(CliError::Usage("extra point must be positive".into()));
        }
    }
    let search_data = match cfg.extra_point {
        Some(v) => data.add_extra_point(v),
        None => data.clone(),
    };
    let mut sc = cfg.search_config();
    sc.workers = a.workers.max(1);
    sc.validate().map_err(usage)?;
    let (results, log) = run_search_logged(&search_data, &sc, &ops, data.units.as_ref()).map_err(|e| match e {
        SearchError::EmptyData => data_err(e),
        SearchError::Fit(axiomfit_core::fit::FitError::MissingUnits) => data_err(e),
        _ => usage(e),
    })?;

    let bounds = cfg.bounds.as_ref().map(|o| resolve_box(&data.names, data.bounding_box(), o)).transpose()?;
    let opts = audit_options(&a.audit, bounds);
    let mut report = Report::new("discover");
    report.seed = Some(sc.seed);
    report.data = Some(summary(&a.data.data, &search_data, cfg.extra_point));
    report.search =
        Some(SearchSummary { trees: log.trees, rounds: log.rounds, cancelled: log.cancelled, elapsed_s: log.elapsed });
    for (i, r) in results.iter().filter(|r| r.formula.is_some()).take(a.top).enumerate() {
        let f = r.formula.as_ref().expect("filtered");
        report.candidates.push(Candidate {
            rank: i + 1,
            sse: Some(r.sse),
            status: Some(r.status.as_str().to_string()),
            audit: reason::audit(f, &data, sys.as_ref(), &opts),
        });
    }
    let points: Vec<ParetoPoint> = results
        .iter()
        .filter_map(|r| {
            let f = r.formula.as_ref()?;
            Some(ParetoPoint { complexity: f.complexity() as f64, score: r.sse, label: f.to_infix(&data.names) })
        })
        .collect();
    let front = pareto_front(&points);
    report.knee = knee_point(&front, 1.0).ok();
    report.pareto_front = Some(front.iter().map(FrontPoint::from).collect());
    cfg.operators = Some(ops.to_string());
    cfg.depth = Some(sc.depth);
    cfg.max_constants = Some(sc.max_constants);
    cfg.power_bound = Some(sc.power_bound);
    cfg.power_budget = Some(sc.power_budget);
    cfg.const_bound = Some(sc.const_bound);
    cfg.tolerance = Some(sc.tolerance);
    cfg.time_slice_s = Some(sc.time_slice_s);
    cfg.budget_s = Some(sc.budget_s);
    cfg.seed = Some(sc.seed);
    cfg.dimensional = Some(sc.dimensional);
    report.config = Some(cfg);
    emit(&report, &a.output)?;
    if report.candidates.is_empty() {
        return Err(CliError::Numeric("search found no finite candidate".into()));
    }
    Ok(())
}

fn audit(a: AuditArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.data.config.as_deref())?;
    if a.axioms.is_some() {
        cfg.axioms = a.axioms.clone();
    }
    let data = load_data(&a.data, &mut cfg)?;
    let sys = cfg.axioms.as_deref().map(load_axioms).transpose()?;
    let mut texts = a.formula.clone();
    if let Some(p) = &a.formulas {
        let text =
            std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
        texts.extend(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from));
    }
    let formulas = texts.iter().map(|t| parse_formula(t, &data.names)).collect::<Result<Vec<_>, _>>()?;
    let mut overrides = cfg.bounds.clone().unwrap_or_default();
    overrides.extend(a.bounds.iter().cloned());
    let bounds =
        if overrides.is_empty() { None } else { Some(resolve_box(&data.names, data.bounding_box(), &overrides)?) };
    if !overrides.is_empty() {
        cfg.bounds = Some(overrides);
    }
    let opts = audit_options(&a.audit, bounds);
    let mut report = Report::new("audit");
    report.data = Some(summary(&a.data.data, &data, None));
    let mut failed = 0;
    for (i, f) in formulas.iter().enumerate() {
        let audit = reason::audit(f, &data, sys.as_ref(), &opts);
        failed += usize::from(!audit.notes.is_empty());
        report.candidates.push(Candidate { rank: i + 1, sse: None, status: None, audit });
    }
    report.config = Some(cfg);
    emit(&report, &a.output)?;
    if failed > 0 {
        return Err(CliError::Numeric(format!("{failed} of {} formulas could not be fully audited", formulas.len())));
    }
    Ok(())
}

fn single_var(a: FormulaArgs, command: &str, family: Option<Family>) -> Result<(), CliError> {
    let names = vec![a.var.clone()];
    let mut report = Report::new(command);
    let grid = reason::log_grid(1e-3, 1e3, 200);
    for (i, text) in a.formula.iter().enumerate() {
        let f = parse_formula(text, &names)?;
        let audit = reason::AuditReport {
            formula: f.to_infix(&names),
            complexity: f.complexity(),
            thermo: family.is_none().then(|| reason::thermo_check(&f)),
            template: family.map(|fam| reason::template_match(&f, fam, &grid)),
            ..Default::default()
        };
        report.candidates.push(Candidate { rank: i + 1, sse: None, status: None, audit });
    }
    emit(&report, &a.output)
}

fn read_points(path: &Path) -> Result<Vec<ParetoPoint>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: empty file", path.display())))?
        .split(',')
        .map(str::trim)
        .collect();
    if header.len() < 2 || header[0] != "complexity" || header[1] != "score" {
        return Err(CliError::Data(format!("{}: header needs complexity and score columns", path.display())));
    }
    let mut pts = Vec::new();
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.splitn(3, ',').map(str::trim).collect();
        if cells.len() < 2 {
            return Err(CliError::Data(format!("{}: row {} is incomplete", path.display(), row + 1)));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| CliError::Data(format!("{}: row {}: '{s}' is not a number", path.display(), row + 1)))
        };
        let label = cells.get(2).map(|s| s.to_string()).unwrap_or_default();
        pts.push(ParetoPoint { complexity: num(cells[0])?, score: num(cells[1])?, label });
    }
    Ok(pts)
}

fn front(a: PointsArgs, sensitivity: Option<f64>) -> Result<(), CliError> {
    let points = read_points(&a.points)?;
    let front = pareto_front(&points);
    let mut report = Report::new(if sensitivity.is_some() { "knee" } else { "pareto" });
    if let Some(s) = sensitivity {
        report.knee = Some(knee_point(&front, s).map_err(data_err)?);
    }
    report.pareto_front = Some(front.iter().map(FrontPoint::from).collect());
    emit(&report, &a.output)
}

fn counterexample(a: CounterArgs) -> Result<(), CliError> {
    let sys = load_axioms(&a.axioms)?;
    let (names, default_box) = match &a.data {
        Some(p) => {
            let d = Dataset::load(p, None).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            (d.names.clone(), d.bounding_box())
        }
        None if !a.vars.is_empty() => (a.vars.clone(), vec![(f64::NAN, f64::NAN); a.vars.len()]),
        None => return Err(CliError::Usage("give --data or --vars".into())),
    };
    let overrides: BTreeMap<String, [f64; 2]> = a.bounds.iter().cloned().collect();
    let bounds = resolve_box(&names, default_box, &overrides)?;
    if let Some(j) = bounds.iter().position(|(lo, _)| lo.is_nan()) {
        return Err(CliError::Usage(format!("no box given for '{}'", names[j])));
    }
    let f = parse_formula(&a.formula, &names)?;
    let witness = reason::counterexample_search(&f, &sys, &names, &bounds, a.tol, a.budget).map_err(|e| match e {
        reason::AuditError::Mapping(_) | reason::AuditError::BadBox => usage(e),
        _ => CliError::Numeric(e.to_string()),
    })?;
    let mut report = Report::new("counterexample");
    report.candidates.push(Candidate {
        rank: 1,
        sse: None,
        status: None,
        audit: reason::AuditReport {
            formula: f.to_infix(&names),
            complexity: f.complexity(),
            bounds: Some(bounds),
            ..Default::default()
        },
    });
    report.counterexample = witness;
    emit(&report, &a.output)
}
