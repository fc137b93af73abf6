//! Enumeration-based symbolic regression and numeric axiom auditing.

pub mod data;
pub mod dd;
pub mod dims;
pub mod enumerate;
pub mod expr;
pub mod fit;
pub mod reason;
pub mod search;
pub mod select;

pub use data::{DataError, Dataset};
pub use dims::UnitVector;
pub use enumerate::{contains_pruned_pattern, enumerate_gentrees, GenTree, OperatorSet, Rule};
pub use expr::{parse, Coeff, DomainError, Formula, LMonomial};
pub use fit::{fit_gentree, FitResult, FitStatus, SearchConfig};
pub use reason::{AuditReport, AxiomSystem};
pub use search::{pareto_of_run, run_search};
pub use select::{knee_point, ParetoPoint};
