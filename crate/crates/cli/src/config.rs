use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use axiomfit_core::SearchConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Run configuration as read from TOML; every key is optional and command-line flags win.
#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub operators: Option<String>,
    pub depth: Option<usize>,
    pub max_constants: Option<usize>,
    pub power_bound: Option<i32>,
    pub power_budget: Option<i32>,
    pub const_bound: Option<f64>,
    pub tolerance: Option<f64>,
    pub time_slice_s: Option<f64>,
    pub budget_s: Option<f64>,
    pub seed: Option<u64>,
    pub dimensional: Option<bool>,
    pub extra_point: Option<f64>,
    pub axioms: Option<PathBuf>,
    pub units: Option<PathBuf>,
    /// Column name to divisor.
    pub normalize: Option<BTreeMap<String, f64>>,
    /// Variable name to `[lo, hi]`.
    #[serde(rename = "box")]
    pub bounds: Option<BTreeMap<String, [f64; 2]>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        // Paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.axioms, &mut cfg.units].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn search_config(&self) -> SearchConfig {
        let d = SearchConfig::default();
        SearchConfig {
            depth: self.depth.unwrap_or(d.depth),
            max_constants: self.max_constants.unwrap_or(d.max_constants),
            power_bound: self.power_bound.unwrap_or(d.power_bound),
            power_budget: self.power_budget.unwrap_or(d.power_budget),
            const_bound: self.const_bound.unwrap_or(d.const_bound),
            tolerance: self.tolerance.unwrap_or(d.tolerance),
            time_slice_s: self.time_slice_s.unwrap_or(d.time_slice_s),
            budget_s: self.budget_s.unwrap_or(d.budget_s),
            seed: self.seed.unwrap_or(d.seed),
            dimensional: self.dimensional.unwrap_or(d.dimensional),
            ..d
        }
    }
}

/// Parses `name=value`.
pub fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got '{s}'"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("'{v}' is not a number"))?;
    Ok((k.trim().to_string(), v))
}

/// Parses `name=lo:hi`.
pub fn parse_interval(s: &str) -> Result<(String, [f64; 2]), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=LO:HI, got '{s}'"))?;
    let (lo, hi) = v.split_once(':').ok_or_else(|| format!("expected LO:HI, got '{v}'"))?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("'{t}' is not a number"));
    Ok((k.trim().to_string(), [num(lo)?, num(hi)?]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_every_key() {
        let text = r#"
operators = "+,-,*,/,sqrt"
depth = 2
max_constants = 2
power_bound = 3
power_budget = 4
const_bound = 50.0
tolerance = 1e-6
time_slice_s = 1.0
budget_s = 30.0
seed = 7
dimensional = true
extra_point = 0.001
axioms = "k.axioms"
normalize = { p = 1000.0 }
box = { v = [37.0, 115.0] }
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        let sc = cfg.search_config();
        assert_eq!((sc.depth, sc.max_constants, sc.power_bound, sc.power_budget, sc.seed), (2, 2, 3, 4, 7));
        assert!(sc.dimensional);
        assert_eq!(cfg.bounds.unwrap()["v"], [37.0, 115.0]);
        assert_eq!(cfg.normalize.unwrap()["p"], 1000.0);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(toml::from_str::<RunConfig>("depht = 2").is_err());
    }

    #[test]
    fn assignments() {
        assert_eq!(parse_assignment("p=86400").unwrap(), ("p".into(), 86400.0));
        assert_eq!(parse_interval("v = 37:115").unwrap(), ("v".into(), [37.0, 115.0]));
        assert!(parse_interval("v=37").is_err());
        assert!(parse_assignment("p").is_err());
    }
}
