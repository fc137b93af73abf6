//! Axiom systems and their line-oriented file format.

use thiserror::Error;

use crate::expr::{parse, Formula, ParseError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Positive,
    NonNegative,
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Measured,
    Latent,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarDecl {
    pub name: String,
    pub sign: Sign,
    pub role: Role,
}

/// One equation `lhs = rhs`, both sides over the system's symbol table.
#[derive(Clone, Debug)]
pub struct Equation {
    pub lhs: Formula,
    pub rhs: Formula,
    pub text: String,
}

/// Equations over measured, latent and target variables that implicitly define the target.
#[derive(Clone, Debug)]
pub struct AxiomSystem {
    pub name: String,
    pub constants: Vec<(String, f64)>,
    pub vars: Vec<VarDecl>,
    pub equations: Vec<Equation>,
    /// Dataset value = SI value / divisor.
    pub normalize: Vec<(String, f64)>,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum AxiomError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Expr { line: usize, source: ParseError },
    #[error("symbol '{0}' declared twice")]
    Duplicate(String),
    #[error("system needs exactly one target variable")]
    Target,
    #[error("{equations} equations cannot determine {unknowns} unknowns")]
    Underdetermined { equations: usize, unknowns: usize },
}

impl AxiomSystem {
    /// Symbol table used by every equation: constants first, then variables.
    pub fn symbols(&self) -> Vec<&str> {
        self.constants.iter().map(|(n, _)| n.as_str()).chain(self.vars.iter().map(|v| v.name.as_str())).collect()
    }

    pub fn measured(&self) -> Vec<&VarDecl> {
        self.vars.iter().filter(|v| v.role == Role::Measured).collect()
    }

    /// Latent variables followed by the target.
    pub fn unknowns(&self) -> Vec<&VarDecl> {
        let mut u: Vec<&VarDecl> = self.vars.iter().filter(|v| v.role == Role::Latent).collect();
        u.extend(self.vars.iter().filter(|v| v.role == Role::Target));
        u
    }

    pub fn target(&self) -> &VarDecl {
        self.vars.iter().find(|v| v.role == Role::Target).expect("validated system has a target")
    }

    pub fn divisor(&self, name: &str) -> f64 {
        self.normalize.iter().find(|(n, _)| n == name).map(|(_, d)| *d).unwrap_or(1.0)
    }

    pub fn parse(text: &str) -> Result<Self, AxiomError> {
        let mut sys = AxiomSystem {
            name: String::new(),
            constants: Vec::new(),
            vars: Vec::new(),
            equations: Vec::new(),
            normalize: Vec::new(),
        };
        let mut eq_lines: Vec<(usize, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (kw, rest) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
            let rest = rest.trim();
            let err = |msg: &str| AxiomError::Syntax { line, msg: msg.to_string() };
            match kw {
                "system" => sys.name = rest.to_string(),
                "const" => {
                    let (name, value) = rest.split_once('=').ok_or_else(|| err("expected 'const <id> = <value>'"))?;
                    let name = ident(name.trim()).ok_or_else(|| err("bad constant name"))?;
                    let known: Vec<&str> = sys.constants.iter().map(|(n, _)| n.as_str()).collect();
                    let vals: Vec<f64> = sys.constants.iter().map(|(_, v)| *v).collect();
                    let f = parse(value.trim(), &known).map_err(|source| AxiomError::Expr { line, source })?;
                    let v = f.eval(&vals).map_err(|_| err("constant does not evaluate"))?;
                    sys.declare(&name)?;
                    sys.constants.push((name, v));
                }
                "var" => {
                    let mut parts = rest.split_whitespace();
                    let name = parts.next().and_then(ident).ok_or_else(|| err("bad variable name"))?;
                    let mut sign = Sign::Free;
                    let mut role = Role::Latent;
                    for p in parts {
                        match p {
                            ">0" => sign = Sign::Positive,
                            ">=0" => sign = Sign::NonNegative,
                            "measured" => role = Role::Measured,
                            "latent" => role = Role::Latent,
                            "target" => role = Role::Target,
                            other => return Err(err(&format!("unknown qualifier '{other}'"))),
                        }
                    }
                    sys.declare(&name)?;
                    sys.vars.push(VarDecl { name, sign, role });
                }
                "eq" => eq_lines.push((line, rest.to_string())),
                "normalize" => {
                    let (name, d) = rest.split_once('/').ok_or_else(|| err("expected 'normalize <id> / <number>'"))?;
                    let d: f64 = d.trim().parse().map_err(|_| err("bad divisor"))?;
                    if !(d > 0.0) {
                        return Err(err("divisor must be positive"));
                    }
                    sys.normalize.push((name.trim().to_string(), d));
                }
                _ => return Err(err(&format!("unknown keyword '{kw}'"))),
            }
        }
        let symbols: Vec<String> = sys.symbols().iter().map(|s| s.to_string()).collect();
        let refs: Vec<&str> = symbols.iter().map(String::as_str).collect();
        for (line, text) in eq_lines {
            let (l, r) = text.split_once('=').ok_or(AxiomError::Syntax { line, msg: "equation needs '='".into() })?;
            let lhs = parse(l.trim(), &refs).map_err(|source| AxiomError::Expr { line, source })?;
            let rhs = parse(r.trim(), &refs).map_err(|source| AxiomError::Expr { line, source })?;
            sys.equations.push(Equation { lhs, rhs, text });
        }
        for (name, _) in &sys.normalize {
            if !sys.vars.iter().any(|v| &v.name == name) {
                return Err(AxiomError::Syntax { line: 0, msg: format!("normalize names unknown variable '{name}'") });
            }
        }
        if sys.vars.iter().filter(|v| v.role == Role::Target).count() != 1 {
            return Err(AxiomError::Target);
        }
        let unknowns = sys.unknowns().len();
        if sys.equations.len() < unknowns {
            return Err(AxiomError::Underdetermined { equations: sys.equations.len(), unknowns });
        }
        Ok(sys)
    }

    /// Overrides a constant's value. Constants derived from it at parse time are not recomputed.
    pub fn with_constant(mut self, name: &str, value: f64) -> Result<Self, AxiomError> {
        let slot = self.constants.iter_mut().find(|(n, _)| n == name);
        match slot {
            Some(c) => c.1 = value,
            None => return Err(AxiomError::Syntax { line: 0, msg: format!("no constant named '{name}'") }),
        }
        Ok(self)
    }

    fn declare(&self, name: &str) -> Result<(), AxiomError> {
        if self.constants.iter().any(|(n, _)| n == name) || self.vars.iter().any(|v| v.name == name) {
            return Err(AxiomError::Duplicate(name.to_string()));
        }
        Ok(())
    }
}

fn ident(s: &str) -> Option<String> {
    let ok = s.chars().next().map(|c| c.is_ascii_alphabetic() || c == '_').unwrap_or(false)
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    ok.then(|| s.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_langmuir() {
        let text =
            "system langmuir\nvar p >0 measured\nvar kads >0 measured\nvar kdes >0 measured\nvar S0 >0 measured\n\
                    var S >0\nvar Sa >0\nvar rads >0\nvar rdes >0\nvar q >=0 target\n\
                    eq S0 = S + Sa\neq rads = kads*p*S\neq rdes = kdes*Sa\neq rads = rdes\neq q = Sa\n";
        let a = AxiomSystem::parse(text).unwrap();
        assert_eq!(a.measured().len(), 4);
        assert_eq!(a.unknowns().len(), 5);
        assert_eq!(a.target().name, "q");
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            AxiomSystem::parse("var x measured\nvar y target\n"),
            Err(AxiomError::Underdetermined { .. })
        ));
        assert!(matches!(AxiomSystem::parse("var x measured\n"), Err(AxiomError::Target)));
        assert!(matches!(AxiomSystem::parse("var x\nvar x target\n"), Err(AxiomError::Duplicate(_))));
        assert!(matches!(AxiomSystem::parse("var y target\neq y = z\n"), Err(AxiomError::Expr { .. })));
        assert!(matches!(AxiomSystem::parse("frobnicate\n"), Err(AxiomError::Syntax { .. })));
    }

    #[test]
    fn constants_may_use_earlier_constants() {
        let a =
            AxiomSystem::parse("const pi = 3.141592653589793\nconst tau = 2*pi\nvar y target\neq y = tau\n").unwrap();
        assert!((a.constants[1].1 - std::f64::consts::TAU).abs() < 1e-15);
    }
}
