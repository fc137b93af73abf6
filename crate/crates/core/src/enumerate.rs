//! Gentree enumeration with pruning.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::expr::{BinOp, Formula, LMonomial, UnOp};

/// Operator-labelled tree whose leaves are undetermined L-monomials.
///
/// `Sum` is the merged `+`/`-` node; each summand after the first carries a sign chosen at
/// fit time. A sum of bare leaves is kept flat (`L + L + L`); any other sum is binary with
/// its two children in canonical order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum GenTree {
    Leaf,
    Sum(Vec<GenTree>),
    Mul(Box<GenTree>, Box<GenTree>),
    Div(Box<GenTree>, Box<GenTree>),
    Unary(UnOp, Box<GenTree>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    /// `L * L` or `L / L`.
    R1,
    /// `L * (L + L)`.
    R2a,
    /// `(L + L) * (L + L)`.
    R2b,
    /// `(L + L) / L`.
    R3,
    /// `sqrt(L)`.
    SqrtLeaf,
    /// A quotient used as a factor: `(a / b) * c`.
    QuotientFactor,
    /// A monomial times a root: `L * sqrt(a)`.
    LeafTimesRoot,
    /// A quotient as numerator or denominator of another quotient.
    NestedQuotient,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::R1 => "R1",
            Rule::R2a => "R2a",
            Rule::R2b => "R2b",
            Rule::R3 => "R3",
            Rule::SqrtLeaf => "sqrtL",
            Rule::QuotientFactor => "quotient-factor",
            Rule::LeafTimesRoot => "leaf-times-root",
            Rule::NestedQuotient => "nested-quotient",
        };
        f.write_str(s)
    }
}

impl GenTree {
    pub fn is_leaf(&self) -> bool {
        matches!(self, GenTree::Leaf)
    }

    /// A sum whose summands are all bare leaves.
    pub fn is_pure_sum(&self) -> bool {
        matches!(self, GenTree::Sum(c) if c.iter().all(GenTree::is_leaf))
    }

    fn is_quotient(&self) -> bool {
        matches!(self, GenTree::Div(..))
    }

    fn is_root(&self) -> bool {
        matches!(self, GenTree::Unary(UnOp::Sqrt, _))
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            GenTree::Leaf => 1,
            GenTree::Sum(c) => c.iter().map(GenTree::leaf_count).sum(),
            GenTree::Mul(a, b) | GenTree::Div(a, b) => a.leaf_count() + b.leaf_count(),
            GenTree::Unary(_, a) => a.leaf_count(),
        }
    }

    /// Number of summands that carry a sign choice.
    pub fn sign_slots(&self) -> usize {
        match self {
            GenTree::Leaf => 0,
            GenTree::Sum(c) => c.len() - 1 + c.iter().map(GenTree::sign_slots).sum::<usize>(),
            GenTree::Mul(a, b) | GenTree::Div(a, b) => a.sign_slots() + b.sign_slots(),
            GenTree::Unary(_, a) => a.sign_slots(),
        }
    }

    /// Depth in edges; a flat sum of `k` leaves counts as a balanced binary tree.
    pub fn depth(&self) -> usize {
        match self {
            GenTree::Leaf => 0,
            GenTree::Sum(c) if self.is_pure_sum() => ceil_log2(c.len()),
            GenTree::Sum(c) => 1 + c.iter().map(GenTree::depth).max().unwrap_or(0),
            GenTree::Mul(a, b) | GenTree::Div(a, b) => 1 + a.depth().max(b.depth()),
            GenTree::Unary(_, a) => 1 + a.depth(),
        }
    }

    /// Internal nodes (a `k`-way sum counts `k - 1`) plus one per leaf.
    pub fn complexity(&self) -> usize {
        match self {
            GenTree::Leaf => 1,
            GenTree::Sum(c) => c.len() - 1 + c.iter().map(GenTree::complexity).sum::<usize>(),
            GenTree::Mul(a, b) | GenTree::Div(a, b) => 1 + a.complexity() + b.complexity(),
            GenTree::Unary(_, a) => 1 + a.complexity(),
        }
    }

    pub fn serialize(&self) -> String {
        match self {
            GenTree::Leaf => "L".to_string(),
            GenTree::Sum(c) => {
                let parts: Vec<String> = c.iter().map(GenTree::serialize).collect();
                format!("({})", parts.join(" + "))
            }
            GenTree::Mul(a, b) => format!("({} * {})", a.serialize(), b.serialize()),
            GenTree::Div(a, b) => format!("({} / {})", a.serialize(), b.serialize()),
            GenTree::Unary(op, a) => {
                let name = match op {
                    UnOp::Sqrt => "sqrt",
                    UnOp::Exp => "exp",
                    UnOp::Log => "log",
                    UnOp::Abs => "abs",
                    UnOp::Powi(_) => "powi",
                };
                format!("{name}({})", a.serialize())
            }
        }
    }

    /// Binds leaves (depth-first order) and summand signs (`true` = minus) to get a formula.
    pub fn instantiate(&self, leaves: &[LMonomial], minus: &[bool]) -> Formula {
        let mut li = 0;
        let mut si = 0;
        self.build(leaves, minus, &mut li, &mut si)
    }

    fn build(&self, leaves: &[LMonomial], minus: &[bool], li: &mut usize, si: &mut usize) -> Formula {
        match self {
            GenTree::Leaf => {
                *li += 1;
                Formula::Leaf(leaves[*li - 1].clone())
            }
            GenTree::Sum(c) => {
                let mut acc = c[0].build(leaves, minus, li, si);
                for child in &c[1..] {
                    let neg = minus[*si];
                    *si += 1;
                    let rhs = child.build(leaves, minus, li, si);
                    acc = Formula::binary(if neg { BinOp::Sub } else { BinOp::Add }, acc, rhs);
                }
                acc
            }
            GenTree::Mul(a, b) => {
                let a = a.build(leaves, minus, li, si);
                Formula::binary(BinOp::Mul, a, b.build(leaves, minus, li, si))
            }
            GenTree::Div(a, b) => {
                let a = a.build(leaves, minus, li, si);
                Formula::binary(BinOp::Div, a, b.build(leaves, minus, li, si))
            }
            GenTree::Unary(op, a) => Formula::unary(*op, a.build(leaves, minus, li, si)),
        }
    }
}

fn ceil_log2(k: usize) -> usize {
    let mut d = 0;
    while (1usize << d) < k {
        d += 1;
    }
    d
}

/// First pruned pattern found anywhere in the tree, if any.
pub fn contains_pruned_pattern(g: &GenTree) -> Option<Rule> {
    if let Some(r) = local_rule(g) {
        return Some(r);
    }
    match g {
        GenTree::Leaf => None,
        GenTree::Sum(c) => c.iter().find_map(contains_pruned_pattern),
        GenTree::Mul(a, b) | GenTree::Div(a, b) => contains_pruned_pattern(a).or_else(|| contains_pruned_pattern(b)),
        GenTree::Unary(_, a) => contains_pruned_pattern(a),
    }
}

fn local_rule(g: &GenTree) -> Option<Rule> {
    match g {
        GenTree::Unary(UnOp::Sqrt, a) if a.is_leaf() => Some(Rule::SqrtLeaf),
        GenTree::Mul(a, b) => {
            if a.is_leaf() && b.is_leaf() {
                return Some(Rule::R1);
            }
            if a.is_pure_sum() && b.is_pure_sum() {
                return Some(Rule::R2b);
            }
            for (x, y) in [(a, b), (b, a)] {
                if x.is_leaf() && y.is_pure_sum() {
                    return Some(Rule::R2a);
                }
            }
            for (x, y) in [(a, b), (b, a)] {
                if x.is_quotient() {
                    return Some(Rule::QuotientFactor);
                }
                if x.is_leaf() && y.is_root() {
                    return Some(Rule::LeafTimesRoot);
                }
            }
            None
        }
        GenTree::Div(a, b) => {
            if a.is_leaf() && b.is_leaf() {
                return Some(Rule::R1);
            }
            if a.is_pure_sum() && b.is_leaf() {
                return Some(Rule::R3);
            }
            if a.is_quotient() || b.is_quotient() {
                return Some(Rule::NestedQuotient);
            }
            None
        }
        _ => None,
    }
}

/// Operators available to the enumeration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OperatorSet {
    pub add: bool,
    pub sub: bool,
    pub mul: bool,
    pub div: bool,
    pub sqrt: bool,
    pub exp: bool,
    pub log: bool,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EnumError {
    #[error("operator set is empty")]
    EmptyOperators,
    #[error("unknown operator '{0}'")]
    UnknownOperator(String),
    #[error("depth {0} exceeds the supported maximum of 5")]
    DepthTooLarge(usize),
}

impl OperatorSet {
    /// Parses a comma list such as `+,-,*,/,sqrt`.
    pub fn parse(spec: &str) -> Result<Self, EnumError> {
        let mut ops = OperatorSet::default();
        for tok in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "+" => ops.add = true,
                "-" => ops.sub = true,
                "*" | "x" | "×" => ops.mul = true,
                "/" | "÷" => ops.div = true,
                "sqrt" | "√" => ops.sqrt = true,
                "exp" => ops.exp = true,
                "log" => ops.log = true,
                other => return Err(EnumError::UnknownOperator(other.to_string())),
            }
        }
        if ops.is_empty() {
            return Err(EnumError::EmptyOperators);
        }
        Ok(ops)
    }

    pub fn is_empty(&self) -> bool {
        !(self.add || self.sub || self.mul || self.div || self.sqrt || self.exp || self.log)
    }

    pub fn has_sum(&self) -> bool {
        self.add || self.sub
    }

    /// The default search set `+, -, *, /, sqrt`.
    pub fn arithmetic_sqrt() -> Self {
        OperatorSet { add: true, sub: true, mul: true, div: true, sqrt: true, exp: false, log: false }
    }

    pub fn arithmetic() -> Self {
        OperatorSet { sqrt: false, ..Self::arithmetic_sqrt() }
    }
}

impl fmt::Display for OperatorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for (on, s) in [
            (self.add, "+"),
            (self.sub, "-"),
            (self.mul, "*"),
            (self.div, "/"),
            (self.sqrt, "sqrt"),
            (self.exp, "exp"),
            (self.log, "log"),
        ] {
            if on {
                parts.push(s);
            }
        }
        f.write_str(&parts.join(","))
    }
}

fn sum_of(a: &GenTree, b: &GenTree) -> GenTree {
    if (a.is_leaf() || a.is_pure_sum()) && (b.is_leaf() || b.is_pure_sum()) {
        let k = a.leaf_count() + b.leaf_count();
        return GenTree::Sum(vec![GenTree::Leaf; k]);
    }
    let (x, y) = if a.serialize() <= b.serialize() { (a, b) } else { (b, a) };
    GenTree::Sum(vec![x.clone(), y.clone()])
}

/// All pruned gentrees of depth at most `depth`, sorted by complexity then serialization.
pub fn enumerate_gentrees(ops: &OperatorSet, depth: usize) -> Result<Vec<GenTree>, EnumError> {
    if ops.is_empty() {
        return Err(EnumError::EmptyOperators);
    }
    if depth > 5 {
        return Err(EnumError::DepthTooLarge(depth));
    }
    let mut all: HashSet<GenTree> = HashSet::new();
    all.insert(GenTree::Leaf);
    let unary: Vec<UnOp> = [(ops.sqrt, UnOp::Sqrt), (ops.exp, UnOp::Exp), (ops.log, UnOp::Log)]
        .into_iter()
        .filter(|(on, _)| *on)
        .map(|(_, op)| op)
        .collect();
    for _ in 0..depth {
        let mut items: Vec<(String, GenTree)> = all.iter().map(|t| (t.serialize(), t.clone())).collect();
        items.sort_by(|a, b| a.0.cmp(&b.0));
        let mut next = all.clone();
        let mut push = |t: GenTree| {
            if local_rule(&t).is_none() {
                next.insert(t);
            }
        };
        for (_, a) in &items {
            for op in &unary {
                push(GenTree::Unary(*op, Box::new(a.clone())));
            }
        }
        for (i, (_, a)) in items.iter().enumerate() {
            for (j, (_, b)) in items.iter().enumerate() {
                if ops.has_sum() && i <= j {
                    push(sum_of(a, b));
                }
                if ops.mul {
                    push(GenTree::Mul(Box::new(a.clone()), Box::new(b.clone())));
                }
                if ops.div {
                    push(GenTree::Div(Box::new(a.clone()), Box::new(b.clone())));
                }
            }
        }
        all = next;
    }
    let mut out: Vec<(usize, String, GenTree)> = all.into_iter().map(|t| (t.complexity(), t.serialize(), t)).collect();
    out.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    Ok(out.into_iter().map(|(_, _, t)| t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(ops: &str, d: usize) -> usize {
        enumerate_gentrees(&OperatorSet::parse(ops).unwrap(), d).unwrap().len()
    }

    #[test]
    fn depth_zero_is_lone_leaf() {
        let t = enumerate_gentrees(&OperatorSet::arithmetic_sqrt(), 0).unwrap();
        assert_eq!(t, vec![GenTree::Leaf]);
    }

    #[test]
    fn shallow_counts() {
        assert_eq!(count("+,-,*,/", 1), 2);
        assert_eq!(count("+,-,*,/", 2), 6);
        assert_eq!(count("+,-,*,/", 3), 31);
        assert_eq!(count("+,-,*,/,sqrt", 1), 2);
        assert_eq!(count("+,-,*,/,sqrt", 2), 7);
        assert_eq!(count("+,-,*,/,sqrt", 3), 60);
    }

    #[test]
    fn rules() {
        let l = || Box::new(GenTree::Leaf);
        let s2 = || Box::new(GenTree::Sum(vec![GenTree::Leaf, GenTree::Leaf]));
        assert_eq!(contains_pruned_pattern(&GenTree::Mul(l(), l())), Some(Rule::R1));
        assert_eq!(contains_pruned_pattern(&GenTree::Div(l(), l())), Some(Rule::R1));
        assert_eq!(contains_pruned_pattern(&GenTree::Mul(l(), s2())), Some(Rule::R2a));
        assert_eq!(contains_pruned_pattern(&GenTree::Mul(s2(), s2())), Some(Rule::R2b));
        assert_eq!(contains_pruned_pattern(&GenTree::Div(s2(), l())), Some(Rule::R3));
        assert_eq!(contains_pruned_pattern(&GenTree::Unary(UnOp::Sqrt, l())), Some(Rule::SqrtLeaf));
        assert_eq!(contains_pruned_pattern(&GenTree::Unary(UnOp::Sqrt, s2())), None);
        let nested = GenTree::Sum(vec![GenTree::Leaf, GenTree::Div(l(), l())]);
        assert_eq!(contains_pruned_pattern(&nested), Some(Rule::R1));
    }

    #[test]
    fn no_output_is_pruned() {
        for t in enumerate_gentrees(&OperatorSet::parse("+,-,*,/,sqrt,exp,log").unwrap(), 3).unwrap() {
            assert_eq!(contains_pruned_pattern(&t), None, "{}", t.serialize());
            assert!(t.depth() <= 3);
        }
    }

    #[test]
    fn complexity_and_instantiate() {
        let s2 = GenTree::Sum(vec![GenTree::Leaf, GenTree::Leaf]);
        assert_eq!(s2.complexity(), 3);
        assert_eq!(s2.sign_slots(), 1);
        let leaves = vec![LMonomial::var(0, 1), LMonomial::constant(2.0, 1)];
        let f = s2.instantiate(&leaves, &[true]);
        assert_eq!(f.eval(&[5.0]).unwrap(), 3.0);
    }

    #[test]
    fn sorted_by_complexity() {
        let t = enumerate_gentrees(&OperatorSet::arithmetic_sqrt(), 3).unwrap();
        assert!(t.windows(2).all(|w| w[0].complexity() <= w[1].complexity()));
    }
}
