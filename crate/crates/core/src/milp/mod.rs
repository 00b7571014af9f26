//! Solver-agnostic MILP representation.
//!
//! Variables and constraints carry deterministic names. The prefix of a
//! constraint name (up to the first `_`) is its family, which is how
//! [`constraint_stats`] groups rows; variable names decode into semantic
//! roles through [`Role::parse`].

mod gadgets;
mod lp_format;
mod mps;
mod solution;

pub use gadgets::{add_indicator_product, add_linear, add_relu, ReluVars};
pub use lp_format::{parse_lp, read_lp, to_lp_string, write_lp};
pub use mps::{parse_mps, read_mps, to_mps_string, write_mps};
pub use solution::{parse_solution, read_solution, to_solution_string, write_solution};

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

/// Feasibility tolerance for constraint rows.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Distance from {0, 1} tolerated on binary variables.
pub const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("variable `{0}` already exists")]
    DuplicateName(String),
    #[error("invalid bounds on `{name}`: [{lb}, {ub}]")]
    Bounds { name: String, lb: f64, ub: f64 },
    #[error("constraint `{0}` has a non-finite coefficient or right-hand side")]
    NonFinite(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("modeling error: {0}")]
    Modeling(String),
    #[error("binary `{name}` has value {value}, not within {tol} of 0 or 1")]
    Integrality { name: String, value: f64, tol: f64 },
    #[error("constraint `{name}` violated by {violation:.3e}")]
    Violated { name: String, violation: f64 },
    #[error("value {value} of `{name}` outside bounds [{lb}, {ub}]")]
    OutOfBounds {
        name: String,
        value: f64,
        lb: f64,
        ub: f64,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MilpError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        MilpError::Parse {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lb: f64,
    pub ub: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjSense {
    Maximize,
    Minimize,
}

/// Linear expression accumulated term by term; repeated variables merge.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    terms: BTreeMap<VarId, f64>,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (VarId, f64)>) -> Self {
        let mut e = Self::new();
        for (v, c) in terms {
            e.add(v, c);
        }
        e
    }

    pub fn add(&mut self, var: VarId, coeff: f64) -> &mut Self {
        if coeff != 0.0 {
            *self.terms.entry(var).or_insert(0.0) += coeff;
        }
        self
    }

    pub fn add_expr(&mut self, other: &LinExpr, scale: f64) -> &mut Self {
        for (&v, &c) in &other.terms {
            self.add(v, c * scale);
        }
        self
    }

    pub fn is_empty(&self) -> bool {
        self.terms.values().all(|c| *c == 0.0)
    }

    /// Terms in variable-id order, with cancelled coefficients dropped.
    pub fn terms(&self) -> Vec<(VarId, f64)> {
        self.terms
            .iter()
            .filter(|(_, c)| **c != 0.0)
            .map(|(v, c)| (*v, *c))
            .collect()
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|(v, c)| c * values[v.0]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl LinearConstraint {
    /// Text before the first `_` of the name.
    pub fn family(&self) -> &str {
        family_of(&self.name)
    }

    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violate the row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let a = self.activity(values);
        match self.sense {
            Sense::Le => (a - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - a).max(0.0),
            Sense::Eq => (a - self.rhs).abs(),
        }
    }
}

pub fn family_of(name: &str) -> &str {
    name.split('_').next().unwrap_or(name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub sense: ObjSense,
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

/// A mixed-integer linear program over continuous and binary variables.
#[derive(Debug, Clone)]
pub struct MilpModel {
    variables: Vec<Variable>,
    constraints: Vec<LinearConstraint>,
    objective: Objective,
    index: HashMap<String, VarId>,
    constraint_names: HashMap<String, usize>,
    priority: Vec<u32>,
}

impl Default for MilpModel {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for MilpModel {
    fn eq(&self, other: &Self) -> bool {
        self.variables == other.variables
            && self.constraints == other.constraints
            && self.objective == other.objective
    }
}

impl MilpModel {
    pub fn new() -> Self {
        Self {
            variables: Vec::new(),
            constraints: Vec::new(),
            objective: Objective {
                sense: ObjSense::Maximize,
                terms: Vec::new(),
                constant: 0.0,
            },
            index: HashMap::new(),
            constraint_names: HashMap::new(),
            priority: Vec::new(),
        }
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lb: f64,
        ub: f64,
    ) -> Result<VarId, MilpError> {
        let name = name.into();
        check_bounds(&name, kind, lb, ub)?;
        if self.index.contains_key(&name) {
            return Err(MilpError::DuplicateName(name));
        }
        let id = VarId(self.variables.len());
        self.index.insert(name.clone(), id);
        self.variables.push(Variable { name, kind, lb, ub });
        self.priority.push(0);
        Ok(id)
    }

    pub fn add_continuous(
        &mut self,
        name: impl Into<String>,
        lb: f64,
        ub: f64,
    ) -> Result<VarId, MilpError> {
        self.add_var(name, VarKind::Continuous, lb, ub)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> Result<VarId, MilpError> {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
    }

    /// Adds `expr sense rhs`. Returns the row index, or `None` when the
    /// expression is empty and the row trivially holds.
    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        expr: &LinExpr,
        sense: Sense,
        rhs: f64,
    ) -> Result<Option<usize>, MilpError> {
        let name = name.into();
        let terms = expr.terms();
        if !rhs.is_finite() || terms.iter().any(|(_, c)| !c.is_finite()) {
            return Err(MilpError::NonFinite(name));
        }
        if let Some((v, _)) = terms.iter().find(|(v, _)| v.0 >= self.variables.len()) {
            return Err(MilpError::UnknownVariable(v.to_string()));
        }
        if terms.is_empty() {
            let holds = match sense {
                Sense::Le => 0.0 <= rhs + FEASIBILITY_TOL,
                Sense::Ge => 0.0 >= rhs - FEASIBILITY_TOL,
                Sense::Eq => rhs.abs() <= FEASIBILITY_TOL,
            };
            if holds {
                return Ok(None);
            }
            return Err(MilpError::Modeling(format!(
                "constraint `{name}` has no terms and cannot hold"
            )));
        }
        if self.constraint_names.contains_key(&name) {
            return Err(MilpError::DuplicateName(name));
        }
        let row = self.constraints.len();
        self.constraint_names.insert(name.clone(), row);
        self.constraints.push(LinearConstraint {
            name,
            terms,
            sense,
            rhs,
        });
        Ok(Some(row))
    }

    pub fn set_objective(&mut self, sense: ObjSense, expr: &LinExpr, constant: f64) {
        self.objective = Objective {
            sense,
            terms: expr.terms(),
            constant,
        };
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, id: VarId) -> &Variable {
        &self.variables[id.0]
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.index.get(name).copied()
    }

    pub fn constraint_by_name(&self, name: &str) -> Option<&LinearConstraint> {
        self.constraint_names
            .get(name)
            .map(|&r| &self.constraints[r])
    }

    pub fn binaries(&self) -> impl Iterator<Item = VarId> + '_ {
        self.variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| VarId(i))
    }

    /// Tightens the bounds of an existing variable, e.g. to freeze an input.
    pub fn set_bounds(&mut self, id: VarId, lb: f64, ub: f64) -> Result<(), MilpError> {
        let v = &self.variables[id.0];
        check_bounds(&v.name, v.kind, lb, ub)?;
        let v = &mut self.variables[id.0];
        v.lb = lb;
        v.ub = ub;
        Ok(())
    }

    /// Branching priority; among fractional binaries the solver only
    /// considers those with the highest priority. Defaults to 0.
    pub fn set_branch_priority(&mut self, id: VarId, priority: u32) {
        self.priority[id.0] = priority;
    }

    pub fn branch_priority(&self, id: VarId) -> u32 {
        self.priority[id.0]
    }

    pub fn fix(&mut self, id: VarId, value: f64) -> Result<(), MilpError> {
        self.set_bounds(id, value, value)
    }

    /// Checks that the model is internally consistent.
    pub fn validate(&self) -> Result<(), MilpError> {
        for v in &self.variables {
            check_bounds(&v.name, v.kind, v.lb, v.ub)?;
        }
        if self.objective.terms.is_empty() {
            return Err(MilpError::Modeling("objective is empty".into()));
        }
        let n = self.variables.len();
        for c in &self.constraints {
            let mut seen = std::collections::HashSet::new();
            for (v, coeff) in &c.terms {
                if v.0 >= n {
                    return Err(MilpError::UnknownVariable(v.to_string()));
                }
                if !coeff.is_finite() {
                    return Err(MilpError::NonFinite(c.name.clone()));
                }
                if !seen.insert(*v) {
                    return Err(MilpError::Modeling(format!(
                        "variable {} repeated in `{}`",
                        self.variables[v.0].name, c.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.constant
            + self
                .objective
                .terms
                .iter()
                .map(|(v, c)| c * values[v.0])
                .sum::<f64>()
    }

    /// Verifies bounds, integrality and every row of `values`.
    pub fn check(&self, values: &[f64], feas_tol: f64, int_tol: f64) -> Result<(), MilpError> {
        if values.len() != self.variables.len() {
            return Err(MilpError::Modeling(format!(
                "assignment has {} values for {} variables",
                values.len(),
                self.variables.len()
            )));
        }
        for (v, &x) in self.variables.iter().zip(values) {
            if x < v.lb - feas_tol || x > v.ub + feas_tol || !x.is_finite() {
                return Err(MilpError::OutOfBounds {
                    name: v.name.clone(),
                    value: x,
                    lb: v.lb,
                    ub: v.ub,
                });
            }
            if v.kind == VarKind::Binary && (x - x.round()).abs() > int_tol {
                return Err(MilpError::Integrality {
                    name: v.name.clone(),
                    value: x,
                    tol: int_tol,
                });
            }
        }
        for c in &self.constraints {
            // scale the tolerance with the row's magnitude
            let scale = 1.0_f64.max(c.rhs.abs());
            let viol = c.violation(values);
            if viol > feas_tol * scale {
                return Err(MilpError::Violated {
                    name: c.name.clone(),
                    violation: viol,
                });
            }
        }
        Ok(())
    }

    /// Copy of the model with an extra row `objective >= cutoff` (for
    /// maximisation; `<=` for minimisation).
    pub fn with_objective_cutoff(&self, cutoff: f64) -> Result<MilpModel, MilpError> {
        let mut m = self.clone();
        let expr = LinExpr::from_terms(self.objective.terms.iter().copied());
        let rhs = cutoff - self.objective.constant;
        let sense = match self.objective.sense {
            ObjSense::Maximize => Sense::Ge,
            ObjSense::Minimize => Sense::Le,
        };
        m.add_constraint("cutoff_objective", &expr, sense, rhs)?;
        Ok(m)
    }
}

fn check_bounds(name: &str, kind: VarKind, lb: f64, ub: f64) -> Result<(), MilpError> {
    let bad = || MilpError::Bounds {
        name: name.to_string(),
        lb,
        ub,
    };
    if lb.is_nan() || ub.is_nan() || lb > ub || lb == f64::INFINITY || ub == f64::NEG_INFINITY {
        return Err(bad());
    }
    if kind == VarKind::Binary && !((lb == 0.0 || lb == 1.0) && (ub == 0.0 || ub == 1.0)) {
        return Err(bad());
    }
    Ok(())
}

/// A complete variable assignment with its objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub values: Vec<f64>,
    pub objective_value: f64,
}

impl Assignment {
    pub fn value(&self, id: VarId) -> f64 {
        self.values[id.0]
    }

    pub fn value_of(&self, model: &MilpModel, name: &str) -> Option<f64> {
        model.var_by_name(name).map(|id| self.values[id.0])
    }
}

/// Semantic role of a variable, recovered from its name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Adjacency {
        i: usize,
        l: usize,
    },
    Feature {
        node: usize,
        feature: usize,
    },
    DoubleBond {
        i: usize,
        l: usize,
    },
    TripleBond {
        i: usize,
        l: usize,
    },
    Neuron {
        layer: usize,
        node: usize,
        feature: usize,
    },
    NegativePart {
        layer: usize,
        node: usize,
        feature: usize,
    },
    Activation {
        layer: usize,
        node: usize,
        feature: usize,
    },
    DenseNeuron {
        layer: usize,
        feature: usize,
    },
    Pooled {
        feature: usize,
    },
    Output,
    Other,
}

impl Role {
    pub fn parse(name: &str) -> Role {
        let mut parts = name.split('_');
        let head = parts.next().unwrap_or("");
        let idx: Option<Vec<usize>> = parts.map(|p| p.parse().ok()).collect();
        let Some(idx) = idx else {
            return Role::Other;
        };
        match (head, idx.as_slice()) {
            ("A", &[i, l]) => Role::Adjacency { i, l },
            ("X", &[node, feature]) => Role::Feature { node, feature },
            ("DB", &[i, l]) => Role::DoubleBond { i, l },
            ("TB", &[i, l]) => Role::TripleBond { i, l },
            ("H", &[layer, node, feature]) => Role::Neuron {
                layer,
                node,
                feature,
            },
            ("S", &[layer, node, feature]) => Role::NegativePart {
                layer,
                node,
                feature,
            },
            ("Z", &[layer, node, feature]) => Role::Activation {
                layer,
                node,
                feature,
            },
            ("H", &[layer, feature]) => Role::DenseNeuron { layer, feature },
            ("POOL", &[feature]) => Role::Pooled { feature },
            ("OUT", &[]) => Role::Output,
            _ => Role::Other,
        }
    }
}

/// Number of rows per constraint family.
pub fn constraint_stats(model: &MilpModel) -> BTreeMap<String, usize> {
    let mut stats = BTreeMap::new();
    for c in model.constraints() {
        *stats.entry(c.family().to_string()).or_insert(0) += 1;
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linexpr_merges_and_cancels() {
        let mut e = LinExpr::new();
        e.add(VarId(2), 1.0).add(VarId(0), 2.0).add(VarId(2), -1.0);
        assert_eq!(e.terms(), vec![(VarId(0), 2.0)]);
    }

    #[test]
    fn binary_bounds_are_zero_one() {
        let mut m = MilpModel::new();
        assert!(m.add_var("b", VarKind::Binary, 0.0, 0.5).is_err());
        let b = m.add_binary("b").unwrap();
        assert!(m.fix(b, 1.0).is_ok());
        assert!(m.fix(b, 0.3).is_err());
        assert!(matches!(
            m.add_binary("b"),
            Err(MilpError::DuplicateName(_))
        ));
    }

    #[test]
    fn check_reports_named_violation() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 10.0).unwrap();
        m.add_constraint("cap_x", &LinExpr::from_terms([(x, 1.0)]), Sense::Le, 1.0)
            .unwrap();
        assert!(m.check(&[1.0], FEASIBILITY_TOL, INTEGRALITY_TOL).is_ok());
        match m.check(&[2.0], FEASIBILITY_TOL, INTEGRALITY_TOL) {
            Err(MilpError::Violated { name, .. }) => assert_eq!(name, "cap_x"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn roles_decode_from_names() {
        assert_eq!(Role::parse("A_0_3"), Role::Adjacency { i: 0, l: 3 });
        assert_eq!(
            Role::parse("H_2_1_7"),
            Role::Neuron {
                layer: 2,
                node: 1,
                feature: 7
            }
        );
        assert_eq!(Role::parse("OUT"), Role::Output);
        assert_eq!(Role::parse("SHAT_0_1"), Role::Other);
    }

    #[test]
    fn empty_rows_are_dropped_or_rejected() {
        let mut m = MilpModel::new();
        assert_eq!(
            m.add_constraint("t_0", &LinExpr::new(), Sense::Le, 1.0)
                .unwrap(),
            None
        );
        assert!(m
            .add_constraint("t_1", &LinExpr::new(), Sense::Ge, 1.0)
            .is_err());
    }

    #[test]
    fn stats_group_by_prefix() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 1.0).unwrap();
        let e = LinExpr::from_terms([(x, 1.0)]);
        m.add_constraint("sup_0", &e, Sense::Le, 1.0).unwrap();
        m.add_constraint("sup_1", &e, Sense::Le, 1.0).unwrap();
        m.add_constraint("pool_0", &e, Sense::Le, 1.0).unwrap();
        let s = constraint_stats(&m);
        assert_eq!(s["sup"], 2);
        assert_eq!(s["pool"], 1);
        assert!(constraint_stats(&MilpModel::new()).is_empty());
    }
}
