use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};

use crate::milp::{MilpModel, ObjSense, Sense, VarId};

use super::SolverError;

/// Outcome of an LP relaxation.
#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { objective: f64, values: Vec<f64> },
    Infeasible,
    Unbounded,
}

/// Continuous relaxation of `model` as a maximisation problem whose
/// objective is the model objective times `direction` (constant excluded).
pub(crate) fn build_problem(
    model: &MilpModel,
    direction: f64,
    overrides: &[(VarId, f64, f64)],
) -> (Problem, Vec<Variable>) {
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let mut obj = vec![0.0; model.num_vars()];
    for &(v, c) in &model.objective().terms {
        obj[v.0] += c * direction;
    }
    let mut bounds: Vec<(f64, f64)> = model.variables().iter().map(|v| (v.lb, v.ub)).collect();
    for &(v, lb, ub) in overrides {
        bounds[v.0] = (lb, ub);
    }
    let vars: Vec<Variable> = obj
        .iter()
        .zip(&bounds)
        .map(|(&c, &b)| p.add_var(c, b))
        .collect();
    for c in model.constraints() {
        let op = match c.sense {
            Sense::Le => ComparisonOp::Le,
            Sense::Ge => ComparisonOp::Ge,
            Sense::Eq => ComparisonOp::Eq,
        };
        p.add_constraint(c.terms.iter().map(|&(v, k)| (vars[v.0], k)), op, c.rhs);
    }
    (p, vars)
}

pub(crate) fn direction(model: &MilpModel) -> f64 {
    match model.objective().sense {
        ObjSense::Maximize => 1.0,
        ObjSense::Minimize => -1.0,
    }
}

/// Solves the LP relaxation of `model` (binaries relaxed to their bounds).
/// The objective includes the model's constant term.
pub fn lp_relax(model: &MilpModel) -> Result<LpOutcome, SolverError> {
    let dir = direction(model);
    let (p, vars) = build_problem(model, dir, &[]);
    match p.solve() {
        Ok(outcome) => {
            let sol = outcome
                .into_solution()
                .map_err(|_| SolverError::Lp("LP solve interrupted".into()))?;
            let values: Vec<f64> = vars.iter().map(|&v| sol.var_value_raw(v)).collect();
            Ok(LpOutcome::Optimal {
                objective: dir * sol.objective() + model.objective().constant,
                values,
            })
        }
        Err(microlp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
        Err(microlp::Error::Unbounded) => Ok(LpOutcome::Unbounded),
        Err(e) => Err(SolverError::Lp(e.to_string())),
    }
}
