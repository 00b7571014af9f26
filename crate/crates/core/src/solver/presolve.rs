//! Bound propagation and column elimination before the search.

use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};

use crate::milp::{MilpModel, Sense, VarKind};

/// Bounds closer than this are treated as a fixed value.
const FIXED_WIDTH: f64 = 1e-9;
/// Minimum relative improvement for a continuous bound to be replaced.
const MIN_GAIN: f64 = 1e-9;

/// Activity-based bound tightening over every row, repeated until nothing
/// moves or `max_passes` is reached. Binary bounds are rounded. Returns
/// `None` when some row cannot be satisfied within `tol`.
pub(crate) fn propagate(
    model: &MilpModel,
    tol: f64,
    int_tol: f64,
    max_passes: usize,
) -> Option<Vec<(f64, f64)>> {
    let vars = model.variables();
    let mut b: Vec<(f64, f64)> = vars.iter().map(|v| (v.lb, v.ub)).collect();
    let binary: Vec<bool> = vars.iter().map(|v| v.kind == VarKind::Binary).collect();
    // every row as one or two `sign * terms <= sign * rhs` forms
    let mut forms = Vec::new();
    for c in model.constraints() {
        match c.sense {
            Sense::Le => forms.push((c, 1.0)),
            Sense::Ge => forms.push((c, -1.0)),
            Sense::Eq => {
                forms.push((c, 1.0));
                forms.push((c, -1.0));
            }
        }
    }
    let mut contrib = Vec::new();
    for _ in 0..max_passes {
        let mut changed = false;
        for &(c, s) in &forms {
            let rhs = s * c.rhs;
            contrib.clear();
            let (mut finite, mut n_inf, mut inf_at) = (0.0, 0, 0);
            for (t, &(v, a)) in c.terms.iter().enumerate() {
                let a = s * a;
                let (lo, hi) = b[v.0];
                let m = if a > 0.0 { a * lo } else { a * hi };
                if m.is_finite() {
                    finite += m;
                } else {
                    n_inf += 1;
                    inf_at = t;
                }
                contrib.push(m);
            }
            if n_inf == 0 && finite > rhs + tol * rhs.abs().max(1.0) {
                return None;
            }
            if n_inf > 1 {
                continue;
            }
            for (t, &(v, a)) in c.terms.iter().enumerate() {
                let a = s * a;
                let rest = if n_inf == 1 {
                    if t != inf_at {
                        continue;
                    }
                    finite
                } else {
                    finite - contrib[t]
                };
                let bound = (rhs - rest) / a;
                let (lo, hi) = b[v.0];
                let (mut lo2, mut hi2) = (lo, hi);
                if binary[v.0] {
                    if (a > 0.0 && bound < -int_tol) || (a < 0.0 && bound > 1.0 + int_tol) {
                        return None;
                    }
                    if a > 0.0 && bound < 1.0 - int_tol {
                        hi2 = 0.0;
                    } else if a < 0.0 && bound > int_tol {
                        lo2 = 1.0;
                    }
                } else if a > 0.0 {
                    if bound < hi - MIN_GAIN * hi.abs().max(1.0) {
                        hi2 = bound;
                    }
                } else if bound > lo + MIN_GAIN * lo.abs().max(1.0) {
                    lo2 = bound;
                }
                if lo2 == lo && hi2 == hi {
                    continue;
                }
                if lo2 > hi2 {
                    if binary[v.0] || lo2 - hi2 > tol * lo2.abs().max(1.0) {
                        return None;
                    }
                    let mid = 0.5 * (lo2 + hi2);
                    lo2 = mid;
                    hi2 = mid;
                }
                b[v.0] = (lo2, hi2);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Some(b)
}

/// LP over the columns left free by `bounds`; fixed columns are folded into
/// the right-hand sides and rows that cannot bind are dropped.
pub(crate) struct Reduced {
    pub problem: Problem,
    /// LP column of each model variable, `None` when fixed.
    pub cols: Vec<Option<Variable>>,
    /// Values of the fixed variables (unused entries are 0).
    pub fixed: Vec<f64>,
    /// Objective contribution of the fixed columns, already times `direction`.
    pub shift: f64,
}

pub(crate) fn reduce(model: &MilpModel, direction: f64, bounds: &[(f64, f64)]) -> Reduced {
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let n = model.num_vars();
    let mut obj = vec![0.0; n];
    for &(v, c) in &model.objective().terms {
        obj[v.0] += c * direction;
    }
    let mut fixed = vec![0.0; n];
    let mut shift = 0.0;
    let cols: Vec<Option<Variable>> = (0..n)
        .map(|k| {
            let (lo, hi) = bounds[k];
            if hi - lo <= FIXED_WIDTH {
                let v = 0.5 * (lo + hi);
                fixed[k] = v;
                shift += obj[k] * v;
                None
            } else {
                Some(p.add_var(obj[k], (lo, hi)))
            }
        })
        .collect();
    let mut free = Vec::new();
    for c in model.constraints() {
        free.clear();
        let mut rhs = c.rhs;
        let (mut lo_act, mut hi_act) = (0.0, 0.0);
        for &(v, a) in &c.terms {
            match cols[v.0] {
                Some(col) => {
                    free.push((col, a));
                    let (lo, hi) = bounds[v.0];
                    lo_act += (a * lo).min(a * hi);
                    hi_act += (a * lo).max(a * hi);
                }
                None => rhs -= a * fixed[v.0],
            }
        }
        let redundant = match c.sense {
            Sense::Le => hi_act <= rhs,
            Sense::Ge => lo_act >= rhs,
            Sense::Eq => free.is_empty(),
        };
        if redundant || free.is_empty() {
            continue;
        }
        let op = match c.sense {
            Sense::Le => ComparisonOp::Le,
            Sense::Ge => ComparisonOp::Ge,
            Sense::Eq => ComparisonOp::Eq,
        };
        p.add_constraint(free.iter().copied(), op, rhs);
    }
    Reduced {
        problem: p,
        cols,
        fixed,
        shift,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::LinExpr;

    #[test]
    fn chain_of_implications_fixes_everything() {
        // x = 0.4 fixed, y - x = 0.3, y <= 2 z with z binary
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.4, 0.4).unwrap();
        let y = m.add_continuous("y", -5.0, 5.0).unwrap();
        let z = m.add_binary("z").unwrap();
        m.add_constraint(
            "e",
            &LinExpr::from_terms([(y, 1.0), (x, -1.0)]),
            Sense::Eq,
            0.3,
        )
        .unwrap();
        m.add_constraint(
            "u",
            &LinExpr::from_terms([(y, 1.0), (z, -2.0)]),
            Sense::Le,
            0.0,
        )
        .unwrap();
        let b = propagate(&m, 1e-7, 1e-6, 20).unwrap();
        assert!((b[y.0].0 - 0.7).abs() < 1e-12 && (b[y.0].1 - 0.7).abs() < 1e-12);
        assert_eq!(b[z.0], (1.0, 1.0));
        let r = reduce(&m, 1.0, &b);
        assert!(r.cols.iter().all(Option::is_none));
    }

    #[test]
    fn contradiction_is_detected() {
        let mut m = MilpModel::new();
        let a = m.add_binary("a").unwrap();
        let c = m.add_binary("c").unwrap();
        m.add_constraint(
            "s",
            &LinExpr::from_terms([(a, 1.0), (c, 1.0)]),
            Sense::Ge,
            2.5,
        )
        .unwrap();
        assert!(propagate(&m, 1e-7, 1e-6, 20).is_none());
    }
}
