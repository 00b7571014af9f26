use super::{LinExpr, MilpError, MilpModel, Sense, VarId};

/// Variables created for one ReLU neuron. `z` is absent when the
/// activation pattern was fixed in advance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReluVars {
    pub x: VarId,
    pub s: VarId,
    pub z: Option<VarId>,
}

/// Big-M ReLU block `pre + bias = x - s`, `x <= U z`, `s <= -L (1 - z)`.
///
/// `suffix` is appended to the variable prefixes `H`, `S`, `Z` and to the row
/// families `aff`, `reluub`, `relulb`. With `fixed_z = Some(b)` the binary is
/// replaced by the constant and the big-M row it controls becomes a bound.
pub fn add_relu(
    model: &mut MilpModel,
    suffix: &str,
    pre: &LinExpr,
    bias: f64,
    lower: f64,
    upper: f64,
    fixed_z: Option<bool>,
) -> Result<ReluVars, MilpError> {
    if !(lower <= upper) || !lower.is_finite() || !upper.is_finite() {
        return Err(MilpError::Bounds {
            name: format!("H_{suffix}"),
            lb: lower,
            ub: upper,
        });
    }
    let x_ub = upper.max(0.0);
    let s_ub = (-lower).max(0.0);
    let (x_ub, s_ub) = match fixed_z {
        Some(true) => (x_ub, 0.0),
        Some(false) => (0.0, s_ub),
        None => (x_ub, s_ub),
    };
    let x = model.add_continuous(format!("H_{suffix}"), 0.0, x_ub)?;
    let s = model.add_continuous(format!("S_{suffix}"), 0.0, s_ub)?;

    let mut aff = pre.clone();
    aff.add(x, -1.0).add(s, 1.0);
    model.add_constraint(format!("aff_{suffix}"), &aff, Sense::Eq, -bias)?;

    let z = match fixed_z {
        Some(_) => None,
        None => {
            let z = model.add_binary(format!("Z_{suffix}"))?;
            // x - U z <= 0
            model.add_constraint(
                format!("reluub_{suffix}"),
                &LinExpr::from_terms([(x, 1.0), (z, -upper)]),
                Sense::Le,
                0.0,
            )?;
            // s - L z <= -L
            model.add_constraint(
                format!("relulb_{suffix}"),
                &LinExpr::from_terms([(s, 1.0), (z, -lower)]),
                Sense::Le,
                -lower,
            )?;
            Some(z)
        }
    };
    Ok(ReluVars { x, s, z })
}

/// Continuous variable `name = expr + constant` with the given bounds.
pub fn add_linear(
    model: &mut MilpModel,
    name: &str,
    row: &str,
    expr: &LinExpr,
    constant: f64,
    lower: f64,
    upper: f64,
) -> Result<VarId, MilpError> {
    let v = model.add_continuous(name, lower, upper)?;
    let mut e = expr.clone();
    e.add(v, -1.0);
    model.add_constraint(row, &e, Sense::Eq, -constant)?;
    Ok(v)
}

/// Support variable `b = binary * cont` using big-M value `m`.
///
/// Rows: `-M g <= b <= M g` and `cont - M (1 - g) <= b <= cont + M (1 - g)`.
/// When `cont` is nonnegative the lower gate is the bound `b >= 0` and the
/// upper sandwich reduces to `b <= cont`. Rows are named `<family>_<suffix>_<k>`.
/// A value of `m` below the attainable magnitude of `cont` is accepted and
/// simply cuts off part of the feasible set.
pub fn add_indicator_product(
    model: &mut MilpModel,
    name: &str,
    family: &str,
    suffix: &str,
    binary: VarId,
    cont: VarId,
    m: f64,
) -> Result<VarId, MilpError> {
    let (lo, hi) = {
        let v = model.variable(cont);
        (v.lb, v.ub)
    };
    if !m.is_finite() || m < 0.0 || (m == 0.0 && (hi > 0.0 || lo < 0.0)) {
        return Err(MilpError::Modeling(format!(
            "big-M {m} for `{name}` cannot bound `{}` in [{lo}, {hi}]",
            model.variable(cont).name
        )));
    }
    let nonneg = lo >= 0.0;
    let b = model.add_continuous(name, if nonneg { 0.0 } else { -m }, m)?;
    let row = |k: usize| format!("{family}_{suffix}_{k}");
    model.add_constraint(
        row(0),
        &LinExpr::from_terms([(b, 1.0), (binary, -m)]),
        Sense::Le,
        0.0,
    )?;
    if nonneg {
        model.add_constraint(
            row(1),
            &LinExpr::from_terms([(b, 1.0), (cont, -1.0)]),
            Sense::Le,
            0.0,
        )?;
        model.add_constraint(
            row(2),
            &LinExpr::from_terms([(b, 1.0), (cont, -1.0), (binary, -m)]),
            Sense::Ge,
            -m,
        )?;
    } else {
        model.add_constraint(
            row(1),
            &LinExpr::from_terms([(b, 1.0), (binary, m)]),
            Sense::Ge,
            0.0,
        )?;
        model.add_constraint(
            row(2),
            &LinExpr::from_terms([(b, 1.0), (cont, -1.0), (binary, -m)]),
            Sense::Ge,
            -m,
        )?;
        model.add_constraint(
            row(3),
            &LinExpr::from_terms([(b, 1.0), (cont, -1.0), (binary, m)]),
            Sense::Le,
            m,
        )?;
    }
    Ok(b)
}
