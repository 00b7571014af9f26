//! Solution files: a `# objective <v>` header, then one `name value` per line.

use std::fmt::Write as _;
use std::path::Path;

use super::{Assignment, MilpError, MilpModel, FEASIBILITY_TOL, INTEGRALITY_TOL};

pub fn to_solution_string(model: &MilpModel, assignment: &Assignment) -> String {
    let mut out = format!("# objective {:?}\n", assignment.objective_value);
    for (v, x) in model.variables().iter().zip(&assignment.values) {
        let _ = writeln!(out, "{} {:?}", v.name, x);
    }
    out
}

pub fn write_solution(
    model: &MilpModel,
    assignment: &Assignment,
    path: impl AsRef<Path>,
) -> Result<(), MilpError> {
    std::fs::write(path, to_solution_string(model, assignment))?;
    Ok(())
}

pub fn read_solution(model: &MilpModel, path: impl AsRef<Path>) -> Result<Assignment, MilpError> {
    parse_solution(model, &std::fs::read_to_string(path)?)
}

/// Parses and validates a solution against `model` at the default
/// tolerances. Every variable must be listed exactly once.
pub fn parse_solution(model: &MilpModel, text: &str) -> Result<Assignment, MilpError> {
    let mut values = vec![None; model.num_vars()];
    let mut header = None;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        if let Some(rest) = raw.strip_prefix('#') {
            let mut it = rest.split_whitespace();
            if it.next() == Some("objective") {
                let v = it
                    .next()
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| MilpError::parse(line, "objective header needs a value"))?;
                header = Some(v);
            }
            continue;
        }
        let mut it = raw.split_whitespace();
        let (Some(name), Some(value), None) = (it.next(), it.next(), it.next()) else {
            return Err(MilpError::parse(line, "expected `name value`"));
        };
        let id = model
            .var_by_name(name)
            .ok_or_else(|| MilpError::UnknownVariable(name.to_string()))?;
        let v: f64 = value
            .parse()
            .map_err(|_| MilpError::parse(line, format!("bad value `{value}`")))?;
        if values[id.0].replace(v).is_some() {
            return Err(MilpError::parse(line, format!("`{name}` listed twice")));
        }
    }
    let values: Vec<f64> = values
        .into_iter()
        .enumerate()
        .map(|(k, v)| {
            v.ok_or_else(|| {
                MilpError::Modeling(format!("no value for `{}`", model.variables()[k].name))
            })
        })
        .collect::<Result<_, _>>()?;
    model.check(&values, FEASIBILITY_TOL, INTEGRALITY_TOL)?;
    let objective_value = model.objective_value(&values);
    if let Some(h) = header {
        if (h - objective_value).abs() > FEASIBILITY_TOL * 1.0_f64.max(h.abs()) {
            return Err(MilpError::Modeling(format!(
                "header objective {h} differs from recomputed {objective_value}"
            )));
        }
    }
    Ok(Assignment {
        values,
        objective_value,
    })
}
