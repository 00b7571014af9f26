//! MPS writer and reader.
//!
//! Output follows the fixed-column layout, but names longer than eight
//! characters push later fields to the right, so the files are read back as
//! whitespace-separated (free) MPS.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::lp_format::fmt_num;
use super::{LinExpr, MilpError, MilpModel, ObjSense, Sense, VarId, VarKind};

const OBJ_ROW: &str = "obj";

fn field_line(out: &mut String, code: &str, a: &str, b: &str, value: Option<f64>) {
    let mut line = format!(" {code:<2} {a:<8}  {b:<8}");
    if let Some(v) = value {
        let _ = write!(line, "  {:>12}", fmt_num(v));
    }
    out.push_str(line.trim_end());
    out.push('\n');
}

pub fn to_mps_string(model: &MilpModel) -> String {
    let mut out = String::from("NAME          gnnopt\n");
    if model.objective().sense == ObjSense::Maximize {
        out.push_str("OBJSENSE\n    MAX\n");
    }
    out.push_str("ROWS\n");
    let _ = writeln!(out, " N  {OBJ_ROW}");
    for c in model.constraints() {
        let code = match c.sense {
            Sense::Le => "L",
            Sense::Ge => "G",
            Sense::Eq => "E",
        };
        let _ = writeln!(out, " {code}  {}", c.name);
    }

    // column-major view of the constraint matrix
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); model.num_vars()];
    for (r, c) in model.constraints().iter().enumerate() {
        for &(v, coef) in &c.terms {
            columns[v.0].push((r, coef));
        }
    }
    let mut obj = vec![0.0; model.num_vars()];
    for &(v, c) in &model.objective().terms {
        obj[v.0] = c;
    }

    out.push_str("COLUMNS\n");
    let mut in_marker = false;
    let mut marker = 0;
    for (k, var) in model.variables().iter().enumerate() {
        let binary = var.kind == VarKind::Binary;
        if binary != in_marker {
            let kind = if binary { "'INTORG'" } else { "'INTEND'" };
            let _ = writeln!(
                out,
                "    MARKER{marker:<4}           'MARKER'                 {kind}"
            );
            marker += 1;
            in_marker = binary;
        }
        if obj[k] != 0.0 || columns[k].is_empty() {
            field_line(&mut out, "", &var.name, OBJ_ROW, Some(obj[k]));
        }
        for &(r, coef) in &columns[k] {
            field_line(
                &mut out,
                "",
                &var.name,
                &model.constraints()[r].name,
                Some(coef),
            );
        }
    }
    if in_marker {
        let _ = writeln!(
            out,
            "    MARKER{marker:<4}           'MARKER'                 'INTEND'"
        );
    }

    out.push_str("RHS\n");
    let constant = model.objective().constant;
    if constant != 0.0 {
        field_line(&mut out, "", "RHS", OBJ_ROW, Some(-constant));
    }
    for c in model.constraints() {
        if c.rhs != 0.0 {
            field_line(&mut out, "", "RHS", &c.name, Some(c.rhs));
        }
    }

    out.push_str("BOUNDS\n");
    for v in model.variables() {
        if v.kind == VarKind::Binary && v.lb == 0.0 && v.ub == 1.0 {
            field_line(&mut out, "BV", "BND", &v.name, None);
        } else if v.lb == v.ub {
            field_line(&mut out, "FX", "BND", &v.name, Some(v.lb));
        } else if v.lb == f64::NEG_INFINITY && v.ub == f64::INFINITY {
            field_line(&mut out, "FR", "BND", &v.name, None);
        } else {
            if v.lb == f64::NEG_INFINITY {
                field_line(&mut out, "MI", "BND", &v.name, None);
            } else {
                field_line(&mut out, "LO", "BND", &v.name, Some(v.lb));
            }
            if v.ub == f64::INFINITY {
                field_line(&mut out, "PL", "BND", &v.name, None);
            } else {
                field_line(&mut out, "UP", "BND", &v.name, Some(v.ub));
            }
        }
    }
    out.push_str("ENDATA\n");
    out
}

pub fn write_mps(model: &MilpModel, path: impl AsRef<Path>) -> Result<(), MilpError> {
    model.validate()?;
    std::fs::write(path, to_mps_string(model))?;
    Ok(())
}

pub fn read_mps(path: impl AsRef<Path>) -> Result<MilpModel, MilpError> {
    parse_mps(&std::fs::read_to_string(path)?)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Start,
    ObjSense,
    Rows,
    Columns,
    Rhs,
    Ranges,
    Bounds,
}

struct Column {
    name: String,
    integer: bool,
    lb: Option<f64>,
    ub: Option<f64>,
    binary: bool,
}

pub fn parse_mps(text: &str) -> Result<MilpModel, MilpError> {
    let mut section = Section::Start;
    let mut sense = ObjSense::Minimize;
    let mut obj_row: Option<String> = None;
    let mut rows: Vec<(String, Sense)> = Vec::new();
    let mut row_index: HashMap<String, usize> = HashMap::new();
    let mut row_terms: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut obj_terms: Vec<(usize, f64)> = Vec::new();
    let mut obj_constant = 0.0;
    let mut cols: Vec<Column> = Vec::new();
    let mut col_index: HashMap<String, usize> = HashMap::new();
    let mut integer = false;

    let num = |tok: &str, line: usize| {
        tok.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| MilpError::parse(line, format!("expected a number, found `{tok}`")))
    };

    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        if raw.trim().is_empty() || raw.starts_with('*') {
            continue;
        }
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if !raw.starts_with(' ') && !raw.starts_with('\t') {
            section = match toks[0].to_ascii_uppercase().as_str() {
                "NAME" => Section::Start,
                "OBJSENSE" => {
                    if let Some(s) = toks.get(1) {
                        sense = parse_objsense(s, line)?;
                    }
                    Section::ObjSense
                }
                "ROWS" => Section::Rows,
                "COLUMNS" => Section::Columns,
                "RHS" => Section::Rhs,
                "RANGES" => Section::Ranges,
                "BOUNDS" => Section::Bounds,
                "ENDATA" => break,
                other => return Err(MilpError::parse(line, format!("unknown section `{other}`"))),
            };
            continue;
        }
        match section {
            Section::Start => return Err(MilpError::parse(line, "data before ROWS")),
            Section::ObjSense => sense = parse_objsense(toks[0], line)?,
            Section::Rows => {
                let [code, name] = toks[..] else {
                    return Err(MilpError::parse(
                        line,
                        "ROWS entries need a type and a name",
                    ));
                };
                let s = match code.to_ascii_uppercase().as_str() {
                    "N" => {
                        if obj_row.is_none() {
                            obj_row = Some(name.to_string());
                        }
                        continue;
                    }
                    "L" => Sense::Le,
                    "G" => Sense::Ge,
                    "E" => Sense::Eq,
                    _ => return Err(MilpError::parse(line, format!("unknown row type `{code}`"))),
                };
                row_index.insert(name.to_string(), rows.len());
                rows.push((name.to_string(), s));
                row_terms.push(Vec::new());
                rhs.push(0.0);
            }
            Section::Columns => {
                if toks.len() >= 3 && toks[1].trim_matches('\'') == "MARKER" {
                    match toks[2].trim_matches('\'') {
                        "INTORG" => integer = true,
                        "INTEND" => integer = false,
                        m => return Err(MilpError::parse(line, format!("unknown marker `{m}`"))),
                    }
                    continue;
                }
                if toks.len() != 3 && toks.len() != 5 {
                    return Err(MilpError::parse(line, "COLUMNS entries need 3 or 5 fields"));
                }
                let name = toks[0];
                let k = match col_index.get(name) {
                    Some(&k) => k,
                    None => {
                        col_index.insert(name.to_string(), cols.len());
                        cols.push(Column {
                            name: name.to_string(),
                            integer,
                            lb: None,
                            ub: None,
                            binary: false,
                        });
                        cols.len() - 1
                    }
                };
                for pair in toks[1..].chunks(2) {
                    let v = num(pair[1], line)?;
                    if Some(pair[0]) == obj_row.as_deref() {
                        obj_terms.push((k, v));
                    } else {
                        let r = *row_index.get(pair[0]).ok_or_else(|| {
                            MilpError::parse(line, format!("unknown row `{}`", pair[0]))
                        })?;
                        row_terms[r].push((k, v));
                    }
                }
            }
            Section::Rhs => {
                // the set name is optional in free MPS
                let body = if toks.len() % 2 == 1 {
                    &toks[1..]
                } else {
                    &toks[..]
                };
                for pair in body.chunks(2) {
                    let v = num(pair[1], line)?;
                    if Some(pair[0]) == obj_row.as_deref() {
                        obj_constant = -v;
                    } else {
                        let r = *row_index.get(pair[0]).ok_or_else(|| {
                            MilpError::parse(line, format!("unknown row `{}`", pair[0]))
                        })?;
                        rhs[r] = v;
                    }
                }
            }
            Section::Ranges => return Err(MilpError::parse(line, "RANGES are not supported")),
            Section::Bounds => {
                let code = toks[0].to_ascii_uppercase();
                let needs_value = matches!(code.as_str(), "UP" | "LO" | "FX");
                let (name, value) = match (toks.len(), needs_value) {
                    (4, true) => (toks[2], Some(num(toks[3], line)?)),
                    (3, true) => (toks[1], Some(num(toks[2], line)?)),
                    (3, false) => (toks[2], None),
                    (2, false) => (toks[1], None),
                    _ => return Err(MilpError::parse(line, "malformed BOUNDS entry")),
                };
                let k = *col_index
                    .get(name)
                    .ok_or_else(|| MilpError::parse(line, format!("unknown column `{name}`")))?;
                let col = &mut cols[k];
                match (code.as_str(), value) {
                    ("UP", Some(v)) => col.ub = Some(v),
                    ("LO", Some(v)) => col.lb = Some(v),
                    ("FX", Some(v)) => {
                        col.lb = Some(v);
                        col.ub = Some(v);
                    }
                    ("FR", None) => {
                        col.lb = Some(f64::NEG_INFINITY);
                        col.ub = Some(f64::INFINITY);
                    }
                    ("MI", None) => col.lb = Some(f64::NEG_INFINITY),
                    ("PL", None) => col.ub = Some(f64::INFINITY),
                    ("BV", None) => {
                        col.binary = true;
                        col.lb = Some(0.0);
                        col.ub = Some(1.0);
                    }
                    _ => {
                        return Err(MilpError::parse(
                            line,
                            format!("unsupported bound type `{code}`"),
                        ))
                    }
                }
            }
        }
    }

    let mut model = MilpModel::new();
    for col in &cols {
        let binary = col.binary || col.integer;
        let lb = col.lb.unwrap_or(0.0);
        let ub = col.ub.unwrap_or(if binary { 1.0 } else { f64::INFINITY });
        let kind = if binary {
            VarKind::Binary
        } else {
            VarKind::Continuous
        };
        model.add_var(col.name.clone(), kind, lb, ub)?;
    }
    for (r, (name, s)) in rows.into_iter().enumerate() {
        let expr = LinExpr::from_terms(row_terms[r].iter().map(|&(k, c)| (VarId(k), c)));
        model.add_constraint(name, &expr, s, rhs[r])?;
    }
    let expr = LinExpr::from_terms(obj_terms.iter().map(|&(k, c)| (VarId(k), c)));
    model.set_objective(sense, &expr, obj_constant);
    Ok(model)
}

fn parse_objsense(tok: &str, line: usize) -> Result<ObjSense, MilpError> {
    match tok.to_ascii_uppercase().as_str() {
        "MAX" | "MAXIMIZE" => Ok(ObjSense::Maximize),
        "MIN" | "MINIMIZE" => Ok(ObjSense::Minimize),
        other => Err(MilpError::parse(
            line,
            format!("unknown objective sense `{other}`"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MilpModel {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", -1.5, 2.0).unwrap();
        let y = m.add_binary("Z_1_0_0").unwrap();
        let f = m
            .add_continuous("free_var", f64::NEG_INFINITY, f64::INFINITY)
            .unwrap();
        let u = m.add_continuous("u", 0.25, f64::INFINITY).unwrap();
        let fixed = m.add_binary("fixed").unwrap();
        m.fix(fixed, 1.0).unwrap();
        m.add_constraint(
            "reluub_1_0_0",
            &LinExpr::from_terms([(x, 1.0), (y, -3.0), (f, 0.1)]),
            Sense::Le,
            0.0,
        )
        .unwrap();
        m.add_constraint(
            "g_0",
            &LinExpr::from_terms([(u, 2.0), (fixed, 1.0)]),
            Sense::Ge,
            0.5,
        )
        .unwrap();
        m.add_constraint("e_0", &LinExpr::from_terms([(f, 1.0)]), Sense::Eq, -7.25)
            .unwrap();
        m.set_objective(
            ObjSense::Maximize,
            &LinExpr::from_terms([(x, 1.0), (u, -1e-9)]),
            3.0,
        );
        m
    }

    #[test]
    fn mps_round_trip() {
        let m = sample();
        let text = to_mps_string(&m);
        assert!(text.contains("'INTORG'"));
        assert!(text.contains(" BV BND"));
        let back = parse_mps(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_mps_string(&back), text);
    }

    #[test]
    fn short_names_keep_fixed_columns() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 4.0).unwrap();
        m.add_constraint("c1", &LinExpr::from_terms([(x, 1.0)]), Sense::Le, 3.0)
            .unwrap();
        m.set_objective(ObjSense::Minimize, &LinExpr::from_terms([(x, 1.0)]), 0.0);
        let text = to_mps_string(&m);
        // field 2 starts at column 5, field 3 at column 15, field 4 ends at column 36
        let line = text
            .lines()
            .find(|l| l.contains("c1") && l.starts_with("    x"))
            .unwrap();
        assert_eq!(&line[4..5], "x");
        assert_eq!(&line[14..16], "c1");
        assert_eq!(line.len(), 36);
    }

    #[test]
    fn unknown_rows_are_errors() {
        let text = "NAME t\nROWS\n N obj\nCOLUMNS\n    x  missing  1\nENDATA\n";
        assert!(matches!(parse_mps(text), Err(MilpError::Parse { .. })));
    }
}
