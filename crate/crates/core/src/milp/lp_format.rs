//! CPLEX-style LP text format.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{LinExpr, MilpError, MilpModel, ObjSense, Sense, VarId, VarKind};

const LINE_WIDTH: usize = 120;

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

fn push_terms(out: &mut String, line: &mut String, model: &MilpModel, terms: &[(VarId, f64)]) {
    for (v, c) in terms {
        let sign = if *c < 0.0 { '-' } else { '+' };
        let piece = format!(" {sign} {} {}", fmt_num(c.abs()), model.variable(*v).name);
        if line.len() + piece.len() > LINE_WIDTH {
            out.push_str(line);
            out.push('\n');
            line.clear();
            line.push(' ');
        }
        line.push_str(&piece);
    }
}

pub fn to_lp_string(model: &MilpModel) -> String {
    let mut out = String::new();
    let obj = model.objective();
    out.push_str(match obj.sense {
        ObjSense::Maximize => "Maximize\n",
        ObjSense::Minimize => "Minimize\n",
    });
    let mut line = String::from(" obj:");
    push_terms(&mut out, &mut line, model, &obj.terms);
    if obj.constant != 0.0 {
        let sign = if obj.constant < 0.0 { '-' } else { '+' };
        let _ = write!(line, " {sign} {}", fmt_num(obj.constant.abs()));
    }
    out.push_str(&line);
    out.push_str("\nSubject To\n");
    for c in model.constraints() {
        let mut line = format!(" {}:", c.name);
        push_terms(&mut out, &mut line, model, &c.terms);
        let _ = write!(line, " {} {}", c.sense.symbol(), fmt_num(c.rhs));
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("Bounds\n");
    for v in model.variables() {
        if v.lb == f64::NEG_INFINITY && v.ub == f64::INFINITY {
            let _ = writeln!(out, " {} free", v.name);
        } else {
            let _ = writeln!(out, " {} <= {} <= {}", fmt_num(v.lb), v.name, fmt_num(v.ub));
        }
    }
    let binaries: Vec<&str> = model
        .variables()
        .iter()
        .filter(|v| v.kind == VarKind::Binary)
        .map(|v| v.name.as_str())
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binary\n");
        for name in binaries {
            let _ = writeln!(out, " {name}");
        }
    }
    out.push_str("End\n");
    out
}

pub fn write_lp(model: &MilpModel, path: impl AsRef<Path>) -> Result<(), MilpError> {
    model.validate()?;
    std::fs::write(path, to_lp_string(model))?;
    Ok(())
}

pub fn read_lp(path: impl AsRef<Path>) -> Result<MilpModel, MilpError> {
    parse_lp(&std::fs::read_to_string(path)?)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    Binary,
    End,
}

fn section_header(line: &str) -> Option<(Section, Option<ObjSense>)> {
    let lower = line.trim().to_ascii_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    let key = words.join(" ");
    Some(match key.as_str() {
        "maximize" | "maximise" | "maximum" | "max" => {
            (Section::Objective, Some(ObjSense::Maximize))
        }
        "minimize" | "minimise" | "minimum" | "min" => {
            (Section::Objective, Some(ObjSense::Minimize))
        }
        "subject to" | "such that" | "st" | "s.t." => (Section::Constraints, None),
        "bounds" | "bound" => (Section::Bounds, None),
        "binary" | "binaries" | "bin" => (Section::Binary, None),
        "end" => (Section::End, None),
        _ => return None,
    })
}

/// Raw variable data gathered while parsing, before ids are assigned.
#[derive(Default)]
struct Pending {
    order: Vec<String>,
    seen: HashMap<String, usize>,
    bound_order: Vec<usize>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    binary: Vec<bool>,
}

impl Pending {
    fn id(&mut self, name: &str) -> usize {
        if let Some(&k) = self.seen.get(name) {
            return k;
        }
        let k = self.order.len();
        self.order.push(name.to_string());
        self.seen.insert(name.to_string(), k);
        self.lb.push(0.0);
        self.ub.push(f64::INFINITY);
        self.binary.push(false);
        k
    }
}

struct RawRow {
    name: String,
    terms: Vec<(usize, f64)>,
    sense: Sense,
    rhs: f64,
}

fn parse_number(tok: &str) -> Option<f64> {
    match tok.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        _ => tok.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

fn parse_sense(tok: &str) -> Option<Sense> {
    match tok {
        "<=" | "=<" | "<" => Some(Sense::Le),
        ">=" | "=>" | ">" => Some(Sense::Ge),
        "=" => Some(Sense::Eq),
        _ => None,
    }
}

/// Splits `tok` so operators glued to operands (`x<=3`) become separate tokens.
fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        let chars: Vec<char> = word.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c == '<' || c == '>' || c == '=' {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                let mut op = c.to_string();
                if i + 1 < chars.len() && matches!(chars[i + 1], '=' | '<' | '>') {
                    op.push(chars[i + 1]);
                    i += 1;
                }
                out.push(op);
            } else {
                cur.push(c);
            }
            i += 1;
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Parses `[+|-] [coef] name ...` sequences. Bare numbers are constants.
fn parse_terms(
    tokens: &[String],
    pending: &mut Pending,
    line: usize,
) -> Result<(Vec<(usize, f64)>, f64), MilpError> {
    let mut terms = Vec::new();
    let mut constant = 0.0;
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    for tok in tokens {
        match tok.as_str() {
            "+" | "-" => {
                if let Some(c) = coef.take() {
                    constant += sign * c;
                    sign = 1.0;
                }
                if tok == "-" {
                    sign = -sign;
                }
            }
            _ => {
                if let Some(v) = parse_number(tok) {
                    if coef.is_some() {
                        return Err(MilpError::parse(
                            line,
                            format!("two numbers in a row at `{tok}`"),
                        ));
                    }
                    coef = Some(v);
                } else {
                    let k = pending.id(tok);
                    terms.push((k, sign * coef.take().unwrap_or(1.0)));
                    sign = 1.0;
                }
            }
        }
    }
    if let Some(c) = coef {
        constant += sign * c;
    }
    Ok((terms, constant))
}

fn parse_bound(tokens: &[String], pending: &mut Pending, line: usize) -> Result<(), MilpError> {
    let err = || MilpError::parse(line, format!("unrecognised bound `{}`", tokens.join(" ")));
    let set = |pending: &mut Pending, k: usize, sense: Sense, v: f64| match sense {
        Sense::Le => pending.ub[k] = v,
        Sense::Ge => pending.lb[k] = v,
        Sense::Eq => {
            pending.lb[k] = v;
            pending.ub[k] = v;
        }
    };
    let flip = |s: Sense| match s {
        Sense::Le => Sense::Ge,
        Sense::Ge => Sense::Le,
        Sense::Eq => Sense::Eq,
    };
    match tokens.len() {
        2 if tokens[1].eq_ignore_ascii_case("free") => {
            let k = pending.id(&tokens[0]);
            pending.bound_order.push(k);
            pending.lb[k] = f64::NEG_INFINITY;
            pending.ub[k] = f64::INFINITY;
        }
        3 => {
            let sense = parse_sense(&tokens[1]).ok_or_else(err)?;
            if let Some(v) = parse_number(&tokens[2]) {
                let k = pending.id(&tokens[0]);
                pending.bound_order.push(k);
                set(pending, k, sense, v);
            } else {
                let v = parse_number(&tokens[0]).ok_or_else(err)?;
                let k = pending.id(&tokens[2]);
                pending.bound_order.push(k);
                set(pending, k, flip(sense), v);
            }
        }
        5 => {
            let lo = parse_number(&tokens[0]).ok_or_else(err)?;
            let s1 = parse_sense(&tokens[1]).ok_or_else(err)?;
            let s2 = parse_sense(&tokens[3]).ok_or_else(err)?;
            let hi = parse_number(&tokens[4]).ok_or_else(err)?;
            let k = pending.id(&tokens[2]);
            pending.bound_order.push(k);
            set(pending, k, flip(s1), lo);
            set(pending, k, s2, hi);
        }
        _ => return Err(err()),
    }
    Ok(())
}

pub fn parse_lp(text: &str) -> Result<MilpModel, MilpError> {
    let mut section = Section::None;
    let mut sense = ObjSense::Maximize;
    let mut pending = Pending::default();
    let mut obj_tokens: Vec<String> = Vec::new();
    let mut rows: Vec<RawRow> = Vec::new();
    let mut row_tokens: Vec<String> = Vec::new();
    let mut row_line = 0;

    let flush_row = |toks: &mut Vec<String>,
                     rows: &mut Vec<RawRow>,
                     pending: &mut Pending,
                     line: usize|
     -> Result<(), MilpError> {
        if toks.is_empty() {
            return Ok(());
        }
        let (name, body) = match toks[0].strip_suffix(':') {
            Some(n) => (n.to_string(), &toks[1..]),
            None => (format!("c{}", rows.len() + 1), &toks[..]),
        };
        let pos = body
            .iter()
            .position(|t| parse_sense(t).is_some())
            .ok_or_else(|| MilpError::parse(line, format!("constraint `{name}` has no sense")))?;
        if pos + 2 != body.len() {
            return Err(MilpError::parse(
                line,
                format!("constraint `{name}` is malformed"),
            ));
        }
        let rhs = parse_number(&body[pos + 1])
            .filter(|v| v.is_finite())
            .ok_or_else(|| MilpError::parse(line, format!("bad right-hand side in `{name}`")))?;
        let (terms, constant) = parse_terms(&body[..pos], pending, line)?;
        rows.push(RawRow {
            name,
            terms,
            sense: parse_sense(&body[pos]).expect("checked above"),
            rhs: rhs - constant,
        });
        toks.clear();
        Ok(())
    };

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let content = raw.split('\\').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        if let Some((sec, s)) = section_header(content) {
            flush_row(&mut row_tokens, &mut rows, &mut pending, row_line)?;
            section = sec;
            if let Some(s) = s {
                sense = s;
            }
            continue;
        }
        let toks = tokenize(content);
        match section {
            Section::None | Section::End => {
                return Err(MilpError::parse(line_no, "content outside of a section"))
            }
            Section::Objective => obj_tokens.extend(toks),
            Section::Constraints => {
                // a new row starts with `name:`; otherwise this line continues
                if toks[0].ends_with(':') && !row_tokens.is_empty() {
                    flush_row(&mut row_tokens, &mut rows, &mut pending, row_line)?;
                }
                if row_tokens.is_empty() {
                    row_line = line_no;
                }
                row_tokens.extend(toks);
                // rows without names end once the right-hand side is seen
                let n = row_tokens.len();
                if n >= 2
                    && parse_sense(&row_tokens[n - 2]).is_some()
                    && parse_number(&row_tokens[n - 1]).is_some()
                {
                    flush_row(&mut row_tokens, &mut rows, &mut pending, row_line)?;
                }
            }
            Section::Bounds => parse_bound(&toks, &mut pending, line_no)?,
            Section::Binary => {
                for t in toks {
                    let k = pending.id(&t);
                    pending.binary[k] = true;
                }
            }
        }
    }
    flush_row(&mut row_tokens, &mut rows, &mut pending, row_line)?;

    let obj_body: &[String] = match obj_tokens.first() {
        Some(t) if t.ends_with(':') => &obj_tokens[1..],
        _ => &obj_tokens[..],
    };
    let (obj_terms, obj_constant) = parse_terms(obj_body, &mut pending, 0)?;

    // variables listed in Bounds come first, in that order
    let mut ids = vec![usize::MAX; pending.order.len()];
    let mut next = 0;
    let mut assign = |k: usize, ids: &mut Vec<usize>| {
        if ids[k] == usize::MAX {
            ids[k] = next;
            next += 1;
        }
    };
    for &k in &pending.bound_order {
        assign(k, &mut ids);
    }
    for k in 0..pending.order.len() {
        assign(k, &mut ids);
    }
    let mut by_id: Vec<usize> = vec![0; ids.len()];
    for (k, &id) in ids.iter().enumerate() {
        by_id[id] = k;
    }

    let mut model = MilpModel::new();
    for &k in &by_id {
        let (kind, lb, ub) = if pending.binary[k] {
            let ub = if pending.ub[k] == f64::INFINITY {
                1.0
            } else {
                pending.ub[k]
            };
            (VarKind::Binary, pending.lb[k], ub)
        } else {
            (VarKind::Continuous, pending.lb[k], pending.ub[k])
        };
        model.add_var(pending.order[k].clone(), kind, lb, ub)?;
    }
    let expr = |terms: &[(usize, f64)]| {
        LinExpr::from_terms(terms.iter().map(|&(k, c)| (VarId(ids[k]), c)))
    };
    for r in rows {
        model.add_constraint(r.name, &expr(&r.terms), r.sense, r.rhs)?;
    }
    model.set_objective(sense, &expr(&obj_terms), obj_constant);
    Ok(model)
}
