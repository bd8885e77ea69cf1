//! Plain-text model files.
//!
//! One `key = value` entry per line; `#` starts a comment line. Expressions
//! and propositions are written in prefix notation with parentheses, using
//! declared symbol names and the time symbol `t`. Atoms are one-based:
//! `(Y stage disjunct)`.
//!
//! ```text
//! format = dagdp-model/1
//! name = toy
//! stage_times = 0.0 1.0 2.0
//! state = x lower=0.0 upper=10.0 initial=1.0
//! control = u lower=-4.0 upper=4.0 fixed_initial=4.0
//! objective = maximize (pow x 2)
//! disjunct = 1 1
//! rhs = x (+ (neg x) u)
//! disjunct = 2 1
//! rhs = x u
//! proposition = (or (Y 1 1) (Y 2 1))
//! ```
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! serializing and parsing reproduces the model exactly.

use std::fmt::Write as _;

use thiserror::Error;

use super::{DagdpModel, Disjunct, Objective, Proposition, Sense, Symbol, SymbolKind};
use crate::expr::{BinaryOp, Expr, UnaryOp};

pub const FORMAT_TAG: &str = "dagdp-model/1";

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, FormatError> {
    Err(FormatError { line, message: message.into() })
}

pub fn serialize_model(model: &DagdpModel) -> String {
    let names: Vec<&str> = model.symbols.iter().map(|s| s.name.as_str()).collect();
    let expr = |e: &Expr| write_expr(e, &names);
    let mut out = String::new();
    let _ = writeln!(out, "format = {FORMAT_TAG}");
    let _ = writeln!(out, "name = {}", model.name);
    let times: Vec<String> = model.stage_times.iter().map(|t| format!("{t:?}")).collect();
    let _ = writeln!(out, "stage_times = {}", times.join(" "));
    for sym in &model.symbols[1..] {
        let line = match sym.kind {
            SymbolKind::Time => continue,
            SymbolKind::State { lower, upper, initial } => format!(
                "state = {} lower={lower:?} upper={upper:?} initial={initial:?}",
                sym.name
            ),
            SymbolKind::Control { lower, upper, fixed_initial } => {
                let mut s = format!("control = {} lower={lower:?} upper={upper:?}", sym.name);
                if let Some(v) = fixed_initial {
                    let _ = write!(s, " fixed_initial={v:?}");
                }
                s
            }
            SymbolKind::Algebraic { lower, upper } => {
                format!("algebraic = {} lower={lower:?} upper={upper:?}", sym.name)
            }
            SymbolKind::Parameter { lower, upper } => {
                format!("parameter = {} lower={lower:?} upper={upper:?}", sym.name)
            }
        };
        out.push_str(&line);
        out.push('\n');
    }
    let sense = match model.objective.sense {
        Sense::Minimize => "minimize",
        Sense::Maximize => "maximize",
    };
    let _ = writeln!(out, "objective = {sense} {}", expr(&model.objective.integrand));
    for c in &model.global_constraints {
        let _ = writeln!(out, "constraint = {}", expr(c));
    }
    let states = model.state_indices();
    for (s, stage) in model.stages.iter().enumerate() {
        for (r, d) in stage.iter().enumerate() {
            let _ = writeln!(out, "disjunct = {} {}", s + 1, r + 1);
            for (&sym, rhs) in states.iter().zip(&d.rhs) {
                let _ = writeln!(out, "rhs = {} {}", names[sym], expr(rhs));
            }
            for g in &d.algebraic {
                let _ = writeln!(out, "algebraic_constraint = {}", expr(g));
            }
        }
    }
    for p in &model.propositions {
        let _ = writeln!(out, "proposition = {p}");
    }
    out
}

fn write_expr(e: &Expr, names: &[&str]) -> String {
    match e {
        Expr::Const(c) => format!("{c:?}"),
        Expr::Var(i) => names.get(*i).map_or_else(|| format!("?{i}"), |n| n.to_string()),
        Expr::Unary(op, a) => {
            let head = match op {
                UnaryOp::Neg => "neg",
                UnaryOp::Exp => "exp",
                UnaryOp::Ln => "ln",
            };
            format!("({head} {})", write_expr(a, names))
        }
        Expr::Powi(a, n) => format!("(pow {} {n})", write_expr(a, names)),
        Expr::Binary(op, a, b) => {
            let head = match op {
                BinaryOp::Add => "+",
                BinaryOp::Sub => "-",
                BinaryOp::Mul => "*",
                BinaryOp::Div => "/",
            };
            format!("({head} {} {})", write_expr(a, names), write_expr(b, names))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum SExpr {
    Atom(String),
    List(Vec<SExpr>),
}

fn parse_sexpr(text: &str, line: usize) -> Result<SExpr, FormatError> {
    let spaced = text.replace('(', " ( ").replace(')', " ) ");
    let mut tokens = spaced.split_whitespace().peekable();
    fn go<'a, I: Iterator<Item = &'a str>>(
        tokens: &mut std::iter::Peekable<I>,
        line: usize,
    ) -> Result<SExpr, FormatError> {
        match tokens.next() {
            None => err(line, "unexpected end of expression"),
            Some(")") => err(line, "unexpected `)`"),
            Some("(") => {
                let mut items = Vec::new();
                loop {
                    match tokens.peek() {
                        None => return err(line, "missing `)`"),
                        Some(&")") => {
                            tokens.next();
                            return Ok(SExpr::List(items));
                        }
                        Some(_) => items.push(go(tokens, line)?),
                    }
                }
            }
            Some(atom) => Ok(SExpr::Atom(atom.to_string())),
        }
    }
    let result = go(&mut tokens, line)?;
    if tokens.next().is_some() {
        return err(line, "trailing tokens after expression");
    }
    Ok(result)
}

fn to_expr(s: &SExpr, symbols: &[Symbol], line: usize) -> Result<Expr, FormatError> {
    match s {
        SExpr::Atom(a) => {
            if let Some(i) = symbols.iter().position(|sym| &sym.name == a) {
                Ok(Expr::var(i))
            } else if let Ok(v) = a.parse::<f64>() {
                Ok(Expr::constant(v))
            } else {
                err(line, format!("unknown symbol `{a}`"))
            }
        }
        SExpr::List(items) => {
            let head = match items.first() {
                Some(SExpr::Atom(h)) => h.as_str(),
                _ => return err(line, "expression list must start with an operator"),
            };
            let args = &items[1..];
            let arity = |n: usize| {
                if args.len() == n {
                    Ok(())
                } else {
                    err(line, format!("`{head}` takes {n} arguments"))
                }
            };
            match head {
                "neg" | "exp" | "ln" => {
                    arity(1)?;
                    let op = match head {
                        "neg" => UnaryOp::Neg,
                        "exp" => UnaryOp::Exp,
                        _ => UnaryOp::Ln,
                    };
                    Ok(Expr::unary(op, to_expr(&args[0], symbols, line)?))
                }
                "pow" => {
                    arity(2)?;
                    let n = match &args[1] {
                        SExpr::Atom(a) => a.parse::<i32>().or_else(|_| err(line, "pow exponent must be an integer"))?,
                        _ => return err(line, "pow exponent must be an integer"),
                    };
                    Ok(to_expr(&args[0], symbols, line)?.powi(n))
                }
                "+" | "-" | "*" | "/" => {
                    arity(2)?;
                    let op = match head {
                        "+" => BinaryOp::Add,
                        "-" => BinaryOp::Sub,
                        "*" => BinaryOp::Mul,
                        _ => BinaryOp::Div,
                    };
                    Ok(Expr::binary(
                        op,
                        to_expr(&args[0], symbols, line)?,
                        to_expr(&args[1], symbols, line)?,
                    ))
                }
                other => err(line, format!("unknown operator `{other}`")),
            }
        }
    }
}

fn to_prop(s: &SExpr, line: usize) -> Result<Proposition, FormatError> {
    let SExpr::List(items) = s else {
        return err(line, "proposition must be a list");
    };
    let Some(SExpr::Atom(head)) = items.first() else {
        return err(line, "proposition list must start with a connective");
    };
    let args = &items[1..];
    let all = |args: &[SExpr]| args.iter().map(|a| to_prop(a, line)).collect::<Result<Vec<_>, _>>();
    let two = |args: &[SExpr]| -> Result<(Proposition, Proposition), FormatError> {
        if args.len() != 2 {
            return err(line, format!("`{head}` takes 2 arguments"));
        }
        Ok((to_prop(&args[0], line)?, to_prop(&args[1], line)?))
    };
    match head.as_str() {
        "Y" => {
            let idx = |a: &SExpr| match a {
                SExpr::Atom(v) => v.parse::<usize>().ok().filter(|&n| n >= 1),
                _ => None,
            };
            match args {
                [s, r] => match (idx(s), idx(r)) {
                    (Some(s), Some(r)) => Ok(Proposition::atom(s - 1, r - 1)),
                    _ => err(line, "atom indices are one-based integers"),
                },
                _ => err(line, "`Y` takes a stage and a disjunct"),
            }
        }
        "not" => {
            if args.len() != 1 {
                return err(line, "`not` takes 1 argument");
            }
            Ok(Proposition::not(to_prop(&args[0], line)?))
        }
        "and" => Ok(Proposition::And(all(args)?)),
        "or" => Ok(Proposition::Or(all(args)?)),
        "xor" => Ok(Proposition::ExactlyOne(all(args)?)),
        "implies" => two(args).map(|(a, b)| Proposition::implies(a, b)),
        "iff" => two(args).map(|(a, b)| Proposition::iff(a, b)),
        other => err(line, format!("unknown connective `{other}`")),
    }
}

fn parse_num(text: &str, line: usize) -> Result<f64, FormatError> {
    text.parse::<f64>().or_else(|_| err(line, format!("invalid number `{text}`")))
}

/// Parses `name lower=.. upper=.. [initial=..] [fixed_initial=..]`.
fn parse_decl(value: &str, line: usize) -> Result<(String, Vec<(String, f64)>), FormatError> {
    let mut parts = value.split_whitespace();
    let name = match parts.next() {
        Some(n) => n.to_string(),
        None => return err(line, "declaration needs a name"),
    };
    let mut attrs = Vec::new();
    for p in parts {
        let Some((k, v)) = p.split_once('=') else {
            return err(line, format!("expected key=value, got `{p}`"));
        };
        attrs.push((k.to_string(), parse_num(v, line)?));
    }
    Ok((name, attrs))
}

fn attr(attrs: &[(String, f64)], key: &str, line: usize) -> Result<f64, FormatError> {
    attrs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| *v)
        .map_or_else(|| err(line, format!("missing `{key}`")), Ok)
}

fn check_attrs(attrs: &[(String, f64)], allowed: &[&str], line: usize) -> Result<(), FormatError> {
    match attrs.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        Some((k, _)) => err(line, format!("unexpected attribute `{k}`")),
        None => Ok(()),
    }
}

/// Parses a model file. The result is validated before it is returned.
pub fn parse_model(text: &str) -> Result<DagdpModel, FormatError> {
    let mut model: Option<DagdpModel> = None;
    let mut name = String::new();
    let mut saw_format = false;
    let mut current: Option<(usize, usize)> = None;
    let mut last_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return err(line, "expected `key = value`");
        };
        let (key, value) = (key.trim(), value.trim());
        if !saw_format {
            if key != "format" {
                return err(line, "file must start with `format`");
            }
            if value != FORMAT_TAG {
                return err(line, format!("unsupported format `{value}`"));
            }
            saw_format = true;
            continue;
        }
        match key {
            "name" => name = value.to_string(),
            "stage_times" => {
                if model.is_some() {
                    return err(line, "duplicate `stage_times`");
                }
                let times = value
                    .split_whitespace()
                    .map(|t| parse_num(t, line))
                    .collect::<Result<Vec<_>, _>>()?;
                model = Some(DagdpModel::new(name.clone(), times));
            }
            _ => {
                let Some(m) = model.as_mut() else {
                    return err(line, "`stage_times` must precede declarations");
                };
                match key {
                    "state" | "control" | "algebraic" | "parameter" => {
                        let (sym, attrs) = parse_decl(value, line)?;
                        let lower = attr(&attrs, "lower", line)?;
                        let upper = attr(&attrs, "upper", line)?;
                        match key {
                            "state" => {
                                check_attrs(&attrs, &["lower", "upper", "initial"], line)?;
                                m.add_state(&sym, lower, upper, attr(&attrs, "initial", line)?);
                            }
                            "control" => {
                                check_attrs(&attrs, &["lower", "upper", "fixed_initial"], line)?;
                                let fixed = attr(&attrs, "fixed_initial", line).ok();
                                m.add_control(&sym, lower, upper, fixed);
                            }
                            "algebraic" => {
                                check_attrs(&attrs, &["lower", "upper"], line)?;
                                m.add_algebraic(&sym, lower, upper);
                            }
                            _ => {
                                check_attrs(&attrs, &["lower", "upper"], line)?;
                                m.add_parameter(&sym, lower, upper);
                            }
                        }
                    }
                    "objective" => {
                        let (sense, rest) = value.split_once(char::is_whitespace).unwrap_or((value, ""));
                        let sense = match sense {
                            "minimize" => Sense::Minimize,
                            "maximize" => Sense::Maximize,
                            other => return err(line, format!("unknown sense `{other}`")),
                        };
                        let integrand = to_expr(&parse_sexpr(rest, line)?, &m.symbols, line)?;
                        m.objective = Objective { sense, integrand };
                    }
                    "constraint" => {
                        let e = to_expr(&parse_sexpr(value, line)?, &m.symbols, line)?;
                        m.global_constraints.push(e);
                    }
                    "disjunct" => {
                        let nums: Vec<usize> =
                            value.split_whitespace().filter_map(|v| v.parse().ok()).collect();
                        let &[s, r] = nums.as_slice() else {
                            return err(line, "`disjunct` takes a stage and an index");
                        };
                        if s == 0 || s > m.stages.len() {
                            return err(line, format!("stage {s} out of range"));
                        }
                        if r != m.stages[s - 1].len() + 1 {
                            return err(line, format!("disjunct {s} {r} out of order"));
                        }
                        m.stages[s - 1].push(Disjunct::default());
                        current = Some((s - 1, r - 1));
                    }
                    "rhs" => {
                        let Some((s, r)) = current else {
                            return err(line, "`rhs` outside a disjunct");
                        };
                        let (state, rest) =
                            value.split_once(char::is_whitespace).unwrap_or((value, ""));
                        let states = m.state_indices();
                        let expected = states.get(m.stages[s][r].rhs.len()).copied();
                        if expected.map(|i| m.symbols[i].name.as_str()) != Some(state) {
                            return err(line, format!("unexpected right-hand side for `{state}`"));
                        }
                        let e = to_expr(&parse_sexpr(rest, line)?, &m.symbols, line)?;
                        m.stages[s][r].rhs.push(e);
                    }
                    "algebraic_constraint" => {
                        let Some((s, r)) = current else {
                            return err(line, "`algebraic_constraint` outside a disjunct");
                        };
                        let e = to_expr(&parse_sexpr(value, line)?, &m.symbols, line)?;
                        m.stages[s][r].algebraic.push(e);
                    }
                    "proposition" => {
                        let p = to_prop(&parse_sexpr(value, line)?, line)?;
                        m.propositions.push(p);
                    }
                    other => return err(line, format!("unknown key `{other}`")),
                }
            }
        }
    }
    let Some(mut model) = model else {
        return err(last_line, "missing `stage_times`");
    };
    model.name = name;
    model
        .validate()
        .map_err(|e| FormatError { line: last_line, message: e.to_string() })?;
    Ok(model)
}
