//! A small, direct-style evaluator used as an oracle for the engine. It
//! works on the generator's own expression tree and value type and shares no
//! code with the library beyond the regex crate.

use std::collections::BTreeMap;

use cape_core::value::Value;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

use super::gen::GExpr;

#[derive(Debug, Clone, PartialEq)]
pub enum RV {
    Null,
    Bool(bool),
    Num(BigRational),
    Str(String),
    List(Vec<RV>),
    Map(BTreeMap<String, RV>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fail {
    PathNotFound,
    TypeMismatch,
    DivisionByZero,
    EmptyCollection,
}

impl Fail {
    pub fn name(self) -> &'static str {
        match self {
            Fail::PathNotFound => "PathNotFound",
            Fail::TypeMismatch => "TypeMismatch",
            Fail::DivisionByZero => "DivisionByZero",
            Fail::EmptyCollection => "EmptyCollection",
        }
    }
}

type R = Result<RV, Fail>;

/// Exact value of a literal like `-12`, `3.5` or `0.095`.
pub fn decimal(text: &str) -> BigRational {
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let digits: BigInt = format!("{int}{frac}").parse().expect("decimal digits");
    let scale = BigInt::from(10u32).pow(frac.len() as u32);
    let r = BigRational::new(digits, scale);
    if neg {
        -r
    } else {
        r
    }
}

pub fn from_value(v: &Value) -> RV {
    match v {
        Value::Null => RV::Null,
        Value::Bool(b) => RV::Bool(*b),
        Value::Number(n) => RV::Num(n.as_rational().clone()),
        Value::String(s) => RV::Str(s.clone()),
        Value::List(items) => RV::List(items.iter().map(from_value).collect()),
        Value::Map(m) => RV::Map(m.iter().map(|(k, v)| (k.clone(), from_value(v))).collect()),
    }
}

pub struct Reference<'a> {
    pub graph: &'a RV,
    pub binding: Option<(&'a str, &'a RV)>,
    its: Vec<RV>,
}

fn field(v: &RV, f: &str) -> R {
    match v {
        RV::Map(m) => m.get(f).cloned().ok_or(Fail::PathNotFound),
        RV::List(items) => {
            let mut out = Vec::new();
            for item in items {
                match item {
                    RV::Map(m) => out.push(m.get(f).cloned().ok_or(Fail::PathNotFound)?),
                    _ => return Err(Fail::TypeMismatch),
                }
            }
            Ok(RV::List(out))
        }
        _ => Err(Fail::TypeMismatch),
    }
}

fn bool_of(v: RV) -> Result<bool, Fail> {
    match v {
        RV::Bool(b) => Ok(b),
        _ => Err(Fail::TypeMismatch),
    }
}

fn list_of(v: RV) -> Result<Vec<RV>, Fail> {
    match v {
        RV::List(items) => Ok(items),
        _ => Err(Fail::TypeMismatch),
    }
}

fn num_of(v: &RV) -> Result<&BigRational, Fail> {
    match v {
        RV::Num(n) => Ok(n),
        _ => Err(Fail::TypeMismatch),
    }
}

impl<'a> Reference<'a> {
    pub fn new(graph: &'a RV, binding: Option<(&'a str, &'a RV)>) -> Self {
        Reference { graph, binding, its: Vec::new() }
    }

    pub fn eval(&mut self, e: &GExpr) -> R {
        match e {
            GExpr::Num(n) => Ok(RV::Num(decimal(n))),
            GExpr::Str(s) => Ok(RV::Str(s.clone())),
            GExpr::Bool(b) => Ok(RV::Bool(*b)),
            GExpr::Null => Ok(RV::Null),
            GExpr::Path(root, segs) => {
                let mut v = if root == "it" {
                    self.its.last().cloned().ok_or(Fail::PathNotFound)?
                } else if let Some((_, el)) = self.binding.filter(|(name, _)| name == root) {
                    el.clone()
                } else {
                    match self.graph {
                        RV::Map(m) => m.get(root).cloned().ok_or(Fail::PathNotFound)?,
                        _ => return Err(Fail::PathNotFound),
                    }
                };
                for s in segs {
                    v = field(&v, s)?;
                }
                Ok(v)
            }
            GExpr::Member(target, segs) => {
                let mut v = self.eval(target)?;
                for s in segs {
                    v = field(&v, s)?;
                }
                Ok(v)
            }
            GExpr::Not(inner) => Ok(RV::Bool(!bool_of(self.eval(inner)?)?)),
            GExpr::Bin(op @ ("and" | "or"), l, r) => {
                let lhs = bool_of(self.eval(l)?)?;
                if (*op == "and" && !lhs) || (*op == "or" && lhs) {
                    return Ok(RV::Bool(lhs));
                }
                Ok(RV::Bool(bool_of(self.eval(r)?)?))
            }
            GExpr::Bin(op, l, r) => {
                let a = self.eval(l)?;
                let b = self.eval(r)?;
                binary(op, &a, &b)
            }
            GExpr::Call(f, args) => self.call(f, args),
        }
    }

    fn call(&mut self, f: &str, args: &[GExpr]) -> R {
        match f {
            "any" | "all" | "filter" => {
                let items = list_of(self.eval(&args[0])?)?;
                let mut kept = Vec::new();
                for item in items {
                    self.its.push(item.clone());
                    let r = self.eval(&args[1]);
                    self.its.pop();
                    let hold = bool_of(r?)?;
                    match (f, hold) {
                        ("any", true) => return Ok(RV::Bool(true)),
                        ("all", false) => return Ok(RV::Bool(false)),
                        ("filter", true) => kept.push(item),
                        _ => {}
                    }
                }
                Ok(match f {
                    "any" => RV::Bool(false),
                    "all" => RV::Bool(true),
                    _ => RV::List(kept),
                })
            }
            "count" => Ok(RV::Num(BigRational::from_integer(list_of(self.eval(&args[0])?)?.len().into()))),
            "sum" => {
                let items = list_of(self.eval(&args[0])?)?;
                let mut total = BigRational::zero();
                for i in &items {
                    total += num_of(i)?;
                }
                Ok(RV::Num(total))
            }
            "min" | "max" => {
                let items = list_of(self.eval(&args[0])?)?;
                if items.is_empty() {
                    return Err(Fail::EmptyCollection);
                }
                let nums = items.iter().map(num_of).collect::<Result<Vec<_>, _>>()?;
                let pick = if f == "min" { nums.iter().min() } else { nums.iter().max() };
                Ok(RV::Num((*pick.unwrap()).clone()))
            }
            "first" | "last" => {
                let items = list_of(self.eval(&args[0])?)?;
                let pick = if f == "first" { items.first() } else { items.last() };
                pick.cloned().ok_or(Fail::EmptyCollection)
            }
            "contains" => {
                let subject = self.eval(&args[0])?;
                let needle = self.eval(&args[1])?;
                match (&subject, &needle) {
                    (RV::Str(s), RV::Str(n)) => Ok(RV::Bool(s.contains(n.as_str()))),
                    (RV::Str(_), _) => Err(Fail::TypeMismatch),
                    (RV::List(items), _) => Ok(RV::Bool(items.iter().any(|e| match (e, &needle) {
                        (RV::Str(s), RV::Str(n)) => s.contains(n.as_str()),
                        _ => *e == needle,
                    }))),
                    _ => Err(Fail::TypeMismatch),
                }
            }
            _ => {
                let subject = self.eval(&args[0])?;
                let RV::Str(pattern) = self.eval(&args[1])? else {
                    return Err(Fail::TypeMismatch);
                };
                let test: Box<dyn Fn(&str) -> bool> = if f == "matches" {
                    let re = regex::Regex::new(&pattern).map_err(|_| Fail::TypeMismatch)?;
                    Box::new(move |s| re.is_match(s))
                } else {
                    Box::new(move |s: &str| s.starts_with(pattern.as_str()))
                };
                match subject {
                    RV::Str(s) => Ok(RV::Bool(test(&s))),
                    RV::List(items) => {
                        let strs = items
                            .iter()
                            .map(|i| match i {
                                RV::Str(s) => Ok(s.as_str()),
                                _ => Err(Fail::TypeMismatch),
                            })
                            .collect::<Result<Vec<_>, _>>()?;
                        Ok(RV::Bool(strs.into_iter().any(test)))
                    }
                    _ => Err(Fail::TypeMismatch),
                }
            }
        }
    }
}

fn binary(op: &str, a: &RV, b: &RV) -> R {
    match op {
        "==" => Ok(RV::Bool(a == b)),
        "!=" => Ok(RV::Bool(a != b)),
        "<" | ">" | "<=" | ">=" => {
            let ord = match (a, b) {
                (RV::Num(x), RV::Num(y)) => x.cmp(y),
                (RV::Str(x), RV::Str(y)) => x.cmp(y),
                _ => return Err(Fail::TypeMismatch),
            };
            Ok(RV::Bool(match op {
                "<" => ord.is_lt(),
                ">" => ord.is_gt(),
                "<=" => ord.is_le(),
                _ => ord.is_ge(),
            }))
        }
        _ => {
            let (x, y) = (num_of(a)?, num_of(b)?);
            Ok(RV::Num(match op {
                "+" => x + y,
                "-" => x - y,
                "*" => x * y,
                "/" => {
                    if y.is_zero() {
                        return Err(Fail::DivisionByZero);
                    }
                    x / y
                }
                _ => {
                    if !x.is_integer() || !y.is_integer() {
                        return Err(Fail::TypeMismatch);
                    }
                    if y.is_zero() {
                        return Err(Fail::DivisionByZero);
                    }
                    // Truncated toward zero, so the sign follows the dividend.
                    let q = (x / y).trunc();
                    let r = x - y * q;
                    debug_assert!(r.is_zero() || r.is_negative() == x.is_negative());
                    r
                }
            }))
        }
    }
}
