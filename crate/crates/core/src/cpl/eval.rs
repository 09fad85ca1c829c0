//! Expression evaluation.
//!
//! Semantics in brief:
//! - member access on a list broadcasts over its elements (one level);
//! - `and`/`or` short-circuit left to right, so errors in the skipped branch
//!   are never raised;
//! - `any(empty)` is false, `all(empty)` is true, `count`/`sum` of empty are
//!   0, and `min`/`max`/`first`/`last` of empty fail with `EmptyCollection`;
//! - `/` and `%` by zero fail with `DivisionByZero`; `%` needs integers;
//! - `contains`, `starts_with` and `matches` accept a list as their first
//!   argument and then hold when any element does.
//!
//! Every node visit and every element touched while walking a collection
//! counts as one step. With `L` the longest list reachable from the
//! environment and `k` the predicate nesting of the expression, the count
//! never exceeds [`step_bound`] = `2 · size · (L + 1)^(k + 1)`.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;

use regex::Regex;
use thiserror::Error;

use super::ast::{BinaryOp, Expr, Function, Path, UnaryOp};
use super::parser::IT;
use crate::number::Number;
use crate::value::Value;

const STEP_CONSTANT: u64 = 2;
const REGEX_SIZE_LIMIT: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalErrorKind {
    PathNotFound,
    TypeMismatch,
    DivisionByZero,
    EmptyCollection,
}

impl fmt::Display for EvalErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalErrorKind::PathNotFound => "PathNotFound",
            EvalErrorKind::TypeMismatch => "TypeMismatch",
            EvalErrorKind::DivisionByZero => "DivisionByZero",
            EvalErrorKind::EmptyCollection => "EmptyCollection",
        })
    }
}

/// A failed evaluation. `path` is the source form of the failing
/// sub-expression.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at {path}")]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub path: String,
}

impl EvalError {
    fn new(kind: EvalErrorKind, at: &impl fmt::Display) -> Self {
        EvalError { kind, path: at.to_string() }
    }
}

/// What an expression can see: the graph document tree and, optionally, the
/// scoped element under its binding name.
#[derive(Debug, Clone, Copy)]
pub struct EvalEnv<'a> {
    pub graph: &'a Value,
    pub binding: Option<(&'a str, &'a Value)>,
}

impl<'a> EvalEnv<'a> {
    pub fn new(graph: &'a Value) -> Self {
        EvalEnv { graph, binding: None }
    }

    pub fn bind(graph: &'a Value, name: &'a str, element: &'a Value) -> Self {
        EvalEnv { graph, binding: Some((name, element)) }
    }

    /// Length of the longest list anywhere in the environment.
    pub fn max_list_len(&self) -> usize {
        fn longest(v: &Value) -> usize {
            match v {
                Value::List(items) => items.iter().map(longest).max().unwrap_or(0).max(items.len()),
                Value::Map(m) => m.values().map(longest).max().unwrap_or(0),
                _ => 0,
            }
        }
        longest(self.graph).max(self.binding.map_or(0, |(_, v)| longest(v)))
    }
}

/// Counters from one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalStats {
    pub steps: u64,
    pub max_depth: usize,
}

pub fn eval_expr(expr: &Expr, env: &EvalEnv<'_>) -> Result<Value, EvalError> {
    eval_with_stats(expr, env).0
}

pub fn eval_with_stats(expr: &Expr, env: &EvalEnv<'_>) -> (Result<Value, EvalError>, EvalStats) {
    let mut ev =
        Evaluator { env: *env, its: Vec::new(), stats: EvalStats::default(), depth: 0, patterns: HashMap::new() };
    let result = ev.eval(expr).map(Cow::into_owned);
    (result, ev.stats)
}

/// Declared upper bound on [`EvalStats::steps`] for `expr` in `env`.
pub fn step_bound(expr: &Expr, env: &EvalEnv<'_>) -> u64 {
    let base = env.max_list_len() as u64 + 1;
    let nesting = u32::try_from(expr.predicate_nesting() + 1).unwrap_or(u32::MAX);
    STEP_CONSTANT.saturating_mul(expr.size() as u64).saturating_mul(base.saturating_pow(nesting))
}

pub(crate) fn compile_pattern(pattern: &str) -> Result<Regex, regex::Error> {
    regex::RegexBuilder::new(pattern).size_limit(REGEX_SIZE_LIMIT).build()
}

struct Evaluator<'e> {
    env: EvalEnv<'e>,
    its: Vec<Cow<'e, Value>>,
    stats: EvalStats,
    depth: usize,
    patterns: HashMap<String, Option<Regex>>,
}

type Res<'e> = Result<Cow<'e, Value>, EvalError>;

fn type_mismatch(at: &impl fmt::Display) -> EvalError {
    EvalError::new(EvalErrorKind::TypeMismatch, at)
}

impl<'e> Evaluator<'e> {
    fn step(&mut self, n: usize) {
        self.stats.steps += n as u64;
    }

    fn eval(&mut self, expr: &'e Expr) -> Res<'e> {
        self.depth += 1;
        self.stats.max_depth = self.stats.max_depth.max(self.depth);
        self.step(1);
        let out = self.eval_node(expr);
        self.depth -= 1;
        out
    }

    fn eval_node(&mut self, expr: &'e Expr) -> Res<'e> {
        match expr {
            Expr::Literal(v) => Ok(Cow::Borrowed(v)),
            Expr::Path(path) => self.path(path, expr),
            Expr::Member(target, segments) => {
                let base = self.eval(target)?;
                self.members(base, segments, expr)
            }
            Expr::Unary(UnaryOp::Not, inner) => match self.eval(inner)?.as_ref() {
                Value::Bool(b) => Ok(Cow::Owned(Value::Bool(!b))),
                _ => Err(type_mismatch(expr)),
            },
            Expr::Binary(op @ (BinaryOp::And | BinaryOp::Or), l, r) => {
                let lhs = self.eval(l)?.as_bool().ok_or_else(|| type_mismatch(expr))?;
                let short = if *op == BinaryOp::And { !lhs } else { lhs };
                if short {
                    return Ok(Cow::Owned(Value::Bool(lhs)));
                }
                let rhs = self.eval(r)?.as_bool().ok_or_else(|| type_mismatch(expr))?;
                Ok(Cow::Owned(Value::Bool(rhs)))
            }
            Expr::Binary(op, l, r) => {
                let lhs = self.eval(l)?;
                let rhs = self.eval(r)?;
                binary(*op, &lhs, &rhs, expr).map(Cow::Owned)
            }
            Expr::Call(func, args) => self.call(*func, args, expr),
        }
    }

    fn path(&mut self, path: &'e Path, at: &'e Expr) -> Res<'e> {
        let root: Cow<'e, Value> = if path.root == IT {
            match self.its.last() {
                Some(Cow::Borrowed(v)) => Cow::Borrowed(*v),
                Some(Cow::Owned(v)) => Cow::Owned(v.clone()),
                None => return Err(EvalError::new(EvalErrorKind::PathNotFound, at)),
            }
        } else {
            match self.env.binding {
                Some((name, element)) if name == path.root => Cow::Borrowed(element),
                _ => match self.env.graph.as_map().and_then(|m| m.get(&path.root)) {
                    Some(v) => Cow::Borrowed(v),
                    None => return Err(EvalError::new(EvalErrorKind::PathNotFound, at)),
                },
            }
        };
        self.members(root, &path.segments, at)
    }

    fn members(&mut self, mut current: Cow<'e, Value>, segments: &'e [String], at: &'e Expr) -> Res<'e> {
        for seg in segments {
            current = match current {
                Cow::Borrowed(v) => self.member_borrowed(v, seg, at)?,
                Cow::Owned(v) => Cow::Owned(self.member_borrowed(&v, seg, at)?.into_owned()),
            };
        }
        Ok(current)
    }

    fn member_borrowed<'v>(&mut self, value: &'v Value, field: &str, at: &Expr) -> Result<Cow<'v, Value>, EvalError> {
        match value {
            Value::Map(m) => {
                m.get(field).map(Cow::Borrowed).ok_or_else(|| EvalError::new(EvalErrorKind::PathNotFound, at))
            }
            Value::List(items) => {
                self.step(items.len());
                items
                    .iter()
                    .map(|item| match item {
                        Value::Map(m) => {
                            m.get(field).cloned().ok_or_else(|| EvalError::new(EvalErrorKind::PathNotFound, at))
                        }
                        _ => Err(type_mismatch(at)),
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map(|v| Cow::Owned(Value::List(v)))
            }
            _ => Err(type_mismatch(at)),
        }
    }

    fn list_arg(&mut self, arg: &'e Expr, at: &'e Expr) -> Result<Cow<'e, [Value]>, EvalError> {
        match self.eval(arg)? {
            Cow::Borrowed(Value::List(items)) => Ok(Cow::Borrowed(items.as_slice())),
            Cow::Owned(Value::List(items)) => Ok(Cow::Owned(items)),
            _ => Err(type_mismatch(at)),
        }
    }

    fn call(&mut self, func: Function, args: &'e [Expr], at: &'e Expr) -> Res<'e> {
        match func {
            Function::Any | Function::All | Function::Filter => {
                let items = self.list_arg(&args[0], at)?;
                let body = &args[1];
                let mut kept = Vec::new();
                let elements: Vec<Cow<'e, Value>> = match items {
                    Cow::Borrowed(slice) => slice.iter().map(Cow::Borrowed).collect(),
                    Cow::Owned(vec) => vec.into_iter().map(Cow::Owned).collect(),
                };
                for element in elements {
                    self.step(1);
                    self.its.push(element);
                    let verdict = self.eval(body).and_then(|v| v.as_bool().ok_or_else(|| type_mismatch(at)));
                    let element = self.its.pop().expect("pushed above");
                    match (func, verdict?) {
                        (Function::Any, true) => return Ok(Cow::Owned(Value::Bool(true))),
                        (Function::All, false) => return Ok(Cow::Owned(Value::Bool(false))),
                        (Function::Filter, true) => kept.push(element.into_owned()),
                        _ => {}
                    }
                }
                Ok(Cow::Owned(match func {
                    Function::Any => Value::Bool(false),
                    Function::All => Value::Bool(true),
                    _ => Value::List(kept),
                }))
            }
            Function::Count => {
                let items = self.list_arg(&args[0], at)?;
                Ok(Cow::Owned(Value::Number(items.len().into())))
            }
            Function::Sum => {
                let items = self.list_arg(&args[0], at)?;
                self.step(items.len());
                let mut total = Number::zero();
                for item in items.iter() {
                    total = &total + item.as_number().ok_or_else(|| type_mismatch(at))?;
                }
                Ok(Cow::Owned(Value::Number(total)))
            }
            Function::Min | Function::Max => {
                let items = self.list_arg(&args[0], at)?;
                if items.is_empty() {
                    return Err(EvalError::new(EvalErrorKind::EmptyCollection, at));
                }
                self.step(items.len());
                let mut best: Option<&Number> = None;
                for item in items.iter() {
                    let n = item.as_number().ok_or_else(|| type_mismatch(at))?;
                    best = Some(match best {
                        Some(b) if (func == Function::Min) == (b <= n) => b,
                        _ => n,
                    });
                }
                Ok(Cow::Owned(Value::Number(best.expect("non-empty").clone())))
            }
            Function::First | Function::Last => {
                let items = self.list_arg(&args[0], at)?;
                let pick = |len: usize| if func == Function::First { 0 } else { len - 1 };
                match items {
                    Cow::Borrowed(slice) if !slice.is_empty() => Ok(Cow::Borrowed(&slice[pick(slice.len())])),
                    Cow::Owned(mut vec) if !vec.is_empty() => {
                        let i = pick(vec.len());
                        Ok(Cow::Owned(vec.swap_remove(i)))
                    }
                    _ => Err(EvalError::new(EvalErrorKind::EmptyCollection, at)),
                }
            }
            Function::Contains | Function::StartsWith | Function::Matches => {
                let subject = self.eval(&args[0])?;
                let needle = self.eval(&args[1])?;
                self.text_predicate(func, &subject, &needle, at).map(|b| Cow::Owned(Value::Bool(b)))
            }
        }
    }

    fn text_predicate(
        &mut self,
        func: Function,
        subject: &Value,
        needle: &Value,
        at: &Expr,
    ) -> Result<bool, EvalError> {
        if func == Function::Contains {
            return match subject {
                Value::String(s) => match needle {
                    Value::String(n) => Ok(s.contains(n.as_str())),
                    _ => Err(type_mismatch(at)),
                },
                Value::List(items) => {
                    self.step(items.len());
                    Ok(items.iter().any(|e| match (e, needle) {
                        (Value::String(s), Value::String(n)) => s.contains(n.as_str()),
                        _ => e == needle,
                    }))
                }
                _ => Err(type_mismatch(at)),
            };
        }
        let Value::String(pattern) = needle else {
            return Err(type_mismatch(at));
        };
        let regex = if func == Function::Matches {
            let compiled =
                self.patterns.entry(pattern.clone()).or_insert_with(|| compile_pattern(pattern).ok()).clone();
            Some(compiled.ok_or_else(|| type_mismatch(at))?)
        } else {
            None
        };
        let test = |s: &str| match &regex {
            Some(re) => re.is_match(s),
            None => s.starts_with(pattern.as_str()),
        };
        match subject {
            Value::String(s) => Ok(test(s)),
            Value::List(items) => {
                self.step(items.len());
                let mut hit = false;
                for item in items {
                    let s = item.as_str().ok_or_else(|| type_mismatch(at))?;
                    hit = hit || test(s);
                }
                Ok(hit)
            }
            _ => Err(type_mismatch(at)),
        }
    }
}

fn binary(op: BinaryOp, lhs: &Value, rhs: &Value, at: &Expr) -> Result<Value, EvalError> {
    use BinaryOp::*;
    match op {
        Eq => Ok(Value::Bool(lhs == rhs)),
        Ne => Ok(Value::Bool(lhs != rhs)),
        Lt | Gt | Le | Ge => {
            let ord = match (lhs, rhs) {
                (Value::Number(a), Value::Number(b)) => a.cmp(b),
                (Value::String(a), Value::String(b)) => a.cmp(b),
                _ => return Err(type_mismatch(at)),
            };
            Ok(Value::Bool(match op {
                Lt => ord.is_lt(),
                Gt => ord.is_gt(),
                Le => ord.is_le(),
                _ => ord.is_ge(),
            }))
        }
        Add | Sub | Mul | Div | Rem => {
            let (Value::Number(a), Value::Number(b)) = (lhs, rhs) else {
                return Err(type_mismatch(at));
            };
            let n = match op {
                Add => a + b,
                Sub => a - b,
                Mul => a * b,
                Div => a.checked_div(b).ok_or_else(|| EvalError::new(EvalErrorKind::DivisionByZero, at))?,
                _ => {
                    if !a.is_integer() || !b.is_integer() {
                        return Err(type_mismatch(at));
                    }
                    a.checked_rem(b).ok_or_else(|| EvalError::new(EvalErrorKind::DivisionByZero, at))?
                }
            };
            Ok(Value::Number(n))
        }
        And | Or => unreachable!("short-circuit operators are handled by the caller"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpl::parse_expr;
    use crate::graph::parse_graph;

    const CALC: &str = r#"{"schema_version":"1.0.0",
      "operations":[{"op_type":"MULTIPLY","inputs":[47.30,0.15],"output":7.095}],
      "tool_calls":[{"name":"calc","arguments":{"value":7.1}}],
      "claims":[{"text":"Fifteen percent of $47.30 is 7.095","modality":"factual"}]}"#;

    fn calc_value() -> Value {
        parse_graph(CALC).unwrap().to_value()
    }

    fn eval_in(src: &str, graph: &Value) -> Result<Value, EvalError> {
        eval_expr(&parse_expr(src).unwrap(), &EvalEnv::new(graph))
    }

    fn ok(src: &str) -> Value {
        eval_in(src, &Value::Map(Default::default())).unwrap()
    }

    fn err(src: &str) -> EvalErrorKind {
        eval_in(src, &calc_value()).unwrap_err().kind
    }

    #[test]
    fn calc_assert_is_false() {
        let g = calc_value();
        let call = g.pointer("/tool_calls/0").unwrap();
        let env = EvalEnv::bind(&g, "tool_call", call);
        let e = parse_expr("tool_call.arguments.value == last(operations).output").unwrap();
        assert_eq!(eval_expr(&e, &env), Ok(Value::Bool(false)));
        assert_eq!(eval_in("count(operations) > 0", &g), Ok(Value::Bool(true)));
    }

    #[test]
    fn sum_of_outputs() {
        let g = parse_graph(
            r#"{"schema_version":"1.0.0","operations":[
              {"op_type":"ADD","inputs":[1,1],"output":2},
              {"op_type":"ADD","inputs":[1,2.5],"output":3.5}]}"#,
        )
        .unwrap()
        .to_value();
        assert_eq!(eval_in("sum(operations.output)", &g), Ok(Value::Number("5.5".parse().unwrap())));
    }

    #[test]
    fn empty_collections() {
        let g = parse_graph(r#"{"schema_version":"1.0.0"}"#).unwrap().to_value();
        let e = eval_in("first(operations)", &g).unwrap_err();
        assert_eq!(e.kind, EvalErrorKind::EmptyCollection);
        assert_eq!(e.path, "first(operations)");
        assert_eq!(eval_in("any(operations, true)", &g), Ok(Value::Bool(false)));
        assert_eq!(eval_in("all(operations, false)", &g), Ok(Value::Bool(true)));
        assert_eq!(eval_in("count(operations)", &g), Ok(Value::from(0)));
        assert_eq!(eval_in("sum(operations.output)", &g), Ok(Value::from(0)));
        for f in ["min", "max", "last"] {
            assert_eq!(
                eval_in(&format!("{f}(operations.output)"), &g).unwrap_err().kind,
                EvalErrorKind::EmptyCollection
            );
        }
    }

    #[test]
    fn exactness() {
        assert_eq!(ok("7.1 == 7.095"), Value::Bool(false));
        assert_eq!(ok("7.095 == 7.095"), Value::Bool(true));
        assert_eq!(ok("47.30 * 0.15 == 7.095"), Value::Bool(true));
        assert_eq!(ok("0.1 + 0.2 == 0.3"), Value::Bool(true));
        assert_eq!(ok("1 / 3 * 3 == 1"), Value::Bool(true));
    }

    #[test]
    fn arithmetic_errors() {
        assert_eq!(err("1 / 0"), EvalErrorKind::DivisionByZero);
        assert_eq!(err("7 % 0"), EvalErrorKind::DivisionByZero);
        assert_eq!(err("7.5 % 2"), EvalErrorKind::TypeMismatch);
        assert_eq!(err("'a' + 1"), EvalErrorKind::TypeMismatch);
        assert_eq!(err("'a' < 1"), EvalErrorKind::TypeMismatch);
        assert_eq!(ok("7 % 3"), Value::from(1));
        assert_eq!(ok("'a' < 'b'"), Value::Bool(true));
        assert_eq!(ok("'a' == 1"), Value::Bool(false));
    }

    #[test]
    fn short_circuit_suppresses_errors() {
        assert_eq!(ok("false and 1 / 0 == 1"), Value::Bool(false));
        assert_eq!(ok("true or first(nothing)"), Value::Bool(true));
        let g = parse_graph(r#"{"schema_version":"1.0.0"}"#).unwrap().to_value();
        assert_eq!(eval_in("count(operations) > 0 and first(operations).output == 1", &g), Ok(Value::Bool(false)));
        assert_eq!(err("1 and true"), EvalErrorKind::TypeMismatch);
    }

    #[test]
    fn paths() {
        assert_eq!(err("nothing"), EvalErrorKind::PathNotFound);
        assert_eq!(err("tool_calls.arguments.missing"), EvalErrorKind::PathNotFound);
        assert_eq!(err("operations.inputs.x"), EvalErrorKind::TypeMismatch);
        assert_eq!(err("schema_version.x"), EvalErrorKind::TypeMismatch);
        let g = calc_value();
        assert_eq!(eval_in("tool_calls.name", &g), Ok(Value::List(vec![Value::from("calc")])));
        assert_eq!(eval_in("first(operations.inputs)", &g).unwrap().as_list().unwrap().len(), 2);
    }

    #[test]
    fn predicates_bind_it() {
        let g = calc_value();
        assert_eq!(eval_in("any(tool_calls, it.name == 'calc')", &g), Ok(Value::Bool(true)));
        assert_eq!(eval_in("count(filter(operations, it.output > 7))", &g), Ok(Value::from(1)));
        assert_eq!(eval_in("all(claims, count(it.citation_ids) > 0)", &g), Ok(Value::Bool(false)));
        assert_eq!(eval_in("any(operations, any(it.inputs, it > 47))", &g), Ok(Value::Bool(true)));
        assert_eq!(err("any(operations, 1)"), EvalErrorKind::TypeMismatch);
    }

    #[test]
    fn string_builtins() {
        let g = parse_graph(
            r#"{"schema_version":"1.0.0","code_blocks":[
              {"language_tag":"python","content":"x = eval(input())"},
              {"language_tag":"python","content":"print(1)"}]}"#,
        )
        .unwrap()
        .to_value();
        assert_eq!(eval_in("not(contains(code_blocks.content, 'eval('))", &g), Ok(Value::Bool(false)));
        assert_eq!(eval_in("contains(code_blocks.language_tag, 'python')", &g), Ok(Value::Bool(true)));
        assert_eq!(eval_in("starts_with(code_blocks.content, 'print')", &g), Ok(Value::Bool(true)));
        assert_eq!(eval_in(r"matches(code_blocks.content, '\b(eval|exec)\s*\(')", &g), Ok(Value::Bool(true)));
        assert_eq!(eval_in("matches(code_blocks.content, x)", &g).unwrap_err().kind, EvalErrorKind::PathNotFound);
        assert_eq!(ok("contains('abc', 'b')"), Value::Bool(true));
        assert_eq!(err("contains(1, 'b')"), EvalErrorKind::TypeMismatch);
    }

    #[test]
    fn stats_respect_bound() {
        let g = calc_value();
        let env = EvalEnv::new(&g);
        for src in ["sum(operations.output)", "any(operations, any(it.inputs, it > 47))", "1 + 2 * 3"] {
            let e = parse_expr(src).unwrap();
            let (_, stats) = eval_with_stats(&e, &env);
            assert!(stats.steps <= step_bound(&e, &env), "{src}: {stats:?}");
            assert!(stats.max_depth <= e.depth(), "{src}");
        }
    }
}
