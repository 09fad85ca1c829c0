//! Static checks on parsed policies.

use std::fmt;

use super::ast::{BinaryOp, Expr, Function, UnaryOp};
use super::parser::IT;
use super::policy::{Action, Policy};
use crate::graph::COLLECTIONS;
use crate::value::Value;

/// Top-level graph keys that are not collections but may be read.
const GRAPH_SCALARS: [&str; 2] = ["source_text", "schema_version"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LintWarning {
    /// `where[0]`, `assert[1]`, `on_violation`.
    pub location: String,
    pub message: String,
}

impl fmt::Display for LintWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StaticType {
    Null,
    Boolean,
    Number,
    String,
}

impl StaticType {
    fn name(&self) -> &'static str {
        match self {
            StaticType::Null => "null",
            StaticType::Boolean => "boolean",
            StaticType::Number => "number",
            StaticType::String => "string",
        }
    }
}

fn static_type(expr: &Expr) -> Option<StaticType> {
    match expr {
        Expr::Literal(Value::Null) => Some(StaticType::Null),
        Expr::Literal(Value::Bool(_)) => Some(StaticType::Boolean),
        Expr::Literal(Value::Number(_)) => Some(StaticType::Number),
        Expr::Literal(Value::String(_)) => Some(StaticType::String),
        Expr::Unary(UnaryOp::Not, _) => Some(StaticType::Boolean),
        Expr::Binary(op, _, _) if op.is_arithmetic() => Some(StaticType::Number),
        Expr::Binary(..) => Some(StaticType::Boolean),
        Expr::Call(Function::Count | Function::Sum | Function::Min | Function::Max, _) => Some(StaticType::Number),
        Expr::Call(
            Function::Any | Function::All | Function::Contains | Function::StartsWith | Function::Matches,
            _,
        ) => Some(StaticType::Boolean),
        _ => None,
    }
}

pub fn lint_policy(policy: &Policy) -> Vec<LintWarning> {
    let binding = policy.scope.kind.binding_name();
    let mut warnings = Vec::new();
    let clauses = policy
        .where_clauses
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("where[{i}]"), &c.expr))
        .chain(policy.asserts.iter().enumerate().map(|(i, c)| (format!("assert[{i}]"), &c.expr)));
    for (location, expr) in clauses {
        for message in lint_expr(expr, binding) {
            warnings.push(LintWarning { location: location.clone(), message });
        }
    }
    if policy.on_violation.template.is_some() && policy.on_violation.action != Action::Correct {
        warnings.push(LintWarning {
            location: "on_violation".into(),
            message: format!("template ignored for action {}", policy.on_violation.action.as_str()),
        });
    }
    warnings
}

/// Warnings for one expression evaluated with `binding` in scope.
pub fn lint_expr(expr: &Expr, binding: &str) -> Vec<String> {
    let mut out = Vec::new();
    expr.walk(&mut |node| match node {
        Expr::Path(p) => {
            let known = p.root == IT
                || p.root == binding
                || COLLECTIONS.contains(&p.root.as_str())
                || GRAPH_SCALARS.contains(&p.root.as_str());
            if !known {
                out.push(format!("unknown root '{}'", p.root));
            }
        }
        Expr::Binary(op, l, r) if op.is_comparison() => {
            if let (Some(lt), Some(rt)) = (static_type(l), static_type(r)) {
                let ordering = !matches!(op, BinaryOp::Eq | BinaryOp::Ne);
                let incompatible = lt != rt && lt != StaticType::Null && rt != StaticType::Null;
                let unordered = ordering && lt == rt && matches!(lt, StaticType::Boolean | StaticType::Null);
                if incompatible || unordered {
                    out.push(format!("{}/{} comparison", lt.name(), rt.name()));
                }
            }
        }
        Expr::Call(func, args) if func.takes_predicate() && !args[1].references_root(IT) => {
            out.push(format!("predicate of {}() does not use '{IT}'", func.name()));
        }
        _ => {}
    });
    out
}
