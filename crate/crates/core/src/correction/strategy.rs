use std::fmt;

use serde::Serialize;

use crate::cpl::{BinaryOp, Expr, Function, Path, Policy, ScopeKind};
use crate::value::{pointer_escape, Value};
use crate::verifier::{equality_sides, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum CorrectionStrategy {
    /// The expected value is known: write it into the element.
    DeterministicPatch,
    /// A required element is missing: insert it from the policy's template.
    TemplateInsert,
    /// Anything else: ask a rewrite provider for new text.
    ConstrainedRewrite,
}

impl CorrectionStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            CorrectionStrategy::DeterministicPatch => "DeterministicPatch",
            CorrectionStrategy::TemplateInsert => "TemplateInsert",
            CorrectionStrategy::ConstrainedRewrite => "ConstrainedRewrite",
        }
    }
}

impl fmt::Display for CorrectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// JSON pointer of a scoped element inside the graph document.
pub fn element_pointer(kind: ScopeKind, index: usize) -> String {
    match kind.collection() {
        Some(collection) => format!("/{collection}/{index}"),
        None => String::new(),
    }
}

/// The failed assert's actual side when it is a binding-rooted path that
/// names a single existing field through maps only, as a JSON pointer.
pub fn writable_pointer(violation: &Violation, policy: &Policy, graph: &Value) -> Option<String> {
    if violation.eval_error.is_some() {
        return None;
    }
    let binding = policy.scope.kind.binding_name();
    let assert = &policy.asserts.get(violation.assert_index)?.expr;
    let (Expr::Path(path), _) = equality_sides(assert, binding)? else {
        return None;
    };
    if path.root != binding || path.segments.is_empty() {
        return None;
    }
    let base = element_pointer(policy.scope.kind, violation.element_index);
    let mut node = graph.pointer(&base)?;
    let mut pointer = base;
    for seg in &path.segments {
        node = node.as_map()?.get(seg)?;
        pointer.push('/');
        pointer.push_str(&pointer_escape(seg));
    }
    Some(pointer)
}

/// Where an existence assert looks: `X` in `count(X) > n`, `count(X) >= n`,
/// `count(X) != 0` or `any(X, ...)`.
pub fn existence_target(expr: &Expr) -> Option<&Path> {
    let target = match expr {
        Expr::Call(Function::Any, args) => &args[0],
        Expr::Binary(op, l, r) => match (op, &**l, &**r) {
            (BinaryOp::Gt | BinaryOp::Ge | BinaryOp::Ne, Expr::Call(Function::Count, args), Expr::Literal(_)) => {
                &args[0]
            }
            (BinaryOp::Lt | BinaryOp::Le | BinaryOp::Ne, Expr::Literal(_), Expr::Call(Function::Count, args)) => {
                &args[0]
            }
            _ => return None,
        },
        _ => return None,
    };
    match target {
        Expr::Path(p) => Some(p),
        _ => None,
    }
}

pub fn select_strategy(violation: &Violation, policy: &Policy, graph: &Value) -> CorrectionStrategy {
    if writable_pointer(violation, policy, graph).is_some() {
        return CorrectionStrategy::DeterministicPatch;
    }
    let existence = violation.eval_error.is_none()
        && policy.asserts.get(violation.assert_index).and_then(|c| existence_target(&c.expr)).is_some();
    if policy.on_violation.template.is_some() && existence {
        CorrectionStrategy::TemplateInsert
    } else {
        CorrectionStrategy::ConstrainedRewrite
    }
}
