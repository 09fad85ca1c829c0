//! The policy language: expression syntax, evaluation, lint, and policy
//! documents.
//!
//! Expressions have no loops, recursion, bindings or user functions; every
//! evaluation terminates within [`step_bound`] and is a pure function of the
//! expression and its environment.

mod ast;
mod eval;
mod lint;
mod parser;
mod policy;

pub use ast::{BinaryOp, Expr, Function, Path, UnaryOp};
pub use eval::{eval_expr, eval_with_stats, step_bound, EvalEnv, EvalError, EvalErrorKind, EvalStats};
pub use lint::{lint_expr, lint_policy, LintWarning};
pub use parser::{parse_expr, ExprError, IT};
pub(crate) use policy::is_dotted_id;
pub use policy::{
    parse_policies, parse_policy, Action, Clause, Policy, PolicyError, Scope, ScopeKind, Tier, ViolationAction,
};
