//! Policy evaluation and verdicts.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cpl::{eval_expr, BinaryOp, EvalEnv, EvalError, EvalErrorKind, Expr, Policy, ScopeKind, Tier};
use crate::graph::{PredicateGraph, Span};
use crate::value::{canonical_json, Value};

/// Placeholder `expected` for asserts that are not a plain equality.
pub const ASSERTION_TRUE: &str = "assertion true";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("duplicate policy id '{0}'")]
pub struct DuplicateIdError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Passed,
    Violated,
    NotApplicable,
    EvalError,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Passed => "passed",
            Status::Violated => "violated",
            Status::NotApplicable => "not_applicable",
            Status::EvalError => "eval_error",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub policy_id: String,
    pub message: String,
    pub expected: Value,
    pub actual: Value,
    pub tier: Tier,
    /// Position of the scoped element in its collection; 0 for `output`.
    pub element_index: usize,
    pub span: Option<Span>,
    pub assert_index: usize,
    /// Set when the assert could not be evaluated.
    pub eval_error: Option<EvalError>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyResult {
    pub policy_id: String,
    pub tier: Tier,
    pub status: Status,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub output_id: String,
    pub policies_evaluated: usize,
    pub policies_passed: usize,
    /// In resolve order, then element order, then assert order.
    pub violations: Vec<Violation>,
    /// One entry per policy, in resolve order.
    pub results: Vec<PolicyResult>,
}

/// Which statuses count as passed in a verdict.
pub fn counts_as_passed(status: Status) -> bool {
    matches!(status, Status::Passed | Status::NotApplicable)
}

fn compare_policies(a: &Policy, b: &Policy) -> Ordering {
    a.tier.cmp(&b.tier).then_with(|| b.priority.cmp(&a.priority)).then_with(|| a.id.cmp(&b.id))
}

/// Tier first, then larger priority first, then id ascending.
pub fn policy_order(a: &Policy, b: &Policy) -> Ordering {
    compare_policies(a, b)
}

pub fn check_unique_ids<'a>(policies: impl IntoIterator<Item = &'a Policy>) -> Result<(), DuplicateIdError> {
    let mut seen = HashSet::new();
    for p in policies {
        if !seen.insert(p.id.as_str()) {
            return Err(DuplicateIdError(p.id.clone()));
        }
    }
    Ok(())
}

pub fn resolve_order(policies: &[Policy]) -> Result<Vec<Policy>, DuplicateIdError> {
    check_unique_ids(policies)?;
    let mut ordered = policies.to_vec();
    ordered.sort_by(compare_policies);
    Ok(ordered)
}

fn element_span(element: &Value) -> Option<Span> {
    let span = element.as_map()?.get("span")?.as_map()?;
    let start = span.get("start")?.as_number()?.to_i64()?;
    let end = span.get("end")?.as_number()?.to_i64()?;
    Some(Span::new(usize::try_from(start).ok()?, usize::try_from(end).ok()?))
}

/// The elements a policy applies to, with their collection index.
pub fn scoped_elements<'g>(policy: &Policy, graph: &'g Value) -> Vec<(usize, &'g Value)> {
    let Some(collection) = policy.scope.kind.collection() else {
        return vec![(0, graph)];
    };
    let Some(items) = graph.as_map().and_then(|m| m.get(collection)).and_then(Value::as_list) else {
        return Vec::new();
    };
    items
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            let fields = e.as_map();
            policy.scope.filter.iter().all(|(k, v)| fields.and_then(|m| m.get(k)) == Some(v))
        })
        .collect()
}

/// For `lhs == rhs` where exactly one side reads the scope binding, returns
/// `(actual side, expected side)`.
pub fn equality_sides<'e>(expr: &'e Expr, binding: &str) -> Option<(&'e Expr, &'e Expr)> {
    let Expr::Binary(BinaryOp::Eq, l, r) = expr else {
        return None;
    };
    match (l.references_root(binding), r.references_root(binding)) {
        (true, false) => Some((l, r)),
        (false, true) => Some((r, l)),
        _ => None,
    }
}

fn holds(expr: &Expr, env: &EvalEnv<'_>) -> Result<bool, EvalError> {
    match eval_expr(expr, env)? {
        Value::Bool(b) => Ok(b),
        _ => Err(EvalError { kind: EvalErrorKind::TypeMismatch, path: expr.to_string() }),
    }
}

pub fn evaluate_policy(policy: &Policy, graph: &PredicateGraph) -> PolicyResult {
    evaluate_policy_value(policy, &graph.to_value())
}

/// [`evaluate_policy`] against a graph already in document form.
pub fn evaluate_policy_value(policy: &Policy, graph: &Value) -> PolicyResult {
    let binding = policy.scope.kind.binding_name();
    let mut applicable = false;
    let mut errored = false;
    let mut violations = Vec::new();

    for (element_index, element) in scoped_elements(policy, graph) {
        let env = EvalEnv::bind(graph, binding, element);
        if !policy.where_clauses.iter().all(|c| holds(&c.expr, &env).unwrap_or(false)) {
            continue;
        }
        applicable = true;
        let span = if policy.scope.kind == ScopeKind::Output { None } else { element_span(element) };
        for (assert_index, clause) in policy.asserts.iter().enumerate() {
            let violation =
                |message: String, expected: Value, actual: Value, eval_error: Option<EvalError>| Violation {
                    policy_id: policy.id.clone(),
                    message,
                    expected,
                    actual,
                    tier: policy.tier,
                    element_index,
                    span,
                    assert_index,
                    eval_error,
                };
            let outcome = match equality_sides(&clause.expr, binding) {
                Some((actual_expr, expected_expr)) => eval_expr(actual_expr, &env).and_then(|actual| {
                    let expected = eval_expr(expected_expr, &env)?;
                    Ok((actual != expected).then(|| {
                        let message = format!("{actual} != {expected}");
                        violation(message, expected, actual, None)
                    }))
                }),
                None => eval_expr(&clause.expr, &env).and_then(|value| match value {
                    Value::Bool(true) => Ok(None),
                    Value::Bool(false) => Ok(Some(violation(
                        format!("assertion failed: {}", clause.source),
                        Value::from(ASSERTION_TRUE),
                        Value::Bool(false),
                        None,
                    ))),
                    _ => Err(EvalError { kind: EvalErrorKind::TypeMismatch, path: clause.expr.to_string() }),
                }),
            };
            match outcome {
                Ok(None) => {}
                Ok(Some(v)) => violations.push(v),
                Err(e) => {
                    errored = true;
                    let message = format!("evaluation error: {e}");
                    violations.push(violation(
                        message,
                        Value::from(ASSERTION_TRUE),
                        Value::from(e.kind.to_string()),
                        Some(e),
                    ));
                }
            }
        }
    }

    let status = if errored {
        Status::EvalError
    } else if !violations.is_empty() {
        Status::Violated
    } else if applicable {
        Status::Passed
    } else {
        Status::NotApplicable
    };
    PolicyResult { policy_id: policy.id.clone(), tier: policy.tier, status, violations }
}

pub fn evaluate_pack(
    policies: &[Policy],
    graph: &PredicateGraph,
    output_id: &str,
) -> Result<Verdict, DuplicateIdError> {
    evaluate_pack_value(policies, &graph.to_value(), output_id)
}

pub fn evaluate_pack_value(policies: &[Policy], graph: &Value, output_id: &str) -> Result<Verdict, DuplicateIdError> {
    let ordered = resolve_order(policies)?;
    let results: Vec<PolicyResult> = ordered.iter().map(|p| evaluate_policy_value(p, graph)).collect();
    Ok(Verdict::from_results(output_id, results))
}

#[derive(Serialize)]
struct WireViolation<'a> {
    policy_id: &'a str,
    message: &'a str,
    expected: &'a Value,
    actual: &'a Value,
}

#[derive(Serialize)]
struct WireLocation {
    element_index: usize,
    assert_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    span: Option<Span>,
}

#[derive(Serialize)]
struct WireDetail<'a> {
    policy_id: &'a str,
    status: Status,
    tier: Tier,
    violations: Vec<WireLocation>,
}

#[derive(Serialize)]
struct WireVerdict<'a> {
    output_id: &'a str,
    policies_evaluated: usize,
    policies_passed: usize,
    violations: Vec<WireViolation<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<Vec<WireDetail<'a>>>,
}

impl Verdict {
    pub fn from_results(output_id: &str, results: Vec<PolicyResult>) -> Verdict {
        let policies_passed = results.iter().filter(|r| counts_as_passed(r.status)).count();
        Verdict {
            output_id: output_id.to_string(),
            policies_evaluated: results.len(),
            policies_passed,
            violations: results.iter().flat_map(|r| r.violations.iter().cloned()).collect(),
            results,
        }
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn result(&self, policy_id: &str) -> Option<&PolicyResult> {
        self.results.iter().find(|r| r.policy_id == policy_id)
    }

    fn wire(&self, details: bool) -> WireVerdict<'_> {
        WireVerdict {
            output_id: &self.output_id,
            policies_evaluated: self.policies_evaluated,
            policies_passed: self.policies_passed,
            violations: self
                .violations
                .iter()
                .map(|v| WireViolation {
                    policy_id: &v.policy_id,
                    message: &v.message,
                    expected: &v.expected,
                    actual: &v.actual,
                })
                .collect(),
            details: details.then(|| {
                self.results
                    .iter()
                    .map(|r| WireDetail {
                        policy_id: &r.policy_id,
                        status: r.status,
                        tier: r.tier,
                        violations: r
                            .violations
                            .iter()
                            .map(|v| WireLocation {
                                element_index: v.element_index,
                                assert_index: v.assert_index,
                                span: v.span,
                            })
                            .collect(),
                    })
                    .collect()
            }),
        }
    }

    /// Canonical wire form: output_id, counts and violations only.
    pub fn to_canonical_json(&self) -> String {
        canonical_json(&self.wire(false))
    }

    /// Canonical wire form with the per-policy `details` array.
    pub fn to_canonical_json_with_details(&self) -> String {
        canonical_json(&self.wire(true))
    }

    pub fn to_json(&self, details: bool) -> serde_json::Value {
        serde_json::to_value(self.wire(details)).expect("verdict serializes")
    }

    /// Hex SHA-256 of the canonical wire form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json().as_bytes()))
    }
}
