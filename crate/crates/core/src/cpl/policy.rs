//! Policy documents.

use std::fmt;

use thiserror::Error;

use super::ast::Expr;
use super::parser::{parse_expr, ExprError};
use crate::value::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tier {
    T1,
    T2,
    T3,
}

impl Tier {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::T1 => "T1",
            Tier::T2 => "T2",
            Tier::T3 => "T3",
        }
    }

    pub fn parse(s: &str) -> Option<Tier> {
        match s {
            "T1" => Some(Tier::T1),
            "T2" => Some(Tier::T2),
            "T3" => Some(Tier::T3),
            _ => None,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl serde::Serialize for Tier {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> serde::Deserialize<'de> for Tier {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Tier::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown tier '{s}'")))
    }
}

/// Which graph elements a policy is evaluated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScopeKind {
    ToolCall,
    Operation,
    Claim,
    Entity,
    Citation,
    CodeBlock,
    /// The whole graph, bound once.
    Output,
}

impl ScopeKind {
    pub const ALL: [ScopeKind; 7] = [
        ScopeKind::ToolCall,
        ScopeKind::Operation,
        ScopeKind::Claim,
        ScopeKind::Entity,
        ScopeKind::Citation,
        ScopeKind::CodeBlock,
        ScopeKind::Output,
    ];

    /// Identifier the scoped element is bound to in expressions.
    pub fn binding_name(&self) -> &'static str {
        match self {
            ScopeKind::ToolCall => "tool_call",
            ScopeKind::Operation => "operation",
            ScopeKind::Claim => "claim",
            ScopeKind::Entity => "entity",
            ScopeKind::Citation => "citation",
            ScopeKind::CodeBlock => "code_block",
            ScopeKind::Output => "output",
        }
    }

    /// Graph collection the scope iterates, `None` for `output`.
    pub fn collection(&self) -> Option<&'static str> {
        match self {
            ScopeKind::ToolCall => Some("tool_calls"),
            ScopeKind::Operation => Some("operations"),
            ScopeKind::Claim => Some("claims"),
            ScopeKind::Entity => Some("entities"),
            ScopeKind::Citation => Some("citations"),
            ScopeKind::CodeBlock => Some("code_blocks"),
            ScopeKind::Output => None,
        }
    }

    pub fn parse(s: &str) -> Option<ScopeKind> {
        ScopeKind::ALL.into_iter().find(|k| k.binding_name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scope {
    pub kind: ScopeKind,
    /// Conjunctive equality constraints on top-level element fields.
    pub filter: Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Correct,
    Reject,
    Warn,
}

impl Action {
    pub fn as_str(&self) -> &'static str {
        match self {
            Action::Correct => "CORRECT",
            Action::Reject => "REJECT",
            Action::Warn => "WARN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViolationAction {
    pub action: Action,
    pub correction_hint: Option<String>,
    /// Text inserted by template correction; only used with `CORRECT`.
    pub template: Option<String>,
}

impl Default for ViolationAction {
    fn default() -> Self {
        ViolationAction { action: Action::Correct, correction_hint: None, template: None }
    }
}

/// A parsed expression together with the text it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub source: String,
    pub expr: Expr,
}

impl Clause {
    pub fn parse(source: &str) -> Result<Clause, ExprError> {
        Ok(Clause { source: source.to_string(), expr: parse_expr(source)? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub id: String,
    pub tier: Tier,
    /// Larger values are ordered first within a tier.
    pub priority: i64,
    pub description: Option<String>,
    pub scope: Scope,
    pub where_clauses: Vec<Clause>,
    pub asserts: Vec<Clause>,
    pub on_violation: ViolationAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("invalid {field}: {reason}")]
    Field { field: String, reason: String },
    #[error("in expression `{expression}` {error}")]
    Expr { expression: String, error: ExprError },
}

impl PolicyError {
    pub fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        PolicyError::Field { field: field.into(), reason: reason.into() }
    }
}

pub fn parse_policy(document: &str) -> Result<Policy, PolicyError> {
    let json: serde_json::Value = serde_json::from_str(document).map_err(|e| PolicyError::Syntax(e.to_string()))?;
    Policy::from_json(&json)
}

/// Accepts a single policy object or an array of them.
pub fn parse_policies(document: &str) -> Result<Vec<Policy>, PolicyError> {
    let json: serde_json::Value = serde_json::from_str(document).map_err(|e| PolicyError::Syntax(e.to_string()))?;
    match &json {
        serde_json::Value::Array(items) => items.iter().map(Policy::from_json).collect(),
        _ => Ok(vec![Policy::from_json(&json)?]),
    }
}

const POLICY_KEYS: [&str; 8] = ["id", "tier", "priority", "description", "scope", "where", "assert", "on_violation"];

fn string_field(
    obj: &serde_json::Map<String, serde_json::Value>,
    key: &str,
    field: &str,
) -> Result<Option<String>, PolicyError> {
    match obj.get(key) {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(serde_json::Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(PolicyError::field(field, "expected string")),
    }
}

pub(crate) fn is_dotted_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && !id.ends_with('.')
        && !id.contains("..")
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

fn clauses(json: Option<&serde_json::Value>, field: &str) -> Result<Vec<Clause>, PolicyError> {
    let items = match json {
        None | Some(serde_json::Value::Null) => return Ok(Vec::new()),
        Some(serde_json::Value::Array(items)) => items,
        Some(_) => return Err(PolicyError::field(field, "expected array")),
    };
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let source = match item {
                serde_json::Value::String(s) => s.as_str(),
                serde_json::Value::Object(o) => match o.get("expr") {
                    Some(serde_json::Value::String(s)) => s.as_str(),
                    _ => return Err(PolicyError::field(format!("{field}[{i}].expr"), "expected string")),
                },
                _ => return Err(PolicyError::field(format!("{field}[{i}]"), "expected {\"expr\": ...}")),
            };
            Clause::parse(source).map_err(|error| PolicyError::Expr { expression: source.to_string(), error })
        })
        .collect()
}

impl Policy {
    pub fn from_json(json: &serde_json::Value) -> Result<Policy, PolicyError> {
        let obj = json.as_object().ok_or_else(|| PolicyError::field("policy", "expected object"))?;
        if let Some(unknown) = obj.keys().find(|k| !POLICY_KEYS.contains(&k.as_str())) {
            return Err(PolicyError::field(unknown.clone(), "unknown field"));
        }
        let id = string_field(obj, "id", "id")?.ok_or_else(|| PolicyError::field("id", "missing"))?;
        if !is_dotted_id(&id) {
            return Err(PolicyError::field("id", "not a dotted identifier"));
        }
        let tier_text = string_field(obj, "tier", "tier")?.ok_or_else(|| PolicyError::field("tier", "missing"))?;
        let tier = Tier::parse(&tier_text).ok_or_else(|| PolicyError::field("tier", "unknown tier"))?;
        let priority = match obj.get("priority") {
            None | Some(serde_json::Value::Null) => 0,
            Some(serde_json::Value::Number(n)) => {
                n.as_i64().ok_or_else(|| PolicyError::field("priority", "expected integer"))?
            }
            Some(_) => return Err(PolicyError::field("priority", "expected integer")),
        };
        let description = string_field(obj, "description", "description")?;

        let scope_obj = match obj.get("scope") {
            Some(serde_json::Value::Object(o)) => o,
            Some(_) => return Err(PolicyError::field("scope", "expected object")),
            None => return Err(PolicyError::field("scope", "missing")),
        };
        let kind_text = string_field(scope_obj, "kind", "scope.kind")?
            .ok_or_else(|| PolicyError::field("scope.kind", "missing"))?;
        let kind =
            ScopeKind::parse(&kind_text).ok_or_else(|| PolicyError::field("scope.kind", "unknown scope kind"))?;
        let filter = match scope_obj.get("filter") {
            None | Some(serde_json::Value::Null) => Map::new(),
            Some(f @ serde_json::Value::Object(_)) => match Value::from_json(f) {
                Ok(Value::Map(m)) => m,
                Ok(_) => unreachable!(),
                Err(e) => return Err(PolicyError::field("scope.filter", e.to_string())),
            },
            Some(_) => return Err(PolicyError::field("scope.filter", "expected object")),
        };
        if kind == ScopeKind::Output && !filter.is_empty() {
            return Err(PolicyError::field("scope.filter", "output scope takes no filter"));
        }

        let where_clauses = clauses(obj.get("where"), "where")?;
        let asserts = clauses(obj.get("assert"), "assert")?;
        if asserts.is_empty() {
            return Err(PolicyError::field("assert", "at least one assertion required"));
        }

        let on_violation = match obj.get("on_violation") {
            None | Some(serde_json::Value::Null) => ViolationAction::default(),
            Some(serde_json::Value::Object(o)) => {
                let action = match string_field(o, "action", "on_violation.action")?.as_deref() {
                    None | Some("CORRECT") => Action::Correct,
                    Some("REJECT") => Action::Reject,
                    Some("WARN") => Action::Warn,
                    Some(_) => return Err(PolicyError::field("on_violation.action", "unknown action")),
                };
                ViolationAction {
                    action,
                    correction_hint: string_field(o, "correction_hint", "on_violation.correction_hint")?,
                    template: string_field(o, "template", "on_violation.template")?,
                }
            }
            Some(_) => return Err(PolicyError::field("on_violation", "expected object")),
        };

        Ok(Policy {
            id,
            tier,
            priority,
            description,
            scope: Scope { kind, filter },
            where_clauses,
            asserts,
            on_violation,
        })
    }

    /// Policy document form; parses back to an equal policy.
    pub fn to_json(&self) -> serde_json::Value {
        let clause_list = |cs: &[Clause]| {
            serde_json::Value::Array(cs.iter().map(|c| serde_json::json!({ "expr": c.source })).collect())
        };
        let mut scope = serde_json::json!({ "kind": self.scope.kind.binding_name() });
        if !self.scope.filter.is_empty() {
            scope["filter"] = Value::Map(self.scope.filter.clone()).to_json();
        }
        let mut on_violation = serde_json::json!({ "action": self.on_violation.action.as_str() });
        if let Some(hint) = &self.on_violation.correction_hint {
            on_violation["correction_hint"] = hint.clone().into();
        }
        if let Some(template) = &self.on_violation.template {
            on_violation["template"] = template.clone().into();
        }
        let mut doc = serde_json::json!({
            "id": self.id,
            "tier": self.tier.as_str(),
            "priority": self.priority,
            "scope": scope,
            "where": clause_list(&self.where_clauses),
            "assert": clause_list(&self.asserts),
            "on_violation": on_violation,
        });
        if let Some(d) = &self.description {
            doc["description"] = d.clone().into();
        }
        doc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CALC_MATCHES: &str = r#"{
      "id": "policy.tool.calc_matches",
      "tier": "T1",
      "scope": {"kind": "tool_call",
                "filter": {"name": "calc"}},
      "where": [{"expr": "count(operations) > 0"}],
      "assert": [{
        "expr": "tool_call.arguments.value == last(operations).output"
      }],
      "on_violation": {
        "action": "CORRECT",
        "correction_hint": "Update to exact value"
      }
    }"#;

    #[test]
    fn parses_calc_matches() {
        let p = parse_policy(CALC_MATCHES).unwrap();
        assert_eq!(p.id, "policy.tool.calc_matches");
        assert_eq!(p.tier, Tier::T1);
        assert_eq!(p.priority, 0);
        assert_eq!(p.scope.kind, ScopeKind::ToolCall);
        assert_eq!(p.scope.filter.get("name"), Some(&Value::from("calc")));
        assert_eq!(p.where_clauses.len(), 1);
        assert_eq!(p.asserts.len(), 1);
        assert_eq!(p.on_violation.action, Action::Correct);
        assert_eq!(p.on_violation.correction_hint.as_deref(), Some("Update to exact value"));
    }

    #[test]
    fn minimal_policy() {
        let p = parse_policy(r#"{"id":"p","tier":"T3","scope":{"kind":"output"},"assert":[{"expr":"true"}]}"#).unwrap();
        assert!(p.where_clauses.is_empty());
        assert_eq!(p.priority, 0);
        assert_eq!(p.scope.kind, ScopeKind::Output);
        assert_eq!(p.on_violation, ViolationAction::default());
    }

    #[test]
    fn field_errors() {
        let bad_tier = r#"{"id":"p","tier":"T4","scope":{"kind":"output"},"assert":[{"expr":"true"}]}"#;
        assert_eq!(parse_policy(bad_tier).unwrap_err(), PolicyError::field("tier", "unknown tier"));
        let bad_scope = r#"{"id":"p","tier":"T1","scope":{"kind":"paragraph"},"assert":["true"]}"#;
        assert_eq!(parse_policy(bad_scope).unwrap_err(), PolicyError::field("scope.kind", "unknown scope kind"));
        let bad_action =
            r#"{"id":"p","tier":"T1","scope":{"kind":"output"},"assert":["true"],"on_violation":{"action":"IGNORE"}}"#;
        assert_eq!(parse_policy(bad_action).unwrap_err(), PolicyError::field("on_violation.action", "unknown action"));
        let typo = r#"{"id":"p","tier":"T1","scope":{"kind":"output"},"asert":["true"]}"#;
        assert_eq!(parse_policy(typo).unwrap_err(), PolicyError::field("asert", "unknown field"));
        let prio = r#"{"id":"p","tier":"T1","priority":1.5,"scope":{"kind":"output"},"assert":["true"]}"#;
        assert_eq!(parse_policy(prio).unwrap_err(), PolicyError::field("priority", "expected integer"));
        assert!(matches!(parse_policy("{"), Err(PolicyError::Syntax(_))));
    }

    #[test]
    fn expression_errors_carry_source() {
        let doc = r#"{"id":"p","tier":"T1","scope":{"kind":"output"},"assert":[{"expr":"sum("}]}"#;
        match parse_policy(doc).unwrap_err() {
            PolicyError::Expr { expression, error } => {
                assert_eq!(expression, "sum(");
                assert_eq!(error.offset, 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_round_trip() {
        let p = parse_policy(CALC_MATCHES).unwrap();
        let again = Policy::from_json(&p.to_json()).unwrap();
        assert_eq!(p, again);
    }
}
