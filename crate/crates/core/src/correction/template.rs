use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use super::patch::{text_rendering, Patch};
use super::strategy::existence_target;
use crate::cpl::{Policy, ScopeKind};
use crate::graph::{Citation, Claim, CodeBlock, Modality, PredicateGraph, Span};
use crate::value::{Map, Value};
use crate::verifier::{scoped_elements, Violation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("policy has no template")]
    NoTemplate,
    #[error("unbound placeholder {{{0}}}")]
    Unbound(String),
    #[error("no insertion rule for {0}")]
    NoInsertionRule(String),
}

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid pattern"))
}

/// Substitutes `{field}` with the element's top-level field values.
pub fn instantiate(template: &str, fields: &Map) -> Result<String, TemplateError> {
    if let Some(missing) =
        placeholder().captures_iter(template).map(|c| c[1].to_string()).find(|name| !fields.contains_key(name))
    {
        return Err(TemplateError::Unbound(missing));
    }
    Ok(placeholder().replace_all(template, |c: &regex::Captures| text_rendering(&fields[&c[1]])).into_owned())
}

/// Appends `text` to the source text, separated by a space when needed, and
/// returns its span.
fn append_text(graph: &mut PredicateGraph, text: &str) -> Option<Span> {
    let source = graph.source_text.as_mut()?;
    if !source.is_empty() && !source.ends_with(char::is_whitespace) {
        source.push(' ');
    }
    let start = source.chars().count();
    source.push_str(text);
    let end = start + text.chars().count();
    (end > start).then(|| Span::new(start, end))
}

fn fresh_citation_id(graph: &PredicateGraph) -> String {
    (1..).map(|n| format!("c{n}")).find(|id| graph.citations.iter().all(|c| &c.id != id)).expect("unbounded id space")
}

fn list_patch(policy: &Policy, collection: &str, index: usize, new: Value) -> Patch {
    Patch { policy_id: policy.id.clone(), path: format!("/{collection}/{index}"), old: Value::Null, new }
}

/// Inserts the missing element the violated existence assert asks for.
///
/// - `count(claim.citation_ids) > 0`: a citation whose document is the
///   instantiated template, linked from the claim;
/// - `count(citations)`, `count(claims)`, `count(code_blocks)` (or `any`):
///   a new element whose text field is the instantiated template.
///
/// A violation whose element no longer exists is left alone.
pub fn apply_template(
    graph: &PredicateGraph,
    violation: &Violation,
    policy: &Policy,
) -> Result<(PredicateGraph, Vec<Patch>), TemplateError> {
    let template = policy.on_violation.template.as_deref().ok_or(TemplateError::NoTemplate)?;
    let assert = policy.asserts.get(violation.assert_index).map(|c| &c.expr);
    let target = assert.and_then(existence_target).ok_or_else(|| {
        TemplateError::NoInsertionRule(assert.map_or_else(|| "missing assert".into(), ToString::to_string))
    })?;
    let document = graph.to_value();
    let Some((_, element)) =
        scoped_elements(policy, &document).into_iter().find(|(i, _)| *i == violation.element_index)
    else {
        return Ok((graph.clone(), Vec::new()));
    };
    let empty = Map::new();
    let text = instantiate(template, element.as_map().unwrap_or(&empty))?;

    let binding = policy.scope.kind.binding_name();
    let mut out = graph.clone();
    let mut patches = Vec::new();
    let segments: Vec<&str> = target.segments.iter().map(String::as_str).collect();
    match (target.root.as_str(), segments.as_slice()) {
        (root, ["citation_ids"]) if root == binding && policy.scope.kind == ScopeKind::Claim => {
            let id = fresh_citation_id(&out);
            let span = append_text(&mut out, &text);
            let citation = Citation { id: id.clone(), document_id: text, span, extras: Map::new() };
            patches.push(list_patch(policy, "citations", out.citations.len(), citation.to_value()));
            out.citations.push(citation);
            let claim = &mut out.claims[violation.element_index];
            let old = Value::List(claim.citation_ids.iter().map(|s| Value::from(s.as_str())).collect());
            claim.citation_ids.push(id);
            let new = Value::List(claim.citation_ids.iter().map(|s| Value::from(s.as_str())).collect());
            patches.push(Patch {
                policy_id: policy.id.clone(),
                path: format!("/claims/{}/citation_ids", violation.element_index),
                old,
                new,
            });
        }
        ("citations", []) => {
            let id = fresh_citation_id(&out);
            let span = append_text(&mut out, &text);
            let citation = Citation { id, document_id: text, span, extras: Map::new() };
            patches.push(list_patch(policy, "citations", out.citations.len(), citation.to_value()));
            out.citations.push(citation);
        }
        ("claims", []) => {
            let span = append_text(&mut out, &text);
            let claim = Claim { text, modality: Modality::Hedged, citation_ids: Vec::new(), span, extras: Map::new() };
            patches.push(list_patch(policy, "claims", out.claims.len(), claim.to_value()));
            out.claims.push(claim);
        }
        ("code_blocks", []) => {
            let span = append_text(&mut out, &text);
            let block = CodeBlock { language_tag: "text".into(), content: text, span, extras: Map::new() };
            patches.push(list_patch(policy, "code_blocks", out.code_blocks.len(), block.to_value()));
            out.code_blocks.push(block);
        }
        _ => return Err(TemplateError::NoInsertionRule(target.to_string())),
    }
    Ok((out, patches))
}
