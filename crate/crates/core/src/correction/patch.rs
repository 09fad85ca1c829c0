use serde::Serialize;
use thiserror::Error;

use super::strategy::writable_pointer;
use crate::cpl::{Policy, ScopeKind};
use crate::graph::{validate_graph, PredicateGraph, SchemaError, Span};
use crate::value::Value;
use crate::verifier::Violation;

/// One value replacement, addressed by JSON pointer into the graph document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Patch {
    pub policy_id: String,
    pub path: String,
    pub old: Value,
    pub new: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatchError {
    #[error("no writable path for the failed assert")]
    NotWritable,
    #[error("path {0} no longer exists")]
    Missing(String),
    #[error("patched graph is invalid: {0}")]
    Invalid(SchemaError),
}

/// Rebuilds a typed graph from an edited document, rejecting invalid results.
pub(crate) fn rebuild(document: &Value) -> Result<PredicateGraph, SchemaError> {
    let graph = PredicateGraph::from_value(document)?;
    match validate_graph(&graph).into_iter().next() {
        Some(e) => Err(e),
        None => Ok(graph),
    }
}

/// Writes the violation's expected value at the assert's writable path.
/// The input graph is not modified.
pub fn apply_deterministic(
    graph: &PredicateGraph,
    violation: &Violation,
    policy: &Policy,
) -> Result<(PredicateGraph, Patch), PatchError> {
    let mut document = graph.to_value();
    let path = writable_pointer(violation, policy, &document).ok_or(PatchError::NotWritable)?;
    let slot = document.pointer_mut(&path).ok_or_else(|| PatchError::Missing(path.clone()))?;
    let old = std::mem::replace(slot, violation.expected.clone());
    let patched = rebuild(&document).map_err(PatchError::Invalid)?;
    let patch = Patch { policy_id: policy.id.clone(), path, old, new: violation.expected.clone() };
    Ok((patched, patch))
}

/// How a value appears in prose: strings bare, everything else canonical.
pub fn text_rendering(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Finds `needle` inside `chars[from..to]` where it is not glued to
/// surrounding word characters or decimal digits.
fn find_token(chars: &[char], from: usize, to: usize, needle: &[char], strict: bool) -> Option<usize> {
    if needle.is_empty() || to < from + needle.len() {
        return None;
    }
    (from..=to - needle.len()).find(|&i| {
        if chars[i..i + needle.len()] != *needle {
            return false;
        }
        if !strict {
            return true;
        }
        let before_ok = i == 0 || !(is_word(chars[i - 1]) || chars[i - 1] == '.');
        let after = i + needle.len();
        let after_ok = after >= chars.len()
            || !(is_word(chars[after])
                || (chars[after] == '.' && chars.get(after + 1).is_some_and(|c| c.is_ascii_digit())));
        before_ok && after_ok
    })
}

/// Maps a character offset across the replacement of `[at, at + removed)` by
/// `inserted` characters.
fn shift(offset: usize, at: usize, removed: usize, inserted: usize) -> usize {
    if offset >= at + removed {
        offset - removed + inserted
    } else if offset > at {
        at + (offset - at).min(inserted)
    } else {
        offset
    }
}

/// Mirrors a value patch in `source_text`: the canonical rendering of `old`
/// inside the element's span becomes the rendering of `new`, and every span
/// is shifted to match. Returns false, leaving the graph untouched, when the
/// text cannot be located.
pub(crate) fn patch_text(
    graph: &mut PredicateGraph,
    kind: ScopeKind,
    element_index: usize,
    old: &Value,
    new: &Value,
) -> bool {
    let Some(text) = &graph.source_text else {
        return false;
    };
    let chars: Vec<char> = text.chars().collect();
    let span = match kind.collection() {
        None => Some(Span::new(0, chars.len())),
        Some(collection) => graph.element_span(collection, element_index),
    };
    let Some(span) = span else {
        return false;
    };
    let needle: Vec<char> = text_rendering(old).chars().collect();
    let replacement: Vec<char> = text_rendering(new).chars().collect();
    let strict = !matches!(old, Value::String(_));
    let Some(at) = find_token(&chars, span.start, span.end.min(chars.len()), &needle, strict) else {
        return false;
    };
    let mut edited: Vec<char> = Vec::with_capacity(chars.len() + replacement.len());
    edited.extend_from_slice(&chars[..at]);
    edited.extend_from_slice(&replacement);
    edited.extend_from_slice(&chars[at + needle.len()..]);

    let mut spans: Vec<Span> = graph.spans_mut().map(|s| *s).collect();
    for s in spans.iter_mut() {
        s.start = shift(s.start, at, needle.len(), replacement.len());
        s.end = shift(s.end, at, needle.len(), replacement.len());
        if s.start >= s.end {
            return false;
        }
    }
    for (slot, s) in graph.spans_mut().zip(spans) {
        *slot = s;
    }
    graph.source_text = Some(edited.into_iter().collect());
    true
}
