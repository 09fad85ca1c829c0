//! Violation correction with re-verification.
//!
//! Violations that only a rewrite can fix go to a rewrite provider first and
//! its candidate text is re-extracted. Deterministic and template fixes then
//! edit a copy of the graph in resolve order. The result is always
//! re-verified before it can be accepted.

mod patch;
mod strategy;
mod template;

use std::collections::{HashMap, HashSet};

use serde::Serialize;

pub use patch::{apply_deterministic, text_rendering, Patch, PatchError};
pub use strategy::{element_pointer, existence_target, select_strategy, writable_pointer, CorrectionStrategy};
pub use template::{apply_template, instantiate, TemplateError};

use crate::cpl::{Action, Policy, Tier};
use crate::graph::PredicateGraph;
use crate::provider::{Extractor, RewriteProvider};
use crate::value::{canonical_json, Value};
use crate::verifier::{evaluate_pack, resolve_order, DuplicateIdError, Status, Verdict, Violation};

/// What happened to one violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Applied,
    /// Left alone because the policy only warns.
    Warned,
    /// The policy rejects outputs outright.
    Rejected,
    /// A higher-ordered patch already touched an overlapping path.
    Conflict {
        winner: String,
        path: String,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorrectionRecord {
    pub policy_id: String,
    pub element_index: usize,
    pub assert_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<CorrectionStrategy>,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectionResult {
    pub original_graph: PredicateGraph,
    pub corrected_graph: PredicateGraph,
    /// Present when the output has source text and every edit could be
    /// mirrored in it.
    pub corrected_text: Option<String>,
    pub records: Vec<CorrectionRecord>,
    pub patches: Vec<Patch>,
    /// Computed on `corrected_graph` after the last edit.
    pub reverify_verdict: Verdict,
    pub accepted: bool,
    /// Why the result was not accepted; empty when it was.
    pub reasons: Vec<String>,
    /// Character edit distance between original and corrected text.
    pub edit_distance: Option<usize>,
}

impl CorrectionResult {
    /// The most invasive strategy that was applied.
    pub fn strategy(&self) -> Option<CorrectionStrategy> {
        self.records.iter().filter(|r| r.outcome == Outcome::Applied).filter_map(|r| r.strategy).max()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut doc = serde_json::json!({
            "accepted": self.accepted,
            "original_graph": self.original_graph.to_value().to_json(),
            "corrected_graph": self.corrected_graph.to_value().to_json(),
            "strategy": self.strategy(),
            "records": self.records,
            "patches": self.patches,
            "reverify_verdict": self.reverify_verdict.to_json(true),
            "reasons": self.reasons,
        });
        if let Some(text) = &self.corrected_text {
            doc["corrected_text"] = text.clone().into();
        }
        if let Some(d) = self.edit_distance {
            doc["edit_distance"] = d.into();
        }
        doc
    }

    pub fn to_canonical_json(&self) -> String {
        canonical_json(&self.to_json())
    }
}

fn pointer_overlaps(a: &str, b: &str) -> bool {
    let sa: Vec<&str> = a.split('/').collect();
    let sb: Vec<&str> = b.split('/').collect();
    sa.iter().zip(&sb).all(|(x, y)| x == y)
}

/// External components used for constrained rewrites.
#[derive(Clone, Copy, Default)]
pub struct Rewriter<'a> {
    pub provider: Option<&'a dyn RewriteProvider>,
    pub extractor: Option<&'a dyn Extractor>,
}

impl<'a> Rewriter<'a> {
    pub fn new(provider: &'a dyn RewriteProvider, extractor: &'a dyn Extractor) -> Self {
        Rewriter { provider: Some(provider), extractor: Some(extractor) }
    }
}

fn sorted_by_rank<'v>(violations: &'v [Violation], rank: &HashMap<&str, usize>) -> Vec<&'v Violation> {
    let mut sorted: Vec<&Violation> = violations.iter().collect();
    sorted.sort_by_key(|v| {
        (rank.get(v.policy_id.as_str()).copied().unwrap_or(usize::MAX), v.element_index, v.assert_index)
    });
    sorted
}

fn record(v: &Violation, strategy: Option<CorrectionStrategy>, outcome: Outcome) -> CorrectionRecord {
    CorrectionRecord {
        policy_id: v.policy_id.clone(),
        element_index: v.element_index,
        assert_index: v.assert_index,
        strategy,
        outcome,
    }
}

fn attempt_rewrite(
    rewriter: Rewriter<'_>,
    text: Option<&str>,
    pending: &[(&Violation, &Policy)],
) -> Result<(String, PredicateGraph), String> {
    let (provider, extractor, text) = match (rewriter.provider, rewriter.extractor, text) {
        (None, _, _) => return Err("no rewrite provider".to_string()),
        (Some(_), None, _) => return Err("no extractor for rewrite".to_string()),
        (Some(_), Some(_), None) => return Err("no source text to rewrite".to_string()),
        (Some(p), Some(x), Some(t)) => (p, x, t),
    };
    let violations: Vec<Violation> = pending.iter().map(|(v, _)| (*v).clone()).collect();
    let mut hints: Vec<&str> = Vec::new();
    for (_, p) in pending {
        if let Some(h) = p.on_violation.correction_hint.as_deref() {
            if !hints.contains(&h) {
                hints.push(h);
            }
        }
    }
    let hint = (!hints.is_empty()).then(|| hints.join("\n"));
    provider
        .rewrite(text, &violations, hint.as_deref())
        .and_then(|candidate| extractor.extract(&candidate).map(|g| (candidate, g)))
        .map_err(|e| format!("rewrite failed: {e}"))
}

/// Corrects `graph` given the `verdict` it received from `policies`.
///
/// Violations that need a rewrite are sent to the provider first, in one
/// request; the candidate is re-extracted and re-verified. Deterministic
/// patches and template insertions then fix what remains, in resolve order.
pub fn correct(
    graph: &PredicateGraph,
    verdict: &Verdict,
    policies: &[Policy],
    rewriter: Rewriter<'_>,
) -> Result<CorrectionResult, DuplicateIdError> {
    let ordered = resolve_order(policies)?;
    let rank: HashMap<&str, usize> = ordered.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
    let policy_of = |v: &Violation| rank.get(v.policy_id.as_str()).map(|&i| &ordered[i]);

    let mut working = graph.clone();
    let mut text_tracks = graph.source_text.is_some();
    let mut records = Vec::new();
    let mut patches: Vec<Patch> = Vec::new();
    let mut reasons = Vec::new();

    let original_doc = graph.to_value();
    let rewrite_pending: Vec<(&Violation, &Policy)> = sorted_by_rank(&verdict.violations, &rank)
        .into_iter()
        .filter_map(|v| policy_of(v).map(|p| (v, p)))
        .filter(|(v, p)| {
            p.on_violation.action == Action::Correct
                && select_strategy(v, p, &original_doc) == CorrectionStrategy::ConstrainedRewrite
        })
        .collect();

    let mut rewritten_text = None;
    let remaining: Vec<Violation> = if rewrite_pending.is_empty() {
        verdict.violations.clone()
    } else {
        match attempt_rewrite(rewriter, graph.source_text.as_deref(), &rewrite_pending) {
            Ok((candidate, extracted)) => {
                for (v, _) in &rewrite_pending {
                    records.push(record(v, Some(CorrectionStrategy::ConstrainedRewrite), Outcome::Applied));
                }
                working = extracted;
                text_tracks = working.source_text.is_some();
                rewritten_text = Some(candidate);
                evaluate_pack(policies, &working, &verdict.output_id)?.violations
            }
            Err(reason) => {
                for (v, _) in &rewrite_pending {
                    records.push(record(
                        v,
                        Some(CorrectionStrategy::ConstrainedRewrite),
                        Outcome::Failed { reason: reason.clone() },
                    ));
                }
                reasons.push(reason);
                let sent: Vec<&Violation> = rewrite_pending.iter().map(|(v, _)| *v).collect();
                verdict.violations.iter().filter(|v| !sent.iter().any(|s| std::ptr::eq(*s, *v))).cloned().collect()
            }
        }
    };

    for v in sorted_by_rank(&remaining, &rank) {
        let Some(policy) = policy_of(v) else {
            reasons.push(format!("violation of unknown policy {}", v.policy_id));
            records.push(record(v, None, Outcome::Failed { reason: "unknown policy".into() }));
            continue;
        };
        match policy.on_violation.action {
            Action::Warn => {
                records.push(record(v, None, Outcome::Warned));
                continue;
            }
            Action::Reject => {
                reasons.push(format!("rejected by {}", policy.id));
                records.push(record(v, None, Outcome::Rejected));
                continue;
            }
            Action::Correct => {}
        }
        let document = working.to_value();
        let strategy = select_strategy(v, policy, &document);
        let conflict_with = |paths: &[String]| {
            paths.iter().find_map(|p| {
                patches.iter().find(|q| pointer_overlaps(&q.path, p)).map(|q| (q.policy_id.clone(), p.clone()))
            })
        };
        let outcome = match strategy {
            CorrectionStrategy::DeterministicPatch => {
                let path = writable_pointer(v, policy, &document).expect("strategy implies a writable path");
                if let Some((winner, path)) = conflict_with(&[path]) {
                    Outcome::Conflict { winner, path }
                } else {
                    match apply_deterministic(&working, v, policy) {
                        Ok((mut next, patch)) => {
                            if text_tracks {
                                text_tracks = patch::patch_text(
                                    &mut next,
                                    policy.scope.kind,
                                    v.element_index,
                                    &patch.old,
                                    &patch.new,
                                );
                            }
                            working = next;
                            patches.push(patch);
                            Outcome::Applied
                        }
                        Err(e) => Outcome::Failed { reason: e.to_string() },
                    }
                }
            }
            CorrectionStrategy::TemplateInsert => match apply_template(&working, v, policy) {
                Ok((next, new_patches)) => {
                    let paths: Vec<String> = new_patches.iter().map(|p| p.path.clone()).collect();
                    if let Some((winner, path)) = conflict_with(&paths) {
                        Outcome::Conflict { winner, path }
                    } else {
                        working = next;
                        patches.extend(new_patches);
                        Outcome::Applied
                    }
                }
                Err(e) => Outcome::Failed { reason: e.to_string() },
            },
            // Only reachable when the rewritten output still needs one.
            CorrectionStrategy::ConstrainedRewrite => Outcome::Failed { reason: "unresolved by rewrite".into() },
        };
        if let Outcome::Failed { reason } = &outcome {
            if strategy != CorrectionStrategy::ConstrainedRewrite {
                reasons.push(format!("{}: {reason}", policy.id));
            }
        }
        records.push(record(v, Some(strategy), outcome));
    }

    let reverify = evaluate_pack(policies, &working, &verdict.output_id)?;

    let corrected: HashSet<&str> =
        records.iter().filter(|r| r.strategy.is_some()).map(|r| r.policy_id.as_str()).collect();
    let mut corrected: Vec<&str> = corrected.into_iter().collect();
    corrected.sort_by_key(|id| rank.get(id).copied().unwrap_or(usize::MAX));
    for id in &corrected {
        if let Some(r) = reverify.result(id) {
            if matches!(r.status, Status::Violated | Status::EvalError) {
                reasons.push(format!("{id} still {}", r.status));
            }
        }
    }
    let previously_violated: HashSet<&str> = verdict.violations.iter().map(|v| v.policy_id.as_str()).collect();
    let mut introduced: Vec<&str> = reverify
        .violations
        .iter()
        .filter(|v| matches!(v.tier, Tier::T1 | Tier::T2) && !previously_violated.contains(v.policy_id.as_str()))
        .map(|v| v.policy_id.as_str())
        .collect();
    introduced.dedup();
    for id in introduced {
        reasons.push(format!("correction introduced a violation of {id}"));
    }

    let corrected_text = if text_tracks {
        working.source_text.clone()
    } else if patches.is_empty() {
        rewritten_text
    } else {
        None
    };
    let edit_distance = match (&graph.source_text, &corrected_text) {
        (Some(a), Some(b)) => Some(strsim::levenshtein(a, b)),
        _ => None,
    };
    Ok(CorrectionResult {
        original_graph: graph.clone(),
        corrected_graph: working,
        corrected_text,
        records,
        patches,
        reverify_verdict: reverify,
        accepted: reasons.is_empty(),
        reasons,
        edit_distance,
    })
}

/// Keys of the top-level document that differ between two graphs, as JSON
/// pointers to the deepest differing node.
pub fn changed_paths(a: &PredicateGraph, b: &PredicateGraph) -> Vec<String> {
    fn walk(a: &Value, b: &Value, at: String, out: &mut Vec<String>) {
        match (a, b) {
            (Value::Map(x), Value::Map(y)) => {
                let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
                for k in keys {
                    let path = format!("{at}/{}", crate::value::pointer_escape(k));
                    match (x.get(k), y.get(k)) {
                        (Some(p), Some(q)) => walk(p, q, path, out),
                        _ => out.push(path),
                    }
                }
            }
            (Value::List(x), Value::List(y)) if x.len() == y.len() => {
                for (i, (p, q)) in x.iter().zip(y).enumerate() {
                    walk(p, q, format!("{at}/{i}"), out);
                }
            }
            _ if a == b => {}
            _ => out.push(at),
        }
    }
    let mut out = Vec::new();
    walk(&a.to_value(), &b.to_value(), String::new(), &mut out);
    out
}
