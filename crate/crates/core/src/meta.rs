//! Rubrics, learned-verifier analyses, meta-verification and the reward
//! product.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpl::is_dotted_id;
use crate::number::Number;
use crate::provider::{MetaVerifier, ProviderError};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid rubric: {0}")]
pub struct RubricError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetaError {
    #[error("invalid analysis: {0}")]
    Analysis(String),
    #[error("{name} must be in [0, 1], got {value}")]
    OutOfUnitInterval { name: &'static str, value: Number },
}

/// Default threshold a meta-verifier's support must exceed.
pub fn default_theta() -> Number {
    Number::from_ratio(1, 2)
}

fn in_unit_interval(n: &Number) -> bool {
    !n.is_negative() && *n <= Number::one()
}

fn unit(name: &'static str, value: Number) -> Result<Number, MetaError> {
    if in_unit_interval(&value) {
        Ok(value)
    } else {
        Err(MetaError::OutOfUnitInterval { name, value })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rubric {
    pub id: String,
    /// Highest score first.
    pub levels: Vec<(Number, String)>,
    pub output_schema: Option<serde_json::Value>,
}

pub fn validate_rubric(document: &str) -> Result<Rubric, RubricError> {
    let json: serde_json::Value = serde_json::from_str(document).map_err(|e| RubricError(e.to_string()))?;
    let obj = json.as_object().ok_or_else(|| RubricError("expected object".into()))?;
    let id = obj.get("id").and_then(|v| v.as_str()).ok_or_else(|| RubricError("missing id".into()))?;
    if !is_dotted_id(id) {
        return Err(RubricError("id is not a dotted identifier".into()));
    }
    let raw_levels =
        obj.get("rubric").and_then(|v| v.as_object()).ok_or_else(|| RubricError("missing rubric levels".into()))?;
    if raw_levels.len() < 2 {
        return Err(RubricError("fewer than 2 levels".into()));
    }
    let mut levels = Vec::with_capacity(raw_levels.len());
    for (key, description) in raw_levels {
        let score =
            Number::parse_decimal(key).map_err(|_| RubricError(format!("level key '{key}' is not a number")))?;
        if !in_unit_interval(&score) {
            return Err(RubricError("score out of [0,1]".into()));
        }
        let text = description.as_str().ok_or_else(|| RubricError(format!("level {key}: expected string")))?;
        if text.trim().is_empty() {
            return Err(RubricError(format!("level {key}: empty description")));
        }
        levels.push((score, text.to_string()));
    }
    levels.sort_by(|a, b| b.0.cmp(&a.0));
    if levels.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(RubricError("duplicate level score".into()));
    }
    let output_schema = match obj.get("output_schema") {
        None => None,
        Some(schema) => {
            let declared = schema.as_object().ok_or_else(|| RubricError("output_schema: expected object".into()))?;
            for key in ["issues", "score"] {
                if !declared.contains_key(key) {
                    return Err(RubricError(format!("output_schema must declare '{key}'")));
                }
            }
            Some(schema.clone())
        }
    };
    Ok(Rubric { id: id.to_string(), levels, output_schema })
}

/// Description of the highest level whose key is at most `score`; scores
/// below every key get the lowest level.
pub fn score_to_level<'r>(rubric: &'r Rubric, score: &Number) -> &'r str {
    rubric
        .levels
        .iter()
        .find(|(key, _)| key <= score)
        .or_else(|| rubric.levels.last())
        .map(|(_, text)| text.as_str())
        .expect("a validated rubric has levels")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Issue {
    pub location: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifierAnalysis {
    pub score: Number,
    pub issues: Vec<Issue>,
}

impl VerifierAnalysis {
    pub fn new(score: Number, issues: Vec<Issue>) -> Result<Self, MetaError> {
        let score = unit("score", score)?;
        if issues.iter().any(|i| i.location.is_empty()) {
            return Err(MetaError::Analysis("issue with empty location".into()));
        }
        Ok(VerifierAnalysis { score, issues })
    }

    /// Reads `{"score": ..., "issues": [{"location", "description"}]}`.
    pub fn from_json(json: &serde_json::Value) -> Result<Self, MetaError> {
        let score = match json.get("score").map(Value::from_json) {
            Some(Ok(Value::Number(n))) => n,
            _ => return Err(MetaError::Analysis("score must be a number".into())),
        };
        let issues: Vec<Issue> = match json.get("issues") {
            None => Vec::new(),
            Some(raw) => {
                serde_json::from_value(raw.clone()).map_err(|e| MetaError::Analysis(format!("issues: {e}")))?
            }
        };
        VerifierAnalysis::new(score, issues)
    }
}

/// The meta-verifier's verdict on one issue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaAssessment {
    pub issue_index: usize,
    pub support: Result<Number, ProviderError>,
}

/// Asks the meta-verifier about every issue, once each, keeping order.
pub fn meta_assess(output: &str, analysis: &VerifierAnalysis, meta: &dyn MetaVerifier) -> Vec<MetaAssessment> {
    analysis
        .issues
        .par_iter()
        .enumerate()
        .map(|(issue_index, issue)| {
            let support = meta.support(output, issue).and_then(|s| {
                if in_unit_interval(&s) {
                    Ok(s)
                } else {
                    Err(ProviderError(format!("support {s} outside [0, 1]")))
                }
            });
            MetaAssessment { issue_index, support }
        })
        .collect()
}

/// Issues whose support strictly exceeds `theta`, in their original order.
/// Issues the meta-verifier fails on are dropped and logged.
pub fn meta_filter(
    output: &str,
    analysis: &VerifierAnalysis,
    meta: &dyn MetaVerifier,
    theta: &Number,
) -> Result<Vec<Issue>, MetaError> {
    unit("theta", theta.clone())?;
    let kept = meta_assess(output, analysis, meta)
        .into_iter()
        .filter_map(|a| match a.support {
            Ok(s) if s > *theta => Some(analysis.issues[a.issue_index].clone()),
            Ok(_) => None,
            Err(e) => {
                warn!("meta-verifier failed on issue {}: {e}", a.issue_index);
                None
            }
        })
        .collect();
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewardComponents {
    pub r_format: Number,
    pub r_score: Number,
    pub r_meta: Number,
}

impl RewardComponents {
    pub fn new(r_format: Number, r_score: Number, r_meta: Number) -> Result<Self, MetaError> {
        Ok(RewardComponents {
            r_format: unit("r_format", r_format)?,
            r_score: unit("r_score", r_score)?,
            r_meta: unit("r_meta", r_meta)?,
        })
    }
}

pub fn reward(c: &RewardComponents) -> Number {
    &(&c.r_format * &c.r_score) * &c.r_meta
}

#[cfg(test)]
mod tests {
    use super::*;

    const REASONING: &str = r#"{
      "id": "verifier.reasoning.validity",
      "rubric": {
        "1.0": "All steps follow logically; no gaps or unsupported claims",
        "0.5": "Core argument sound but minor gaps in justification",
        "0.0": "Contains logical errors or non-sequiturs that invalidate conclusion"
      },
      "output_schema": {
        "issues": [{"location": "...", "description": "..."}],
        "score": "float"
      }
    }"#;

    fn n(s: &str) -> Number {
        Number::parse_decimal(s).unwrap()
    }

    #[test]
    fn reasoning_rubric() {
        let r = validate_rubric(REASONING).unwrap();
        assert_eq!(r.id, "verifier.reasoning.validity");
        let keys: Vec<String> = r.levels.iter().map(|(k, _)| k.to_string()).collect();
        assert_eq!(keys, ["1", "0.5", "0"]);
        assert_eq!(score_to_level(&r, &n("0.5")), "Core argument sound but minor gaps in justification");
        assert_eq!(score_to_level(&r, &n("1.0")), "All steps follow logically; no gaps or unsupported claims");
        assert_eq!(score_to_level(&r, &n("0.74")), "Core argument sound but minor gaps in justification");
        assert_eq!(score_to_level(&r, &n("0.4999")), r.levels[2].1);
    }

    #[test]
    fn level_floor_clamps_to_lowest() {
        let r = validate_rubric(r#"{"id":"r","rubric":{"0.9":"high","0.2":"low"}}"#).unwrap();
        assert_eq!(score_to_level(&r, &n("0.1")), "low");
        assert_eq!(score_to_level(&r, &n("0.2")), "low");
        assert_eq!(score_to_level(&r, &n("0.89")), "low");
        assert_eq!(score_to_level(&r, &n("0.9")), "high");
    }

    #[test]
    fn rubric_errors() {
        let err = |doc: &str| validate_rubric(doc).unwrap_err().0;
        assert_eq!(err(r#"{"id":"r","rubric":{"1.0":"only"}}"#), "fewer than 2 levels");
        assert_eq!(err(r#"{"id":"r","rubric":{"1.5":"a","0.0":"b"}}"#), "score out of [0,1]");
        assert_eq!(err(r#"{"id":"r","rubric":{"1":"a","1.0":"b"}}"#), "duplicate level score");
        assert_eq!(err(r#"{"id":"r","rubric":{"1":"a","0":"  "}}"#), "level 0: empty description");
        assert_eq!(
            err(r#"{"id":"r","rubric":{"1":"a","0":"b"},"output_schema":{"score":"float"}}"#),
            "output_schema must declare 'issues'"
        );
    }

    fn analysis(k: usize) -> VerifierAnalysis {
        let issues = (0..k).map(|i| Issue { location: format!("step {i}"), description: "gap".into() }).collect();
        VerifierAnalysis::new(n("0.5"), issues).unwrap()
    }

    #[test]
    fn filter_is_strict() {
        let supports = [n("0.9"), n("0.3"), n("0.5")];
        let meta = |_: &str, issue: &Issue| {
            let i: usize = issue.location[5..].parse().unwrap();
            Ok::<_, ProviderError>(supports[i].clone())
        };
        let kept = meta_filter("y", &analysis(3), &meta, &default_theta()).unwrap();
        assert_eq!(kept, vec![analysis(3).issues[0].clone()]);
        assert!(meta_filter("y", &analysis(3), &meta, &Number::one()).unwrap().is_empty());
        assert!(meta_filter("y", &analysis(0), &meta, &default_theta()).unwrap().is_empty());
        assert!(meta_filter("y", &analysis(1), &meta, &n("1.5")).is_err());
    }

    #[test]
    fn provider_errors_drop_the_issue() {
        let meta = |_: &str, issue: &Issue| {
            if issue.location == "step 1" {
                Err(ProviderError::new("timeout"))
            } else {
                Ok(n("2"))
            }
        };
        // Out-of-range support is also treated as a failure.
        assert!(meta_filter("y", &analysis(2), &meta, &Number::zero()).unwrap().is_empty());
        let assessments = meta_assess("y", &analysis(2), &meta);
        assert_eq!(assessments[1].support, Err(ProviderError::new("timeout")));
    }

    #[test]
    fn reward_examples() {
        let r = |a: &str, b: &str, c: &str| reward(&RewardComponents::new(n(a), n(b), n(c)).unwrap());
        assert_eq!(r("1", "1", "1"), Number::one());
        assert_eq!(r("1", "0.8", "0.5"), n("0.4"));
        assert_eq!(r("0", "0.3", "0.7"), Number::zero());
        assert!(RewardComponents::new(n("1.1"), n("1"), n("1")).is_err());
    }

    #[test]
    fn analysis_from_json() {
        let a = VerifierAnalysis::from_json(&serde_json::json!({
            "score": 0.25, "issues": [{"location": "para 2", "description": "non-sequitur"}]
        }))
        .unwrap();
        assert_eq!(a.score, n("0.25"));
        assert_eq!(a.issues.len(), 1);
        assert!(VerifierAnalysis::from_json(&serde_json::json!({"score": 2})).is_err());
        assert!(VerifierAnalysis::from_json(
            &serde_json::json!({"score": 0.1, "issues": [{"location": "", "description": "x"}]})
        )
        .is_err());
    }
}
