//! Plug points for external components: models, extractors, trainers,
//! rewriters and learned verifiers.
//!
//! Every trait is implemented for plain closures, and [`SubprocessProvider`]
//! implements all of them over a line-delimited JSON pipe.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{parse_graph, validate_graph, PredicateGraph};
use crate::meta::{Issue, VerifierAnalysis};
use crate::number::Number;
use crate::training_loop::TrainingExample;
use crate::value::Value;
use crate::verifier::Violation;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ProviderError(pub String);

impl ProviderError {
    pub fn new(reason: impl Into<String>) -> Self {
        ProviderError(reason.into())
    }
}

/// Opaque reference to a model version; trainers return new handles.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelHandle(pub String);

impl ModelHandle {
    pub fn new(name: impl Into<String>) -> Self {
        ModelHandle(name.into())
    }
}

impl std::fmt::Display for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub trait Model: Send + Sync {
    fn generate(&self, model: &ModelHandle, prompt: &str, seed: u64) -> Result<String, ProviderError>;
}

pub trait Extractor: Send + Sync {
    fn extract(&self, output: &str) -> Result<PredicateGraph, ProviderError>;
}

pub trait Trainer: Send + Sync {
    fn train(&self, model: &ModelHandle, examples: &[TrainingExample]) -> Result<ModelHandle, ProviderError>;
}

/// Proposes a full replacement text for an output. Candidates are never
/// trusted: the caller re-extracts and re-verifies them.
pub trait RewriteProvider: Send + Sync {
    fn rewrite(&self, output: &str, violations: &[Violation], hint: Option<&str>) -> Result<String, ProviderError>;
}

/// Scores how well an output supports a claimed issue, in [0, 1].
pub trait MetaVerifier: Send + Sync {
    fn support(&self, output: &str, issue: &Issue) -> Result<Number, ProviderError>;
}

pub trait LearnedVerifier: Send + Sync {
    fn analyze(&self, output: &str, rubric_id: &str) -> Result<VerifierAnalysis, ProviderError>;
}

impl<F> Model for F
where
    F: Fn(&ModelHandle, &str, u64) -> Result<String, ProviderError> + Send + Sync,
{
    fn generate(&self, model: &ModelHandle, prompt: &str, seed: u64) -> Result<String, ProviderError> {
        self(model, prompt, seed)
    }
}

impl<F> Extractor for F
where
    F: Fn(&str) -> Result<PredicateGraph, ProviderError> + Send + Sync,
{
    fn extract(&self, output: &str) -> Result<PredicateGraph, ProviderError> {
        self(output)
    }
}

impl<F> Trainer for F
where
    F: Fn(&ModelHandle, &[TrainingExample]) -> Result<ModelHandle, ProviderError> + Send + Sync,
{
    fn train(&self, model: &ModelHandle, examples: &[TrainingExample]) -> Result<ModelHandle, ProviderError> {
        self(model, examples)
    }
}

impl<F> RewriteProvider for F
where
    F: Fn(&str, &[Violation], Option<&str>) -> Result<String, ProviderError> + Send + Sync,
{
    fn rewrite(&self, output: &str, violations: &[Violation], hint: Option<&str>) -> Result<String, ProviderError> {
        self(output, violations, hint)
    }
}

impl<F> MetaVerifier for F
where
    F: Fn(&str, &Issue) -> Result<Number, ProviderError> + Send + Sync,
{
    fn support(&self, output: &str, issue: &Issue) -> Result<Number, ProviderError> {
        self(output, issue)
    }
}

impl<F> LearnedVerifier for F
where
    F: Fn(&str, &str) -> Result<VerifierAnalysis, ProviderError> + Send + Sync,
{
    fn analyze(&self, output: &str, rubric_id: &str) -> Result<VerifierAnalysis, ProviderError> {
        self(output, rubric_id)
    }
}

/// Parses and validates a graph document returned by an external extractor.
pub fn graph_from_document(document: &str) -> Result<PredicateGraph, ProviderError> {
    let graph = parse_graph(document).map_err(|e| ProviderError(format!("extractor returned invalid graph: {e}")))?;
    if let Some(e) = validate_graph(&graph).first() {
        return Err(ProviderError(format!("extractor returned invalid graph: {e}")));
    }
    Ok(graph)
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// A long-running child process answering one JSON request per line.
///
/// Requests carry a `kind` (`generate`, `extract`, `train`, `rewrite`,
/// `support`, `analyze`); a response is one JSON object per line, or
/// `{"error": "..."}`. Calls are serialized.
pub struct SubprocessProvider {
    command: String,
    pipe: Mutex<Pipe>,
}

impl SubprocessProvider {
    /// Starts `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self, ProviderError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| ProviderError(format!("cannot start '{command}': {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(SubprocessProvider { command: command.to_string(), pipe: Mutex::new(Pipe { child, stdin, stdout }) })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    /// Sends one request and returns the response object.
    pub fn request(
        &self,
        request: &serde_json::Value,
    ) -> Result<serde_json::Map<String, serde_json::Value>, ProviderError> {
        let mut pipe = self.pipe.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        pipe.stdin
            .write_all(line.as_bytes())
            .and_then(|_| pipe.stdin.flush())
            .map_err(|e| ProviderError(format!("{}: write failed: {e}", self.command)))?;
        let mut response = String::new();
        let n = pipe
            .stdout
            .read_line(&mut response)
            .map_err(|e| ProviderError(format!("{}: read failed: {e}", self.command)))?;
        if n == 0 {
            return Err(ProviderError(format!("{}: provider closed its output", self.command)));
        }
        let parsed: serde_json::Value = serde_json::from_str(&response)
            .map_err(|e| ProviderError(format!("{}: bad response: {e}", self.command)))?;
        let serde_json::Value::Object(obj) = parsed else {
            return Err(ProviderError(format!("{}: response is not an object", self.command)));
        };
        if let Some(err) = obj.get("error") {
            let reason = err.as_str().map(str::to_string).unwrap_or_else(|| err.to_string());
            return Err(ProviderError(reason));
        }
        Ok(obj)
    }

    fn string_field(
        &self,
        obj: &serde_json::Map<String, serde_json::Value>,
        key: &str,
    ) -> Result<String, ProviderError> {
        obj.get(key)
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| ProviderError(format!("{}: response lacks string '{key}'", self.command)))
    }
}

impl Drop for SubprocessProvider {
    fn drop(&mut self) {
        let pipe = self.pipe.get_mut().unwrap_or_else(|poisoned| poisoned.into_inner());
        // Closing stdin asks a well-behaved provider to exit.
        let _ = pipe.stdin.flush();
        let _ = pipe.child.kill();
        let _ = pipe.child.wait();
    }
}

impl Model for SubprocessProvider {
    fn generate(&self, model: &ModelHandle, prompt: &str, seed: u64) -> Result<String, ProviderError> {
        let obj =
            self.request(&serde_json::json!({"kind": "generate", "model": model, "prompt": prompt, "seed": seed}))?;
        self.string_field(&obj, "output")
    }
}

impl Extractor for SubprocessProvider {
    fn extract(&self, output: &str) -> Result<PredicateGraph, ProviderError> {
        let obj = self.request(&serde_json::json!({"kind": "extract", "output": output}))?;
        let graph =
            obj.get("graph").ok_or_else(|| ProviderError(format!("{}: response lacks 'graph'", self.command)))?;
        graph_from_document(&graph.to_string())
    }
}

impl Trainer for SubprocessProvider {
    fn train(&self, model: &ModelHandle, examples: &[TrainingExample]) -> Result<ModelHandle, ProviderError> {
        let obj = self.request(&serde_json::json!({"kind": "train", "model": model, "examples": examples}))?;
        self.string_field(&obj, "model").map(ModelHandle)
    }
}

impl RewriteProvider for SubprocessProvider {
    fn rewrite(&self, output: &str, violations: &[Violation], hint: Option<&str>) -> Result<String, ProviderError> {
        let violations: Vec<serde_json::Value> = violations
            .iter()
            .map(|v| {
                serde_json::json!({
                    "policy_id": v.policy_id, "message": v.message,
                    "expected": v.expected.to_json(), "actual": v.actual.to_json(),
                })
            })
            .collect();
        let obj = self.request(
            &serde_json::json!({"kind": "rewrite", "output": output, "violations": violations, "hint": hint}),
        )?;
        self.string_field(&obj, "output")
    }
}

impl MetaVerifier for SubprocessProvider {
    fn support(&self, output: &str, issue: &Issue) -> Result<Number, ProviderError> {
        let obj = self.request(&serde_json::json!({"kind": "support", "output": output, "issue": issue}))?;
        let raw =
            obj.get("support").ok_or_else(|| ProviderError(format!("{}: response lacks 'support'", self.command)))?;
        match Value::from_json(raw) {
            Ok(Value::Number(n)) => Ok(n),
            _ => Err(ProviderError(format!("{}: 'support' is not a number", self.command))),
        }
    }
}

impl LearnedVerifier for SubprocessProvider {
    fn analyze(&self, output: &str, rubric_id: &str) -> Result<VerifierAnalysis, ProviderError> {
        let obj = self.request(&serde_json::json!({"kind": "analyze", "output": output, "rubric_id": rubric_id}))?;
        let analysis = VerifierAnalysis::from_json(&serde_json::Value::Object(obj))
            .map_err(|e| ProviderError(format!("{}: {e}", self.command)))?;
        Ok(analysis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ECHO: &str = r#"python3 -u -c '
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    k = req["kind"]
    if k == "generate":
        print(json.dumps({"output": req["prompt"].upper() + str(req["seed"])}))
    elif k == "support":
        print(json.dumps({"support": 0.75}))
    elif k == "train":
        print(json.dumps({"model": req["model"] + "+" + str(len(req["examples"]))}))
    else:
        print(json.dumps({"error": "unsupported " + k}))
'"#;

    #[test]
    fn subprocess_round_trips() {
        let p = SubprocessProvider::spawn(ECHO).unwrap();
        let m = ModelHandle::new("base");
        assert_eq!(p.generate(&m, "abc", 7).unwrap(), "ABC7");
        let issue = Issue { location: "line 1".into(), description: "x".into() };
        assert_eq!(p.support("out", &issue).unwrap(), "0.75".parse().unwrap());
        assert_eq!(p.train(&m, &[]).unwrap(), ModelHandle::new("base+0"));
        assert_eq!(p.extract("x").unwrap_err(), ProviderError::new("unsupported extract"));
        // The pipe survives an error response.
        assert_eq!(p.generate(&m, "d", 1).unwrap(), "D1");
    }

    #[test]
    fn dead_subprocess_is_an_error() {
        let p = SubprocessProvider::spawn("true").unwrap();
        assert!(p.generate(&ModelHandle::new("m"), "x", 0).is_err());
    }

    #[test]
    fn closures_are_providers() {
        let model = |_: &ModelHandle, prompt: &str, _: u64| Ok::<_, ProviderError>(prompt.to_string());
        assert_eq!(Model::generate(&model, &ModelHandle::new("m"), "hi", 0).unwrap(), "hi");
    }
}
