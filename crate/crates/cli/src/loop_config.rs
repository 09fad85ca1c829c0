//! Training-loop configuration files.
//!
//! ```json
//! {
//!   "epochs": 2,
//!   "seed": 7,
//!   "policies": ["policies.json"],
//!   "dataset": "dataset.jsonl",
//!   "model": {"command": "python3 model.py"},
//!   "initial_model": "base",
//!   "extractor": {"command": "python3 extract.py"},
//!   "trainer": "identity"
//! }
//! ```
//!
//! Relative paths resolve against the configuration file's directory.
//! `dataset`, `model`, `extractor`, `trainer` and `rewriter` also accept the
//! built-in scripted components, which need no external process.

use std::fs;
use std::path::{Path, PathBuf};

use cape_core::cpl::{parse_policies, Policy};
use cape_core::number::Number;
use cape_core::provider::{
    Extractor, LearnedVerifier, MetaVerifier, Model, RewriteProvider, SubprocessProvider, Trainer,
};
use cape_core::training_loop::scripted::{
    arithmetic_dataset, CheckpointTrainer, IdentityTrainer, LineExtractor, ScriptedModel, ScriptedModelConfig,
    StripEvalRewriter,
};
use cape_core::training_loop::{read_dataset, DatasetItem};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopFile {
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    pub jobs: Option<usize>,
    pub theta_meta: Option<Number>,
    pub output_id: Option<String>,
    #[serde(default)]
    pub policies: Vec<PathBuf>,
    pub dataset: DatasetSource,
    pub model: Option<Component>,
    pub initial_model: String,
    pub extractor: Option<Component>,
    pub trainer: Option<Component>,
    pub rewriter: Option<Component>,
    pub gate: Option<GateConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum DatasetSource {
    File(PathBuf),
    Scripted { scripted: ScriptedDataset },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedDataset {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

/// A built-in component by name, a scripted model, or an external command.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Component {
    Builtin(String),
    Command { command: String },
    Scripted { scripted: ScriptedModelFile },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedModelFile {
    pub error_rate: Option<Number>,
    pub eval_rate: Option<Number>,
    pub improvement: Option<Number>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    pub verifier: String,
    pub meta: String,
    pub rubric_id: String,
}

pub fn read_loop_file(path: &Path) -> Result<(LoopFile, PathBuf), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let file: LoopFile = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((file, base))
}

pub fn load_policies(base: &Path, paths: &[PathBuf]) -> Result<Vec<Policy>, String> {
    let mut policies = Vec::new();
    for p in paths {
        let p = base.join(p);
        let text = fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
        policies.extend(parse_policies(&text).map_err(|e| format!("{}: {e}", p.display()))?);
    }
    Ok(policies)
}

pub fn load_dataset(base: &Path, source: &DatasetSource) -> Result<Vec<DatasetItem>, String> {
    match source {
        DatasetSource::Scripted { scripted } => Ok(arithmetic_dataset(scripted.n, scripted.seed)),
        DatasetSource::File(p) => {
            let p = base.join(p);
            let text = fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
            read_dataset(&text).map_err(|e| format!("{}: {e}", p.display()))
        }
    }
}

fn spawn(command: &str) -> Result<Box<SubprocessProvider>, String> {
    SubprocessProvider::spawn(command).map(Box::new).map_err(|e| e.to_string())
}

fn unknown(role: &str, c: &Component) -> String {
    format!("unsupported {role}: {c:?}")
}

pub fn build_model(c: &Component, dataset: &[DatasetItem]) -> Result<Box<dyn Model>, String> {
    match c {
        Component::Command { command } => Ok(spawn(command)?),
        Component::Scripted { scripted } => {
            let d = ScriptedModelConfig::default();
            let config = ScriptedModelConfig {
                error_rate: scripted.error_rate.clone().unwrap_or(d.error_rate),
                eval_rate: scripted.eval_rate.clone().unwrap_or(d.eval_rate),
                improvement: scripted.improvement.clone().unwrap_or(d.improvement),
                seed: scripted.seed,
            };
            Ok(Box::new(ScriptedModel::new(dataset, config)))
        }
        Component::Builtin(_) => Err(unknown("model", c)),
    }
}

pub fn build_extractor(c: &Component) -> Result<Box<dyn Extractor>, String> {
    match c {
        Component::Command { command } => Ok(spawn(command)?),
        Component::Builtin(name) if name == "line" => Ok(Box::new(LineExtractor)),
        _ => Err(unknown("extractor", c)),
    }
}

pub fn build_trainer(c: &Component) -> Result<Box<dyn Trainer>, String> {
    match c {
        Component::Command { command } => Ok(spawn(command)?),
        Component::Builtin(name) if name == "identity" => Ok(Box::new(IdentityTrainer)),
        Component::Builtin(name) if name == "checkpoint" => Ok(Box::new(CheckpointTrainer)),
        _ => Err(unknown("trainer", c)),
    }
}

pub fn build_rewriter(c: &Component) -> Result<Box<dyn RewriteProvider>, String> {
    match c {
        Component::Command { command } => Ok(spawn(command)?),
        Component::Builtin(name) if name == "strip_eval" => Ok(Box::new(StripEvalRewriter)),
        _ => Err(unknown("rewriter", c)),
    }
}

pub type GateParts = (Box<dyn LearnedVerifier>, Box<dyn MetaVerifier>);

pub fn build_gate(g: &GateConfig) -> Result<GateParts, String> {
    Ok((spawn(&g.verifier)?, spawn(&g.meta)?))
}
