//! The generate, extract, verify, correct, train loop.
//!
//! Each epoch runs every dataset prompt through the current model. Outputs
//! that verify clean join the training set as they are; outputs with
//! violations join only if their correction is accepted and the corrected
//! text, extracted again, verifies clean. The trainer then sees the whole
//! accumulated set, and its returned model is used in the next epoch.

pub mod scripted;

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::correction::{correct, Rewriter};
use crate::cpl::{Policy, Tier};
use crate::graph::PredicateGraph;
use crate::meta::{default_theta, meta_filter, VerifierAnalysis};
use crate::number::Number;
use crate::provider::{
    Extractor, LearnedVerifier, MetaVerifier, Model, ModelHandle, ProviderError, RewriteProvider, Trainer,
};
use crate::value::canonical_json;
use crate::verifier::{check_unique_ids, evaluate_pack, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("epochs must be at least 1")]
    NoEpochs,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset line {line}: {reason}")]
    Dataset { line: usize, reason: String },
    #[error("duplicate dataset id '{0}'")]
    DuplicateItem(String),
    #[error(transparent)]
    DuplicatePolicy(#[from] crate::verifier::DuplicateIdError),
    #[error("theta_meta must be in [0, 1]")]
    Theta,
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    pub prompt: String,
}

/// Reads line-delimited `{"id", "prompt"}` records; blank lines are skipped.
pub fn read_dataset(text: &str) -> Result<Vec<DatasetItem>, ConfigError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| ConfigError::Dataset { line: i + 1, reason: e.to_string() }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Direct,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub id: String,
    pub prompt: String,
    pub output: String,
    pub provenance: Provenance,
    /// Digest of the clean verdict that admitted the example.
    pub verdict_digest: String,
    pub epoch: usize,
}

/// One canonical JSON record per line.
pub fn manifest_jsonl(examples: &[TrainingExample]) -> String {
    examples.iter().map(|e| canonical_json(e) + "\n").collect()
}

#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub epochs: usize,
    pub policies: Vec<Policy>,
    pub dataset: Vec<DatasetItem>,
    /// Verdict output ids; `{id}` and `{epoch}` are substituted.
    pub output_id: String,
    pub theta_meta: Number,
    /// Passed to the model on every call.
    pub seed: u64,
    /// Worker threads per epoch; 1 runs sequentially.
    pub jobs: usize,
}

impl LoopConfig {
    pub fn new(epochs: usize, policies: Vec<Policy>, dataset: Vec<DatasetItem>) -> Self {
        LoopConfig {
            epochs,
            policies,
            dataset,
            output_id: "{id}".into(),
            theta_meta: default_theta(),
            seed: 0,
            jobs: 1,
        }
    }

    fn check(&self) -> Result<(), ConfigError> {
        if self.epochs == 0 {
            return Err(ConfigError::NoEpochs);
        }
        if self.dataset.is_empty() {
            return Err(ConfigError::EmptyDataset);
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.dataset.iter().find(|d| !seen.insert(d.id.as_str())) {
            return Err(ConfigError::DuplicateItem(dup.id.clone()));
        }
        check_unique_ids(&self.policies)?;
        if self.theta_meta.is_negative() || self.theta_meta > Number::one() {
            return Err(ConfigError::Theta);
        }
        Ok(())
    }

    fn output_id(&self, item: &DatasetItem, epoch: usize) -> String {
        self.output_id.replace("{id}", &item.id).replace("{epoch}", &epoch.to_string())
    }
}

/// A learned verifier whose meta-filtered issues veto training examples.
#[derive(Clone, Copy)]
pub struct SemanticGate<'a> {
    pub verifier: &'a dyn LearnedVerifier,
    pub meta: &'a dyn MetaVerifier,
    pub rubric_id: &'a str,
}

#[derive(Clone, Copy)]
pub struct ProviderSet<'a> {
    pub model: &'a dyn Model,
    pub extractor: &'a dyn Extractor,
    pub trainer: &'a dyn Trainer,
    pub rewriter: Option<&'a dyn RewriteProvider>,
    pub gate: Option<SemanticGate<'a>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Dropped {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ViolationStats {
    pub outputs: usize,
    pub violated_outputs: usize,
    pub violation_rate: Number,
    pub total_violations: usize,
    pub per_policy: BTreeMap<String, usize>,
    pub per_tier: BTreeMap<Tier, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no verdicts")]
pub struct EmptyInput;

pub fn violation_stats<'a>(verdicts: impl IntoIterator<Item = &'a Verdict>) -> Result<ViolationStats, EmptyInput> {
    let mut outputs = 0;
    let mut violated_outputs = 0;
    let mut per_policy = BTreeMap::new();
    let mut per_tier: BTreeMap<Tier, usize> = [Tier::T1, Tier::T2, Tier::T3].into_iter().map(|t| (t, 0)).collect();
    let mut total_violations = 0;
    for v in verdicts {
        outputs += 1;
        violated_outputs += usize::from(!v.violations.is_empty());
        for violation in &v.violations {
            total_violations += 1;
            *per_policy.entry(violation.policy_id.clone()).or_insert(0) += 1;
            *per_tier.entry(violation.tier).or_insert(0) += 1;
        }
    }
    if outputs == 0 {
        return Err(EmptyInput);
    }
    Ok(ViolationStats {
        outputs,
        violated_outputs,
        violation_rate: Number::from_ratio(violated_outputs as i64, outputs as i64),
        total_violations,
        per_policy,
        per_tier,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub model: ModelHandle,
    /// Over outputs that reached verification.
    pub stats: Option<ViolationStats>,
    pub accepted_direct: usize,
    pub accepted_corrected: usize,
    pub dropped: usize,
    pub drops: Vec<Dropped>,
}

impl EpochReport {
    pub fn violation_rate(&self) -> Number {
        self.stats.as_ref().map_or_else(Number::zero, |s| s.violation_rate.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoopReport {
    pub epochs: Vec<EpochReport>,
    pub training_set_size: usize,
    pub final_model: ModelHandle,
}

impl LoopReport {
    pub fn to_canonical_json(&self) -> String {
        canonical_json(self)
    }
}

/// Extraction results by SHA-256 of the output text.
#[derive(Default)]
struct ExtractionCache {
    entries: Mutex<HashMap<[u8; 32], Result<PredicateGraph, ProviderError>>>,
}

impl ExtractionCache {
    fn extract(&self, extractor: &dyn Extractor, text: &str) -> Result<PredicateGraph, ProviderError> {
        let key: [u8; 32] = Sha256::digest(text.as_bytes()).into();
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&key) {
            return hit.clone();
        }
        let result = extractor.extract(text);
        self.entries.lock().expect("cache lock").insert(key, result.clone());
        result
    }
}

enum Disposition {
    Accepted(TrainingExample),
    Dropped(String),
}

struct ItemResult {
    verdict: Option<Verdict>,
    disposition: Disposition,
}

struct Epoch<'a> {
    config: &'a LoopConfig,
    providers: ProviderSet<'a>,
    cache: &'a ExtractionCache,
    model: &'a ModelHandle,
    epoch: usize,
}

impl Epoch<'_> {
    fn semantic_veto(&self, output: &str) -> Option<String> {
        let gate = self.providers.gate?;
        let issues = gate
            .verifier
            .analyze(output, gate.rubric_id)
            .and_then(|a| VerifierAnalysis::new(a.score, a.issues).map_err(|e| ProviderError(e.to_string())))
            .and_then(|a| {
                meta_filter(output, &a, gate.meta, &self.config.theta_meta).map_err(|e| ProviderError(e.to_string()))
            });
        match issues {
            Ok(kept) if kept.is_empty() => None,
            Ok(kept) => Some(format!("learned verifier: {} validated issue(s)", kept.len())),
            Err(e) => Some(format!("learned verifier: {e}")),
        }
    }

    fn run_item(&self, item: &DatasetItem) -> ItemResult {
        let drop = |verdict, reason: String| ItemResult { verdict, disposition: Disposition::Dropped(reason) };
        let p = self.providers;
        let output = match p.model.generate(self.model, &item.prompt, self.config.seed) {
            Ok(o) => o,
            Err(e) => return drop(None, format!("model: {e}")),
        };
        let graph = match self.cache.extract(p.extractor, &output) {
            Ok(g) => g,
            Err(e) => return drop(None, format!("extractor: {e}")),
        };
        let output_id = self.config.output_id(item, self.epoch);
        let verdict = evaluate_pack(&self.config.policies, &graph, &output_id).expect("policy ids checked up front");
        let example = |output: String, provenance, verdict: &Verdict| TrainingExample {
            id: item.id.clone(),
            prompt: item.prompt.clone(),
            output,
            provenance,
            verdict_digest: verdict.digest(),
            epoch: self.epoch,
        };
        if verdict.is_clean() {
            if let Some(reason) = self.semantic_veto(&output) {
                return drop(Some(verdict), reason);
            }
            let accepted = example(output, Provenance::Direct, &verdict);
            return ItemResult { verdict: Some(verdict), disposition: Disposition::Accepted(accepted) };
        }

        let rewriter = Rewriter { provider: p.rewriter, extractor: Some(p.extractor) };
        let result = correct(&graph, &verdict, &self.config.policies, rewriter).expect("policy ids checked up front");
        if !result.accepted {
            return drop(Some(verdict), result.reasons.join("; "));
        }
        let Some(corrected) = result.corrected_text else {
            return drop(Some(verdict), "corrected output has no text".into());
        };
        let reverify = match self.cache.extract(p.extractor, &corrected) {
            Ok(g) => evaluate_pack(&self.config.policies, &g, &output_id).expect("policy ids checked up front"),
            Err(e) => return drop(Some(verdict), format!("extractor on corrected output: {e}")),
        };
        if !reverify.is_clean() {
            return drop(Some(verdict), "corrected output fails re-verification".into());
        }
        if let Some(reason) = self.semantic_veto(&corrected) {
            return drop(Some(verdict), reason);
        }
        let accepted = example(corrected, Provenance::Corrected, &reverify);
        ItemResult { verdict: Some(verdict), disposition: Disposition::Accepted(accepted) }
    }
}

/// Runs the loop and returns its report and the accumulated training set.
pub fn run_loop(
    config: &LoopConfig,
    providers: ProviderSet<'_>,
    initial_model: ModelHandle,
) -> Result<(LoopReport, Vec<TrainingExample>), ConfigError> {
    config.check()?;
    let pool = if config.jobs > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.jobs)
                .build()
                .map_err(|e| ConfigError::Other(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let cache = ExtractionCache::default();
    let mut model = initial_model;
    let mut training_set: Vec<TrainingExample> = Vec::new();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let ctx = Epoch { config, providers, cache: &cache, model: &model, epoch };
        // Results come back in dataset order whichever way they are computed.
        let results: Vec<ItemResult> = match &pool {
            Some(pool) => pool.install(|| config.dataset.par_iter().map(|item| ctx.run_item(item)).collect()),
            None => config.dataset.iter().map(|item| ctx.run_item(item)).collect(),
        };

        let stats = violation_stats(results.iter().filter_map(|r| r.verdict.as_ref())).ok();
        let mut report = EpochReport {
            epoch,
            model: model.clone(),
            stats,
            accepted_direct: 0,
            accepted_corrected: 0,
            dropped: 0,
            drops: Vec::new(),
        };
        for (item, result) in config.dataset.iter().zip(results) {
            match result.disposition {
                Disposition::Accepted(example) => {
                    match example.provenance {
                        Provenance::Direct => report.accepted_direct += 1,
                        Provenance::Corrected => report.accepted_corrected += 1,
                    }
                    training_set.push(example);
                }
                Disposition::Dropped(reason) => {
                    debug!("epoch {epoch}: dropped {}: {reason}", item.id);
                    report.dropped += 1;
                    report.drops.push(Dropped { id: item.id.clone(), reason });
                }
            }
        }
        epochs.push(report);

        model = match providers.trainer.train(&model, &training_set) {
            Ok(next) => next,
            Err(e) => return Err(ConfigError::Other(format!("trainer failed after epoch {epoch}: {e}"))),
        };
    }

    let report = LoopReport { epochs, training_set_size: training_set.len(), final_model: model };
    Ok((report, training_set))
}
