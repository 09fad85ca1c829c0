//! Policy packs and adherence profiles.
//!
//! A pack is a directory:
//!
//! ```text
//! my-pack/
//!   manifest.json        {name, version, core_pass_threshold, extended_pass_threshold}
//!   policies/core.json   required policies (array)
//!   policies/extended.json   optional
//!   test_cases/*.json    {id, prompt, graph? , output?}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpl::{lint_policy, parse_policies, Policy};
use crate::graph::{parse_graph, PredicateGraph};
use crate::number::Number;
use crate::provider::Extractor;
use crate::value::canonical_json;
use crate::verifier::{check_unique_ids, evaluate_pack_value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {reason}")]
pub struct PackError {
    pub path: String,
    pub reason: String,
}

impl PackError {
    fn new(path: &Path, reason: impl Into<String>) -> Self {
        PackError { path: path.display().to_string(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no graph for test case '{0}'")]
pub struct MissingCaseError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackManifest {
    pub name: String,
    pub version: String,
    pub core_pass_threshold: Number,
    pub extended_pass_threshold: Number,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCase {
    pub id: String,
    pub prompt: String,
    /// Expected graph, when the case ships one.
    pub graph: Option<PredicateGraph>,
    /// Recorded model output, when the case ships one.
    pub output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyPack {
    pub root: PathBuf,
    pub manifest: PackManifest,
    pub core: Vec<Policy>,
    pub extended: Vec<Policy>,
    pub test_cases: Vec<TestCase>,
}

fn read(path: &Path) -> Result<String, PackError> {
    fs::read_to_string(path).map_err(|e| PackError::new(path, e.to_string()))
}

fn load_policies(path: &Path) -> Result<Vec<Policy>, PackError> {
    let policies = parse_policies(&read(path)?).map_err(|e| PackError::new(path, e.to_string()))?;
    for p in &policies {
        if let Some(w) = lint_policy(p).first() {
            return Err(PackError::new(path, format!("{}: {w}", p.id)));
        }
    }
    Ok(policies)
}

fn load_case(path: &Path) -> Result<TestCase, PackError> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Raw {
        id: String,
        prompt: String,
        graph: Option<serde_json::Value>,
        output: Option<String>,
    }
    let raw: Raw = serde_json::from_str(&read(path)?).map_err(|e| PackError::new(path, e.to_string()))?;
    let graph = match raw.graph {
        None => None,
        Some(doc) => Some(parse_graph(&doc.to_string()).map_err(|e| PackError::new(path, format!("graph: {e}")))?),
    };
    if graph.is_none() && raw.output.is_none() {
        return Err(PackError::new(path, "test case needs a graph or an output"));
    }
    Ok(TestCase { id: raw.id, prompt: raw.prompt, graph, output: raw.output })
}

pub fn load_pack(dir: &Path) -> Result<PolicyPack, PackError> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(PackError::new(&manifest_path, "missing manifest.json"));
    }
    let manifest: PackManifest =
        serde_json::from_str(&read(&manifest_path)?).map_err(|e| PackError::new(&manifest_path, e.to_string()))?;
    for (name, t) in [
        ("core_pass_threshold", &manifest.core_pass_threshold),
        ("extended_pass_threshold", &manifest.extended_pass_threshold),
    ] {
        if t.is_negative() || *t > Number::one() {
            return Err(PackError::new(&manifest_path, format!("{name} must be in [0, 1]")));
        }
    }

    let core_path = dir.join("policies").join("core.json");
    let core = load_policies(&core_path)?;
    if core.is_empty() {
        return Err(PackError::new(&core_path, "at least one core policy required"));
    }
    let extended_path = dir.join("policies").join("extended.json");
    let extended = if extended_path.exists() { load_policies(&extended_path)? } else { Vec::new() };
    check_unique_ids(core.iter().chain(&extended)).map_err(|e| PackError::new(&dir.join("policies"), e.to_string()))?;

    let cases_dir = dir.join("test_cases");
    let mut case_files: Vec<PathBuf> = fs::read_dir(&cases_dir)
        .map_err(|e| PackError::new(&cases_dir, e.to_string()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    case_files.sort();
    let test_cases = case_files.iter().map(|p| load_case(p)).collect::<Result<Vec<_>, _>>()?;
    if test_cases.is_empty() {
        return Err(PackError::new(&cases_dir, "at least one test case required"));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = test_cases.iter().find(|c| !seen.insert(c.id.as_str())) {
        return Err(PackError::new(&cases_dir, format!("duplicate test case id '{}'", dup.id)));
    }
    Ok(PolicyPack { root: dir.to_path_buf(), manifest, core, extended, test_cases })
}

impl PolicyPack {
    pub fn policy_count(&self) -> usize {
        self.core.len() + self.extended.len()
    }

    /// Graphs shipped with the test cases; recorded outputs are extracted
    /// with `extractor` when given.
    pub fn case_graphs(
        &self,
        extractor: Option<&dyn Extractor>,
    ) -> Result<BTreeMap<String, PredicateGraph>, PackError> {
        let mut graphs = BTreeMap::new();
        for case in &self.test_cases {
            let graph = match (&case.graph, &case.output, extractor) {
                (Some(g), _, _) => g.clone(),
                (None, Some(out), Some(x)) => {
                    x.extract(out).map_err(|e| PackError::new(&self.root, format!("case {}: {e}", case.id)))?
                }
                (None, _, _) => continue,
            };
            graphs.insert(case.id.clone(), graph);
        }
        Ok(graphs)
    }
}

/// Reads case outputs from `dir`: `<case id>.json` graph documents, or
/// `<case id>.txt` output text when an extractor is given. Cases with
/// neither are left out.
pub fn read_case_graphs(
    pack: &PolicyPack,
    dir: &Path,
    extractor: Option<&dyn Extractor>,
) -> Result<BTreeMap<String, PredicateGraph>, PackError> {
    let mut graphs = BTreeMap::new();
    for case in &pack.test_cases {
        let json = dir.join(format!("{}.json", case.id));
        let text = dir.join(format!("{}.txt", case.id));
        let graph = if json.is_file() {
            parse_graph(&read(&json)?).map_err(|e| PackError::new(&json, e.to_string()))?
        } else if let (true, Some(x)) = (text.is_file(), extractor) {
            x.extract(&read(&text)?).map_err(|e| PackError::new(&text, e.to_string()))?
        } else {
            continue;
        };
        graphs.insert(case.id.clone(), graph);
    }
    Ok(graphs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: String,
    pub core_pass: bool,
    pub extended_pass: bool,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdherenceProfile {
    pub pack: String,
    pub version: String,
    pub core_adherence: Number,
    pub extended_adherence: Number,
    /// Violation count per policy; policies that never failed are absent.
    pub violation_distribution: BTreeMap<String, usize>,
    /// Sorted by case id.
    pub cases: Vec<CaseResult>,
    pub pass: bool,
}

pub fn run_pack(
    pack: &PolicyPack,
    graphs: &BTreeMap<String, PredicateGraph>,
) -> Result<AdherenceProfile, MissingCaseError> {
    let mut inputs = Vec::with_capacity(pack.test_cases.len());
    for case in &pack.test_cases {
        let graph = graphs.get(&case.id).ok_or_else(|| MissingCaseError(case.id.clone()))?;
        inputs.push((case, graph));
    }
    let mut results: Vec<(CaseResult, Vec<String>)> = inputs
        .par_iter()
        .map(|(case, graph)| {
            let document = graph.to_value();
            let core = evaluate_pack_value(&pack.core, &document, &case.id).expect("ids checked at load");
            let extended = evaluate_pack_value(&pack.extended, &document, &case.id).expect("ids checked at load");
            let failing: Vec<String> =
                core.violations.iter().chain(&extended.violations).map(|v| v.policy_id.clone()).collect();
            let result = CaseResult {
                id: case.id.clone(),
                core_pass: core.is_clean(),
                extended_pass: extended.is_clean(),
                violations: failing.len(),
            };
            (result, failing)
        })
        .collect();
    results.sort_by(|a, b| a.0.id.cmp(&b.0.id));

    let mut violation_distribution = BTreeMap::new();
    for id in results.iter().flat_map(|(_, failing)| failing) {
        *violation_distribution.entry(id.clone()).or_insert(0) += 1;
    }
    let cases: Vec<CaseResult> = results.into_iter().map(|(r, _)| r).collect();
    let n = cases.len() as i64;
    let share = |count: usize| if n == 0 { Number::one() } else { Number::from_ratio(count as i64, n) };
    let core_adherence = share(cases.iter().filter(|c| c.core_pass).count());
    let extended_adherence = share(cases.iter().filter(|c| c.extended_pass).count());
    let pass = core_adherence >= pack.manifest.core_pass_threshold
        && extended_adherence >= pack.manifest.extended_pass_threshold;
    Ok(AdherenceProfile {
        pack: pack.manifest.name.clone(),
        version: pack.manifest.version.clone(),
        core_adherence,
        extended_adherence,
        violation_distribution,
        cases,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileFormat {
    Json,
    Table,
}

pub fn render_profile(profile: &AdherenceProfile, format: ProfileFormat) -> String {
    match format {
        ProfileFormat::Json => canonical_json(profile),
        ProfileFormat::Table => distribution_table(&profile.violation_distribution),
    }
}

/// Fixed-width table, most violations first, ties by policy id.
pub fn distribution_table(distribution: &BTreeMap<String, usize>) -> String {
    let mut rows: Vec<(&String, &usize)> = distribution.iter().collect();
    rows.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let width = rows.iter().map(|(id, _)| id.chars().count()).max().unwrap_or(0).max("POLICY".len());
    let mut out = format!("{:<width$}  {:>10}\n", "POLICY", "VIOLATIONS");
    for (id, count) in rows {
        let _ = writeln!(out, "{id:<width$}  {count:>10}");
    }
    out
}
