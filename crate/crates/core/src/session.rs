//! Document-level entry points shared by the command line and host bindings.
//! Inputs and outputs are JSON text, so every front end emits the same bytes.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::correction::{correct, CorrectionResult, Rewriter};
use crate::cpl::{parse_policies, Policy};
use crate::graph::{parse_graph, PredicateGraph};
use crate::packs::{load_pack, read_case_graphs, run_pack, AdherenceProfile};
use crate::provider::Extractor;
use crate::verifier::{check_unique_ids, evaluate_pack, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct SessionError(pub String);

fn err(e: impl std::fmt::Display) -> SessionError {
    SessionError(e.to_string())
}

/// A loaded policy set. Immutable once built, so it can be shared freely
/// across threads.
#[derive(Debug, Clone, Default)]
pub struct Session {
    policies: Vec<Policy>,
}

impl Session {
    pub fn new(policies: Vec<Policy>) -> Result<Self, SessionError> {
        check_unique_ids(&policies).map_err(err)?;
        Ok(Session { policies })
    }

    /// Each document holds one policy object or an array of them.
    pub fn load_policies<S: AsRef<str>>(documents: &[S]) -> Result<Self, SessionError> {
        let mut policies = Vec::new();
        for doc in documents {
            policies.extend(parse_policies(doc.as_ref()).map_err(err)?);
        }
        Session::new(policies)
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn verdict(&self, graph: &PredicateGraph, output_id: &str) -> Verdict {
        evaluate_pack(&self.policies, graph, output_id).expect("ids checked on construction")
    }

    /// Canonical verdict JSON for a graph document.
    pub fn check(&self, graph_document: &str, output_id: &str) -> Result<String, SessionError> {
        let graph = parse_graph(graph_document).map_err(err)?;
        Ok(self.verdict(&graph, output_id).to_canonical_json())
    }

    pub fn correct_graph(&self, graph: &PredicateGraph, output_id: &str, rewriter: Rewriter<'_>) -> CorrectionResult {
        let verdict = self.verdict(graph, output_id);
        correct(graph, &verdict, &self.policies, rewriter).expect("ids checked on construction")
    }

    /// Canonical correction-result JSON for a graph document.
    pub fn correct(
        &self,
        graph_document: &str,
        output_id: &str,
        rewriter: Rewriter<'_>,
    ) -> Result<String, SessionError> {
        let graph = parse_graph(graph_document).map_err(err)?;
        Ok(self.correct_graph(&graph, output_id, rewriter).to_canonical_json())
    }
}

/// Runs the pack at `pack_dir` against the case outputs in `outputs_dir`,
/// or against the graphs and recorded outputs shipped with the pack.
pub fn run_pack_dir(
    pack_dir: &Path,
    outputs_dir: Option<&Path>,
    extractor: Option<&dyn Extractor>,
) -> Result<AdherenceProfile, SessionError> {
    let pack = load_pack(pack_dir).map_err(err)?;
    let graphs: BTreeMap<String, PredicateGraph> = match outputs_dir {
        Some(dir) => read_case_graphs(&pack, dir, extractor),
        None => pack.case_graphs(extractor),
    }
    .map_err(err)?;
    run_pack(&pack, &graphs).map_err(err)
}
