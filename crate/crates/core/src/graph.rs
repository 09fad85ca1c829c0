//! PredicateGraph: the structured view of one model output that policies
//! evaluate against.
//!
//! Documents are JSON (`schema_version` 1.x). Parsing is strict about types
//! but keeps unknown keys, both at the top level and inside elements, so that
//! documents written for a newer minor version still load and re-serialize
//! without loss.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::number::Number;
use crate::value::{pointer_escape, Map, Value};

pub const SUPPORTED_MAJOR: u64 = 1;

/// Collection keys in document order.
pub const COLLECTIONS: [&str; 6] = ["operations", "tool_calls", "claims", "entities", "citations", "code_blocks"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {reason}")]
pub struct SchemaError {
    pub path: String,
    pub reason: String,
}

impl SchemaError {
    pub fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        SchemaError { path: path.into(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("schema error at {0}")]
    Schema(SchemaError),
}

/// Character offsets into `source_text`, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Factual,
    Opinion,
    Hedged,
    Instruction,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Factual => "factual",
            Modality::Opinion => "opinion",
            Modality::Hedged => "hedged",
            Modality::Instruction => "instruction",
        }
    }

    pub fn parse(s: &str) -> Option<Modality> {
        Some(match s {
            "factual" => Modality::Factual,
            "opinion" => Modality::Opinion,
            "hedged" => Modality::Hedged,
            "instruction" => Modality::Instruction,
            _ => return None,
        })
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operation {
    pub op_type: String,
    pub inputs: Vec<Number>,
    pub output: Number,
    pub span: Option<Span>,
    pub extras: Map,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolCall {
    pub name: String,
    pub arguments: Map,
    pub span: Option<Span>,
    pub extras: Map,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Claim {
    pub text: String,
    pub modality: Modality,
    pub citation_ids: Vec<String>,
    pub span: Option<Span>,
    pub extras: Map,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub text: String,
    pub entity_type: String,
    pub span: Option<Span>,
    pub extras: Map,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Citation {
    pub id: String,
    pub document_id: String,
    pub span: Option<Span>,
    pub extras: Map,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBlock {
    pub language_tag: String,
    pub content: String,
    pub span: Option<Span>,
    pub extras: Map,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateGraph {
    pub schema_version: String,
    pub operations: Vec<Operation>,
    pub tool_calls: Vec<ToolCall>,
    pub claims: Vec<Claim>,
    pub entities: Vec<Entity>,
    pub citations: Vec<Citation>,
    pub code_blocks: Vec<CodeBlock>,
    pub source_text: Option<String>,
    /// Unknown top-level keys, kept verbatim.
    pub extras: Map,
}

impl Default for PredicateGraph {
    fn default() -> Self {
        PredicateGraph {
            schema_version: "1.0.0".to_string(),
            operations: Vec::new(),
            tool_calls: Vec::new(),
            claims: Vec::new(),
            entities: Vec::new(),
            citations: Vec::new(),
            code_blocks: Vec::new(),
            source_text: None,
            extras: Map::new(),
        }
    }
}

/// Parses and validates a PredicateGraph document.
pub fn parse_graph(document: &str) -> Result<PredicateGraph, GraphError> {
    let json: serde_json::Value = serde_json::from_str(document).map_err(|e| GraphError::Syntax(e.to_string()))?;
    let value = Value::from_json(&json).map_err(|e| GraphError::Schema(SchemaError::new("", e.to_string())))?;
    let graph = PredicateGraph::from_value(&value).map_err(GraphError::Schema)?;
    match validate_graph(&graph).into_iter().next() {
        Some(err) => Err(GraphError::Schema(err)),
        None => Ok(graph),
    }
}

/// Canonical JSON text for a graph.
pub fn canonical_serialize(graph: &PredicateGraph) -> String {
    graph.to_value().to_canonical_json()
}

/// Checks every invariant and reports all failures, each addressed by a JSON
/// pointer.
pub fn validate_graph(graph: &PredicateGraph) -> Vec<SchemaError> {
    let mut errors = Vec::new();
    if let Err(e) = check_schema_version(&graph.schema_version) {
        errors.push(e);
    }
    let text_len = graph.source_text.as_ref().map(|t| t.chars().count());
    let check_span = |path: String, span: &Option<Span>, errors: &mut Vec<SchemaError>| {
        if let Some(span) = span {
            if span.start >= span.end {
                errors.push(SchemaError::new(format!("{path}/span"), "start >= end"));
            } else if let Some(len) = text_len {
                if span.end > len {
                    errors.push(SchemaError::new(format!("{path}/span"), "end beyond source_text"));
                }
            }
        }
    };

    for (i, op) in graph.operations.iter().enumerate() {
        let path = format!("/operations/{i}");
        if op.op_type.is_empty() {
            errors.push(SchemaError::new(format!("{path}/op_type"), "empty"));
        } else if !is_upper_identifier(&op.op_type) {
            errors.push(SchemaError::new(format!("{path}/op_type"), "not an uppercase identifier"));
        }
        if op.inputs.is_empty() {
            errors.push(SchemaError::new(format!("{path}/inputs"), "at least one input required"));
        }
        check_span(path, &op.span, &mut errors);
    }
    for (i, call) in graph.tool_calls.iter().enumerate() {
        let path = format!("/tool_calls/{i}");
        if call.name.is_empty() {
            errors.push(SchemaError::new(format!("{path}/name"), "empty"));
        }
        check_span(path, &call.span, &mut errors);
    }
    let mut citation_ids = HashSet::new();
    for (i, citation) in graph.citations.iter().enumerate() {
        let path = format!("/citations/{i}");
        if citation.id.is_empty() {
            errors.push(SchemaError::new(format!("{path}/id"), "empty"));
        } else if !citation_ids.insert(citation.id.as_str()) {
            errors.push(SchemaError::new(format!("{path}/id"), "duplicate id"));
        }
        check_span(path, &citation.span, &mut errors);
    }
    for (i, claim) in graph.claims.iter().enumerate() {
        let path = format!("/claims/{i}");
        if claim.text.is_empty() {
            errors.push(SchemaError::new(format!("{path}/text"), "empty"));
        }
        for (j, id) in claim.citation_ids.iter().enumerate() {
            if !citation_ids.contains(id.as_str()) {
                errors.push(SchemaError::new(format!("{path}/citation_ids/{j}"), "dangling reference"));
            }
        }
        check_span(path, &claim.span, &mut errors);
    }
    for (i, entity) in graph.entities.iter().enumerate() {
        check_span(format!("/entities/{i}"), &entity.span, &mut errors);
    }
    for (i, block) in graph.code_blocks.iter().enumerate() {
        check_span(format!("/code_blocks/{i}"), &block.span, &mut errors);
    }
    errors
}

fn is_upper_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

fn check_schema_version(version: &str) -> Result<(), SchemaError> {
    let path = "/schema_version";
    let parts: Vec<&str> = version.split('.').collect();
    let numeric = |p: &&str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    if parts.len() != 3 || !parts.iter().all(numeric) {
        return Err(SchemaError::new(path, "not a MAJOR.MINOR.PATCH version"));
    }
    match parts[0].parse::<u64>() {
        Ok(SUPPORTED_MAJOR) => Ok(()),
        Ok(major) => Err(SchemaError::new(path, format!("unsupported major version {major}"))),
        Err(_) => Err(SchemaError::new(path, "not a MAJOR.MINOR.PATCH version")),
    }
}

// ---------------------------------------------------------------------------
// Value conversion

struct Fields {
    path: String,
    map: Map,
}

impl Fields {
    fn new(path: String, value: &Value) -> Result<Self, SchemaError> {
        match value {
            Value::Map(map) => Ok(Fields { path, map: map.clone() }),
            other => Err(SchemaError::new(path, format!("expected object, found {}", other.type_name()))),
        }
    }

    fn at(&self, key: &str) -> String {
        format!("{}/{}", self.path, pointer_escape(key))
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.map.remove(key)
    }

    fn string(&mut self, key: &str) -> Result<String, SchemaError> {
        match self.take(key) {
            Some(Value::String(s)) => Ok(s),
            Some(other) => Err(SchemaError::new(self.at(key), format!("expected string, found {}", other.type_name()))),
            None => Err(SchemaError::new(self.at(key), "missing")),
        }
    }

    fn number(&mut self, key: &str) -> Result<Number, SchemaError> {
        match self.take(key) {
            Some(Value::Number(n)) => Ok(n),
            Some(other) => Err(SchemaError::new(self.at(key), format!("expected number, found {}", other.type_name()))),
            None => Err(SchemaError::new(self.at(key), "missing")),
        }
    }

    fn list(&mut self, key: &str, required: bool) -> Result<Vec<Value>, SchemaError> {
        match self.take(key) {
            Some(Value::List(items)) => Ok(items),
            Some(other) => Err(SchemaError::new(self.at(key), format!("expected array, found {}", other.type_name()))),
            None if required => Err(SchemaError::new(self.at(key), "missing")),
            None => Ok(Vec::new()),
        }
    }

    fn span(&mut self) -> Result<Option<Span>, SchemaError> {
        let path = self.at("span");
        match self.take("span") {
            None | Some(Value::Null) => Ok(None),
            Some(value) => {
                let mut fields = Fields::new(path, &value)?;
                let start = fields.offset("start")?;
                let end = fields.offset("end")?;
                Ok(Some(Span { start, end }))
            }
        }
    }

    fn offset(&mut self, key: &str) -> Result<usize, SchemaError> {
        let n = self.number(key)?;
        if n.is_negative() || !n.is_integer() {
            return Err(SchemaError::new(self.at(key), "expected a non-negative integer offset"));
        }
        n.to_i64()
            .and_then(|v| usize::try_from(v).ok())
            .ok_or_else(|| SchemaError::new(self.at(key), "offset out of range"))
    }

    fn rest(self) -> Map {
        self.map
    }
}

fn elements<T>(
    items: Vec<Value>,
    path: &str,
    parse: impl Fn(Fields) -> Result<T, SchemaError>,
) -> Result<Vec<T>, SchemaError> {
    items.iter().enumerate().map(|(i, item)| parse(Fields::new(format!("{path}/{i}"), item)?)).collect()
}

fn put_span(map: &mut Map, span: &Option<Span>) {
    if let Some(span) = span {
        let mut s = Map::new();
        s.insert("start".into(), Value::Number(span.start.into()));
        s.insert("end".into(), Value::Number(span.end.into()));
        map.insert("span".into(), Value::Map(s));
    }
}

fn with_extras(extras: &Map, known: impl FnOnce(&mut Map)) -> Value {
    let mut map = extras.clone();
    known(&mut map);
    Value::Map(map)
}

impl Operation {
    pub fn to_value(&self) -> Value {
        with_extras(&self.extras, |m| {
            m.insert("op_type".into(), Value::String(self.op_type.clone()));
            m.insert("inputs".into(), Value::List(self.inputs.iter().cloned().map(Value::Number).collect()));
            m.insert("output".into(), Value::Number(self.output.clone()));
            put_span(m, &self.span);
        })
    }

    fn from_fields(mut f: Fields) -> Result<Self, SchemaError> {
        let op_type = f.string("op_type")?;
        let inputs_path = f.at("inputs");
        let inputs = f
            .list("inputs", true)?
            .into_iter()
            .enumerate()
            .map(|(i, v)| match v {
                Value::Number(n) => Ok(n),
                other => Err(SchemaError::new(
                    format!("{inputs_path}/{i}"),
                    format!("expected number, found {}", other.type_name()),
                )),
            })
            .collect::<Result<_, _>>()?;
        let output = f.number("output")?;
        let span = f.span()?;
        Ok(Operation { op_type, inputs, output, span, extras: f.rest() })
    }
}

impl ToolCall {
    pub fn to_value(&self) -> Value {
        with_extras(&self.extras, |m| {
            m.insert("name".into(), Value::String(self.name.clone()));
            m.insert("arguments".into(), Value::Map(self.arguments.clone()));
            put_span(m, &self.span);
        })
    }

    fn from_fields(mut f: Fields) -> Result<Self, SchemaError> {
        let name = f.string("name")?;
        let arguments = match f.take("arguments") {
            None => Map::new(),
            Some(Value::Map(m)) => m,
            Some(other) => {
                return Err(SchemaError::new(
                    f.at("arguments"),
                    format!("expected object, found {}", other.type_name()),
                ))
            }
        };
        let span = f.span()?;
        Ok(ToolCall { name, arguments, span, extras: f.rest() })
    }
}

impl Claim {
    pub fn to_value(&self) -> Value {
        with_extras(&self.extras, |m| {
            m.insert("text".into(), Value::String(self.text.clone()));
            m.insert("modality".into(), Value::String(self.modality.as_str().into()));
            m.insert(
                "citation_ids".into(),
                Value::List(self.citation_ids.iter().map(|s| Value::String(s.clone())).collect()),
            );
            put_span(m, &self.span);
        })
    }

    fn from_fields(mut f: Fields) -> Result<Self, SchemaError> {
        let text = f.string("text")?;
        let modality_path = f.at("modality");
        let modality_text = f.string("modality")?;
        let modality = Modality::parse(&modality_text)
            .ok_or_else(|| SchemaError::new(modality_path, format!("unknown modality '{modality_text}'")))?;
        let ids_path = f.at("citation_ids");
        let citation_ids = f
            .list("citation_ids", false)?
            .into_iter()
            .enumerate()
            .map(|(i, v)| match v {
                Value::String(s) => Ok(s),
                other => Err(SchemaError::new(
                    format!("{ids_path}/{i}"),
                    format!("expected string, found {}", other.type_name()),
                )),
            })
            .collect::<Result<_, _>>()?;
        let span = f.span()?;
        Ok(Claim { text, modality, citation_ids, span, extras: f.rest() })
    }
}

impl Entity {
    pub fn to_value(&self) -> Value {
        with_extras(&self.extras, |m| {
            m.insert("text".into(), Value::String(self.text.clone()));
            m.insert("entity_type".into(), Value::String(self.entity_type.clone()));
            put_span(m, &self.span);
        })
    }

    fn from_fields(mut f: Fields) -> Result<Self, SchemaError> {
        let text = f.string("text")?;
        let entity_type = f.string("entity_type")?;
        let span = f.span()?;
        Ok(Entity { text, entity_type, span, extras: f.rest() })
    }
}

impl Citation {
    pub fn to_value(&self) -> Value {
        with_extras(&self.extras, |m| {
            m.insert("id".into(), Value::String(self.id.clone()));
            m.insert("document_id".into(), Value::String(self.document_id.clone()));
            put_span(m, &self.span);
        })
    }

    fn from_fields(mut f: Fields) -> Result<Self, SchemaError> {
        let id = f.string("id")?;
        let document_id = f.string("document_id")?;
        let span = f.span()?;
        Ok(Citation { id, document_id, span, extras: f.rest() })
    }
}

impl CodeBlock {
    pub fn to_value(&self) -> Value {
        with_extras(&self.extras, |m| {
            m.insert("language_tag".into(), Value::String(self.language_tag.clone()));
            m.insert("content".into(), Value::String(self.content.clone()));
            put_span(m, &self.span);
        })
    }

    fn from_fields(mut f: Fields) -> Result<Self, SchemaError> {
        let language_tag = f.string("language_tag")?;
        let content = f.string("content")?;
        let span = f.span()?;
        Ok(CodeBlock { language_tag, content, span, extras: f.rest() })
    }
}

impl PredicateGraph {
    /// The document tree; also the environment policy expressions read.
    pub fn to_value(&self) -> Value {
        with_extras(&self.extras, |m| {
            m.insert("schema_version".into(), Value::String(self.schema_version.clone()));
            m.insert("operations".into(), Value::List(self.operations.iter().map(Operation::to_value).collect()));
            m.insert("tool_calls".into(), Value::List(self.tool_calls.iter().map(ToolCall::to_value).collect()));
            m.insert("claims".into(), Value::List(self.claims.iter().map(Claim::to_value).collect()));
            m.insert("entities".into(), Value::List(self.entities.iter().map(Entity::to_value).collect()));
            m.insert("citations".into(), Value::List(self.citations.iter().map(Citation::to_value).collect()));
            m.insert("code_blocks".into(), Value::List(self.code_blocks.iter().map(CodeBlock::to_value).collect()));
            if let Some(text) = &self.source_text {
                m.insert("source_text".into(), Value::String(text.clone()));
            }
        })
    }

    /// Structural conversion only; run [`validate_graph`] for the
    /// cross-element invariants.
    pub fn from_value(value: &Value) -> Result<Self, SchemaError> {
        let mut f = Fields::new(String::new(), value)?;
        let schema_version = match f.take("schema_version") {
            Some(Value::String(s)) => s,
            Some(other) => {
                return Err(SchemaError::new(
                    "/schema_version",
                    format!("expected string, found {}", other.type_name()),
                ))
            }
            None => return Err(SchemaError::new("/schema_version", "missing")),
        };
        check_schema_version(&schema_version)?;
        let operations = elements(f.list("operations", false)?, "/operations", Operation::from_fields)?;
        let tool_calls = elements(f.list("tool_calls", false)?, "/tool_calls", ToolCall::from_fields)?;
        let claims = elements(f.list("claims", false)?, "/claims", Claim::from_fields)?;
        let entities = elements(f.list("entities", false)?, "/entities", Entity::from_fields)?;
        let citations = elements(f.list("citations", false)?, "/citations", Citation::from_fields)?;
        let code_blocks = elements(f.list("code_blocks", false)?, "/code_blocks", CodeBlock::from_fields)?;
        let source_text = match f.take("source_text") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s),
            Some(other) => {
                return Err(SchemaError::new("/source_text", format!("expected string, found {}", other.type_name())))
            }
        };
        Ok(PredicateGraph {
            schema_version,
            operations,
            tool_calls,
            claims,
            entities,
            citations,
            code_blocks,
            source_text,
            extras: f.rest(),
        })
    }

    /// Number of elements in a collection, by collection key.
    pub fn collection_len(&self, collection: &str) -> Option<usize> {
        Some(match collection {
            "operations" => self.operations.len(),
            "tool_calls" => self.tool_calls.len(),
            "claims" => self.claims.len(),
            "entities" => self.entities.len(),
            "citations" => self.citations.len(),
            "code_blocks" => self.code_blocks.len(),
            _ => return None,
        })
    }

    /// Span of one element, by collection key and index.
    pub fn element_span(&self, collection: &str, index: usize) -> Option<Span> {
        match collection {
            "operations" => self.operations.get(index)?.span,
            "tool_calls" => self.tool_calls.get(index)?.span,
            "claims" => self.claims.get(index)?.span,
            "entities" => self.entities.get(index)?.span,
            "citations" => self.citations.get(index)?.span,
            "code_blocks" => self.code_blocks.get(index)?.span,
            _ => None,
        }
    }

    /// Mutable access to every element span, in document order.
    pub fn spans_mut(&mut self) -> impl Iterator<Item = &mut Span> {
        self.operations
            .iter_mut()
            .filter_map(|e| e.span.as_mut())
            .chain(self.tool_calls.iter_mut().filter_map(|e| e.span.as_mut()))
            .chain(self.claims.iter_mut().filter_map(|e| e.span.as_mut()))
            .chain(self.entities.iter_mut().filter_map(|e| e.span.as_mut()))
            .chain(self.citations.iter_mut().filter_map(|e| e.span.as_mut()))
            .chain(self.code_blocks.iter_mut().filter_map(|e| e.span.as_mut()))
    }
}
