//! Seeded generators for graphs, expressions and policies.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value as Json};

pub const COLLECTIONS: [&str; 6] = ["operations", "tool_calls", "claims", "entities", "citations", "code_blocks"];
pub const BINDINGS: [(&str, &str); 6] = [
    ("operation", "operations"),
    ("tool_call", "tool_calls"),
    ("claim", "claims"),
    ("entity", "entities"),
    ("citation", "citations"),
    ("code_block", "code_blocks"),
];

const WORDS: [&str; 12] =
    ["calc", "search", "Sales rose", "eval(x)", "python", "text", "doc-1", "c1", "ORD-1", "USD", "", "refund"];
const PATTERNS: [&str; 7] = ["^ca", "a+", r"\d", r"\beval\(", "^[A-Z]+$", "x|y", "(?i)SALES"];

fn fields(collection: &str) -> &'static [&'static str] {
    match collection {
        "operations" => &["op_type", "inputs", "output"],
        "tool_calls" => &["name", "arguments"],
        "claims" => &["text", "modality", "citation_ids"],
        "entities" => &["text", "entity_type"],
        "citations" => &["id", "document_id"],
        _ => &["language_tag", "content"],
    }
}

const ARGUMENT_FIELDS: [&str; 4] = ["value", "op_index", "flag", "note"];

/// A decimal literal with at most three fractional digits.
pub fn decimal(rng: &mut ChaCha8Rng) -> String {
    let int: i64 = rng.random_range(-20..=60);
    match rng.random_range(0..3) {
        0 => int.to_string(),
        1 => format!("{int}.{}", rng.random_range(0..10)),
        _ => format!("{int}.{:03}", rng.random_range(0..1000)),
    }
}

fn num(lit: &str) -> Json {
    Json::Number(serde_json::from_str(lit).expect("generated literal"))
}

/// A valid graph document with at most `max_elements` elements in total.
pub fn graph(rng: &mut ChaCha8Rng, max_elements: usize) -> Json {
    let total = rng.random_range(0..=max_elements);
    let mut counts = [0usize; 6];
    for _ in 0..total {
        counts[rng.random_range(0..6)] += 1;
    }
    let citation_ids: Vec<String> = (0..counts[4]).map(|i| format!("c{}", i + 1)).collect();
    let mut doc = Map::new();
    doc.insert("schema_version".into(), json!("1.0.0"));
    let mut list = |key: &str, items: Vec<Json>| {
        if !items.is_empty() || rng_bool_fixed(key) {
            doc.insert(key.into(), Json::Array(items));
        }
    };
    let ops = (0..counts[0])
        .map(|_| {
            let inputs: Vec<Json> = (0..rng.random_range(1..=3)).map(|_| num(&decimal(rng))).collect();
            json!({"op_type": *["ADD", "MULTIPLY", "SUBTRACT"].choose(rng).unwrap(), "inputs": inputs, "output": num(&decimal(rng))})
        })
        .collect();
    list("operations", ops);
    let calls = (0..counts[1])
        .map(|_| {
            let mut args = Map::new();
            for f in ARGUMENT_FIELDS {
                if rng.random_bool(0.7) {
                    let v = match f {
                        "value" => num(&decimal(rng)),
                        "op_index" => json!(rng.random_range(0..3)),
                        "flag" => json!(rng.random_bool(0.5)),
                        _ => json!(*WORDS.choose(rng).unwrap()),
                    };
                    args.insert(f.into(), v);
                }
            }
            json!({"name": *["calc", "search", "refund"].choose(rng).unwrap(), "arguments": args})
        })
        .collect();
    list("tool_calls", calls);
    let claims = (0..counts[2])
        .map(|_| {
            let cites: Vec<&String> = citation_ids.iter().filter(|_| rng.random_bool(0.4)).collect();
            let text = *WORDS.iter().filter(|w| !w.is_empty()).collect::<Vec<_>>().choose(rng).unwrap();
            json!({"text": text, "modality": *["factual", "hedged", "opinion", "instruction"].choose(rng).unwrap(), "citation_ids": cites})
        })
        .collect();
    list("claims", claims);
    let entities = (0..counts[3])
        .map(|_| json!({"text": *WORDS.choose(rng).unwrap(), "entity_type": *["order_id", "currency", ""].choose(rng).unwrap()}))
        .collect();
    list("entities", entities);
    let citations = citation_ids
        .iter()
        .map(|id| json!({"id": id, "document_id": *["doc-1", "doc-2", "web"].choose(rng).unwrap()}))
        .collect();
    list("citations", citations);
    let blocks = (0..counts[5])
        .map(|_| json!({"language_tag": *["python", "sh", ""].choose(rng).unwrap(), "content": *WORDS.choose(rng).unwrap()}))
        .collect();
    list("code_blocks", blocks);
    if rng.random_bool(0.3) {
        doc.insert("source_text".into(), json!("Sales rose; calc says 7.095"));
    }
    Json::Object(doc)
}

// Empty collections are written out for some keys and omitted for others,
// so both spellings are exercised.
fn rng_bool_fixed(key: &str) -> bool {
    key.len().is_multiple_of(2)
}

/// Expression tree of the generator, independent of the engine's AST.
#[derive(Debug, Clone)]
pub enum GExpr {
    Num(String),
    Str(String),
    Bool(bool),
    Null,
    Path(String, Vec<String>),
    Member(Box<GExpr>, Vec<String>),
    Not(Box<GExpr>),
    Bin(&'static str, Box<GExpr>, Box<GExpr>),
    Call(&'static str, Vec<GExpr>),
}

impl GExpr {
    /// Fully parenthesised source text.
    pub fn source(&self) -> String {
        match self {
            GExpr::Num(n) => n.clone(),
            GExpr::Str(s) => format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'")),
            GExpr::Bool(b) => b.to_string(),
            GExpr::Null => "null".into(),
            GExpr::Path(root, segs) => {
                std::iter::once(root.as_str()).chain(segs.iter().map(String::as_str)).collect::<Vec<_>>().join(".")
            }
            GExpr::Member(target, segs) => format!("({}).{}", target.source(), segs.join(".")),
            GExpr::Not(inner) => format!("not ({})", inner.source()),
            GExpr::Bin(op, l, r) => format!("({} {op} {})", l.source(), r.source()),
            GExpr::Call(f, args) => format!("{f}({})", args.iter().map(GExpr::source).collect::<Vec<_>>().join(", ")),
        }
    }
}

pub struct ExprGen<'r> {
    pub rng: &'r mut ChaCha8Rng,
    /// Binding name and its collection, when generating for a scoped policy.
    pub binding: Option<(&'static str, &'static str)>,
    /// Collection each enclosing `it` ranges over, when known.
    its: Vec<Option<&'static str>>,
}

impl<'r> ExprGen<'r> {
    pub fn new(rng: &'r mut ChaCha8Rng, binding: Option<(&'static str, &'static str)>) -> Self {
        ExprGen { rng, binding, its: Vec::new() }
    }

    fn field_for(&mut self, collection: Option<&str>) -> Vec<String> {
        let mut segs = Vec::new();
        match collection {
            Some(c) if self.rng.random_bool(0.85) => {
                let f = *fields(c).choose(self.rng).unwrap();
                segs.push(f.to_string());
                if f == "arguments" && self.rng.random_bool(0.8) {
                    segs.push(ARGUMENT_FIELDS.choose(self.rng).unwrap().to_string());
                }
            }
            _ => {
                if self.rng.random_bool(0.5) {
                    segs.push(["text", "output", "bogus", "name", "value"].choose(self.rng).unwrap().to_string());
                }
            }
        }
        segs
    }

    fn path(&mut self) -> GExpr {
        let roll = self.rng.random_range(0..10);
        if roll < 3 && !self.its.is_empty() {
            let c = *self.its.last().unwrap();
            return GExpr::Path("it".into(), self.field_for(c));
        }
        if roll < 5 {
            if let Some((name, c)) = self.binding {
                return GExpr::Path(name.into(), self.field_for(Some(c)));
            }
        }
        match self.rng.random_range(0..12) {
            0 => GExpr::Path("schema_version".into(), vec![]),
            1 => GExpr::Path("source_text".into(), vec![]),
            2 => GExpr::Path("missing".into(), vec![]),
            _ => {
                let c = *COLLECTIONS.choose(self.rng).unwrap();
                let segs = if self.rng.random_bool(0.5) { self.field_for(Some(c)) } else { vec![] };
                GExpr::Path(c.into(), segs)
            }
        }
    }

    fn leaf(&mut self) -> GExpr {
        match self.rng.random_range(0..10) {
            0..=2 => GExpr::Num(decimal(self.rng)),
            3 => GExpr::Str(WORDS.choose(self.rng).unwrap().to_string()),
            4 => GExpr::Bool(self.rng.random_bool(0.5)),
            5 => GExpr::Null,
            _ => self.path(),
        }
    }

    fn collection_arg(&mut self, depth: usize) -> (GExpr, Option<&'static str>) {
        if self.rng.random_bool(0.75) || depth <= 1 {
            let c = *COLLECTIONS.choose(self.rng).unwrap();
            return (GExpr::Path(c.into(), vec![]), Some(c));
        }
        (self.any(depth), None)
    }

    fn predicate(&mut self, f: &'static str, depth: usize) -> GExpr {
        let (list, kind) = self.collection_arg(depth - 1);
        self.its.push(kind);
        let body = self.boolean(depth - 1);
        self.its.pop();
        GExpr::Call(f, vec![list, body])
    }

    fn list_valued(&mut self, depth: usize) -> GExpr {
        match self.rng.random_range(0..4) {
            0 if depth > 2 => self.predicate("filter", depth),
            1 => {
                let c = *COLLECTIONS.choose(self.rng).unwrap();
                GExpr::Path(c.into(), vec![])
            }
            _ => {
                let c = ["operations", "tool_calls"].choose(self.rng).unwrap();
                let segs =
                    if *c == "operations" { vec!["output".into()] } else { vec!["arguments".into(), "value".into()] };
                GExpr::Path((*c).into(), segs)
            }
        }
    }

    fn call(&mut self, depth: usize) -> GExpr {
        let f = *[
            "any",
            "all",
            "filter",
            "count",
            "sum",
            "min",
            "max",
            "first",
            "last",
            "contains",
            "starts_with",
            "matches",
        ]
        .choose(self.rng)
        .unwrap();
        match f {
            "any" | "all" | "filter" => self.predicate(f, depth),
            "count" | "sum" | "min" | "max" | "first" | "last" => {
                let arg = if self.rng.random_bool(0.85) { self.list_valued(depth - 1) } else { self.any(depth - 1) };
                GExpr::Call(f, vec![arg])
            }
            _ => {
                let subject = if self.rng.random_bool(0.8) {
                    let (root, c) = match self.its.last() {
                        Some(Some(c)) if self.rng.random_bool(0.5) => ("it".to_string(), *c),
                        _ => {
                            let c = *["claims", "code_blocks", "entities", "citations"].choose(self.rng).unwrap();
                            (c.to_string(), c)
                        }
                    };
                    GExpr::Path(root, self.field_for(Some(c)))
                } else {
                    self.any(depth - 1)
                };
                let needle = if f == "matches" {
                    GExpr::Str(PATTERNS.choose(self.rng).unwrap().to_string())
                } else if self.rng.random_bool(0.9) {
                    GExpr::Str(WORDS.choose(self.rng).unwrap().to_string())
                } else {
                    self.leaf()
                };
                GExpr::Call(f, vec![subject, needle])
            }
        }
    }

    /// Any expression of AST depth at most `depth`.
    pub fn any(&mut self, depth: usize) -> GExpr {
        if depth <= 1 {
            return self.leaf();
        }
        match self.rng.random_range(0..20) {
            0..=3 => self.leaf(),
            4..=6 => {
                let op = *["+", "-", "*", "/", "%"].choose(self.rng).unwrap();
                GExpr::Bin(op, Box::new(self.numeric(depth - 1)), Box::new(self.numeric(depth - 1)))
            }
            7..=9 => self.boolean(depth),
            10 => {
                let target = self.call(depth - 1);
                let seg = ["output", "text", "name", "arguments"].choose(self.rng).unwrap().to_string();
                GExpr::Member(Box::new(target), vec![seg])
            }
            _ => self.call(depth),
        }
    }

    fn numeric(&mut self, depth: usize) -> GExpr {
        if depth <= 1 || self.rng.random_bool(0.4) {
            return if self.rng.random_bool(0.7) { GExpr::Num(decimal(self.rng)) } else { self.path() };
        }
        match self.rng.random_range(0..4) {
            0 => {
                let op = *["+", "-", "*", "/", "%"].choose(self.rng).unwrap();
                GExpr::Bin(op, Box::new(self.numeric(depth - 1)), Box::new(self.numeric(depth - 1)))
            }
            1 => GExpr::Call("count", vec![self.list_valued(depth - 1)]),
            2 => GExpr::Call(
                ["sum", "min", "max", "first", "last"].choose(self.rng).unwrap(),
                vec![self.list_valued(depth - 1)],
            ),
            _ => self.any(depth),
        }
    }

    /// An expression biased towards boolean results.
    pub fn boolean(&mut self, depth: usize) -> GExpr {
        if depth <= 1 {
            return if self.rng.random_bool(0.8) { GExpr::Bool(self.rng.random_bool(0.5)) } else { self.leaf() };
        }
        match self.rng.random_range(0..12) {
            0..=3 => {
                let op = *["==", "!=", "<", ">", "<=", ">="].choose(self.rng).unwrap();
                let l = self.numeric(depth - 1);
                let r = if self.rng.random_bool(0.8) { self.numeric(depth - 1) } else { self.any(depth - 1) };
                GExpr::Bin(op, Box::new(l), Box::new(r))
            }
            4..=5 => {
                let op = *["and", "or"].choose(self.rng).unwrap();
                GExpr::Bin(op, Box::new(self.boolean(depth - 1)), Box::new(self.boolean(depth - 1)))
            }
            6 => GExpr::Not(Box::new(self.boolean(depth - 1))),
            7..=9 => self.call(depth),
            10 => {
                let f = *["any", "all"].choose(self.rng).unwrap();
                self.predicate(f, depth)
            }
            _ => self.any(depth),
        }
    }
}

/// A random policy document with the given id.
pub fn policy(rng: &mut ChaCha8Rng, id: &str) -> Json {
    let scoped = rng.random_bool(0.75);
    let binding = scoped.then(|| *BINDINGS.choose(rng).unwrap());
    let tier = *["T1", "T2", "T3"].choose(rng).unwrap();
    let priority: i64 = rng.random_range(-3..=3);
    let mut gen = ExprGen::new(rng, binding);
    let where_clauses: Vec<String> = (0..gen.rng.random_range(0..=1)).map(|_| gen.boolean(4).source()).collect();
    let asserts: Vec<String> = (0..gen.rng.random_range(1..=2)).map(|_| gen.boolean(5).source()).collect();
    let scope = match binding {
        None => json!({"kind": "output"}),
        Some(("tool_call", _)) if gen.rng.random_bool(0.5) => json!({"kind": "tool_call", "filter": {"name": "calc"}}),
        Some(("claim", _)) if gen.rng.random_bool(0.5) => json!({"kind": "claim", "filter": {"modality": "factual"}}),
        Some((name, _)) => json!({"kind": name}),
    };
    let action = *["CORRECT", "WARN", "REJECT"].choose(gen.rng).unwrap();
    json!({
        "id": id, "tier": tier, "priority": priority, "scope": scope,
        "where": where_clauses, "assert": asserts,
        "on_violation": {"action": action},
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
