//! Deterministic stand-ins for the loop's external components.
//!
//! Outputs use a small line format that [`LineExtractor`] understands:
//!
//! ```text
//! OP MULTIPLY 47.30 0.15 = 7.095
//! CALL calc value=7.095
//! CLAIM factual: Fifteen percent of 47.30 is 7.095 [c1]
//! CITE c1 receipt-2291
//! ENTITY currency: USD
//! CODE python: total = round(x, 2)
//! ```
//!
//! Any other line is prose and is ignored.

use std::collections::HashMap;

use num_traits::ToPrimitive;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetItem, TrainingExample};
use crate::graph::{
    validate_graph, Citation, Claim, CodeBlock, Entity, Modality, Operation, PredicateGraph, Span, ToolCall,
};
use crate::number::Number;
use crate::provider::{Extractor, Model, ModelHandle, ProviderError, RewriteProvider, Trainer};
use crate::value::{Map, Value};
use crate::verifier::Violation;

const OPS: [&str; 3] = ["ADD", "SUBTRACT", "MULTIPLY"];
const RATES: [&str; 5] = ["0.15", "0.2", "0.075", "1.5", "0.35"];

fn cents(rng: &mut ChaCha8Rng) -> String {
    let c: u32 = rng.random_range(100..10_000);
    format!("{}.{:02}", c / 100, c % 100)
}

/// `n` arithmetic prompts such as `item-0003: MULTIPLY 47.30 0.15`.
pub fn arithmetic_dataset(n: usize, seed: u64) -> Vec<DatasetItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=n)
        .map(|i| {
            let id = format!("item-{i:04}");
            let op = OPS[rng.random_range(0..OPS.len())];
            let a = cents(&mut rng);
            let b =
                if op == "MULTIPLY" { RATES[rng.random_range(0..RATES.len())].to_string() } else { cents(&mut rng) };
            DatasetItem { prompt: format!("{id}: {op} {a} {b}"), id }
        })
        .collect()
}

/// Exact result of an `OP a b` prompt body.
pub fn compute(op: &str, a: &Number, b: &Number) -> Option<Number> {
    match op {
        "ADD" => Some(a + b),
        "SUBTRACT" => Some(a - b),
        "MULTIPLY" => Some(a * b),
        _ => None,
    }
}

/// Nearest multiple of 0.1, halves rounding up; nudged by 0.1 when that is
/// the exact value, so the result is always wrong.
pub fn wrong_value(exact: &Number) -> Number {
    let tenth = Number::from_ratio(1, 10);
    let scaled = (exact * &Number::from(10i64)) + Number::from_ratio(1, 2);
    let rounded = &Number::from_rational(scaled.as_rational().floor()) * &tenth;
    if rounded == *exact {
        rounded + tenth
    } else {
        rounded
    }
}

/// `round(rate · n)` with halves rounding up.
fn injected_count(rate: &Number, n: usize) -> usize {
    let x = (rate * &Number::from(n)) + Number::from_ratio(1, 2);
    x.as_rational().floor().to_integer().to_usize().unwrap_or(0).min(n)
}

/// Training rounds encoded in a handle as `name@rounds`.
pub fn checkpoint_round(handle: &ModelHandle) -> u32 {
    handle.0.rsplit_once('@').and_then(|(_, r)| r.parse().ok()).unwrap_or(0)
}

#[derive(Debug, Clone)]
pub struct ScriptedModelConfig {
    /// Fraction of prompts answered with a wrong calculator value.
    pub error_rate: Number,
    /// Fraction of prompts whose answer carries an `eval(` code block.
    pub eval_rate: Number,
    /// Both rates are multiplied by this once per training round.
    pub improvement: Number,
    pub seed: u64,
}

impl Default for ScriptedModelConfig {
    fn default() -> Self {
        ScriptedModelConfig {
            error_rate: Number::zero(),
            eval_rate: Number::zero(),
            improvement: Number::one(),
            seed: 0,
        }
    }
}

/// Answers dataset prompts exactly, except for a seeded subset with injected
/// faults. The faulty subset at `r` training rounds has exactly
/// `round(rate · improvement^r · |D|)` members and shrinks as `r` grows.
pub struct ScriptedModel {
    config: ScriptedModelConfig,
    n: usize,
    /// Per prompt: its rank in the calc-fault and eval-fault orders.
    ranks: HashMap<String, (usize, usize)>,
}

impl ScriptedModel {
    pub fn new(dataset: &[DatasetItem], config: ScriptedModelConfig) -> Self {
        let n = dataset.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut calc_order: Vec<usize> = (0..n).collect();
        calc_order.shuffle(&mut rng);
        let mut eval_order: Vec<usize> = (0..n).collect();
        eval_order.shuffle(&mut rng);
        let mut ranks = vec![(0, 0); n];
        for (rank, &i) in calc_order.iter().enumerate() {
            ranks[i].0 = rank;
        }
        for (rank, &i) in eval_order.iter().enumerate() {
            ranks[i].1 = rank;
        }
        let ranks = dataset.iter().zip(ranks).map(|(d, r)| (d.prompt.clone(), r)).collect();
        ScriptedModel { config, n, ranks }
    }

    fn rate_at(&self, rate: &Number, rounds: u32) -> Number {
        (0..rounds).fold(rate.clone(), |r, _| &r * &self.config.improvement)
    }

    /// How many prompts get each fault after `rounds` training rounds.
    pub fn fault_counts(&self, rounds: u32) -> (usize, usize) {
        (
            injected_count(&self.rate_at(&self.config.error_rate, rounds), self.n),
            injected_count(&self.rate_at(&self.config.eval_rate, rounds), self.n),
        )
    }
}

impl Model for ScriptedModel {
    fn generate(&self, model: &ModelHandle, prompt: &str, _seed: u64) -> Result<String, ProviderError> {
        let &(calc_rank, eval_rank) =
            self.ranks.get(prompt).ok_or_else(|| ProviderError(format!("unknown prompt '{prompt}'")))?;
        let (calc_faults, eval_faults) = self.fault_counts(checkpoint_round(model));
        let (id, body) = prompt.split_once(": ").ok_or_else(|| ProviderError("malformed prompt".into()))?;
        let parts: Vec<&str> = body.split_whitespace().collect();
        let [op, a, b] = parts[..] else {
            return Err(ProviderError("malformed prompt".into()));
        };
        let parse = |s: &str| Number::parse_decimal(s).map_err(|e| ProviderError(e.to_string()));
        let exact = compute(op, &parse(a)?, &parse(b)?).ok_or_else(|| ProviderError(format!("unknown op {op}")))?;
        let reported = if calc_rank < calc_faults { wrong_value(&exact) } else { exact.clone() };
        let mut out = format!("Working through {id}.\nOP {op} {a} {b} = {exact}\nCALL calc value={reported}\n");
        if eval_rank < eval_faults {
            out.push_str("CODE python: result = eval(expression)\n");
        }
        Ok(out)
    }
}

fn call_value(raw: &str) -> Value {
    match raw {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        "null" => Value::Null,
        _ => Number::parse_decimal(raw).map(Value::Number).unwrap_or_else(|_| Value::from(raw)),
    }
}

fn parse_line(graph: &mut PredicateGraph, line: &str, span: Span) -> Result<(), String> {
    let Some((tag, rest)) = line.split_once(' ') else {
        return Ok(());
    };
    match tag {
        "OP" => {
            let (lhs, output) = rest.split_once(" = ").ok_or("OP line lacks ' = '")?;
            let mut tokens = lhs.split_whitespace();
            let op_type = tokens.next().ok_or("OP line lacks a type")?.to_string();
            let num = |s: &str| Number::parse_decimal(s).map_err(|e| format!("bad number '{s}': {e}"));
            let inputs = tokens.map(num).collect::<Result<Vec<_>, _>>()?;
            let output = num(output.trim())?;
            graph.operations.push(Operation { op_type, inputs, output, span: Some(span), extras: Map::new() });
        }
        "CALL" => {
            let mut tokens = rest.split_whitespace();
            let name = tokens.next().ok_or("CALL line lacks a name")?.to_string();
            let mut arguments = Map::new();
            for t in tokens {
                let (k, v) = t.split_once('=').ok_or_else(|| format!("bad argument '{t}'"))?;
                arguments.insert(k.to_string(), call_value(v));
            }
            graph.tool_calls.push(ToolCall { name, arguments, span: Some(span), extras: Map::new() });
        }
        "CLAIM" => {
            let (modality, text) = rest.split_once(": ").ok_or("CLAIM line lacks ': '")?;
            let modality = Modality::parse(modality).ok_or_else(|| format!("unknown modality '{modality}'"))?;
            let (text, citation_ids) = match text.rsplit_once(" [") {
                Some((t, ids)) if ids.ends_with(']') => {
                    (t, ids[..ids.len() - 1].split(',').map(|s| s.trim().to_string()).collect())
                }
                _ => (text, Vec::new()),
            };
            graph.claims.push(Claim {
                text: text.to_string(),
                modality,
                citation_ids,
                span: Some(span),
                extras: Map::new(),
            });
        }
        "CITE" => {
            let (id, document_id) = rest.split_once(' ').ok_or("CITE line lacks a document")?;
            graph.citations.push(Citation {
                id: id.to_string(),
                document_id: document_id.to_string(),
                span: Some(span),
                extras: Map::new(),
            });
        }
        "ENTITY" => {
            let (entity_type, text) = rest.split_once(": ").ok_or("ENTITY line lacks ': '")?;
            graph.entities.push(Entity {
                text: text.to_string(),
                entity_type: entity_type.to_string(),
                span: Some(span),
                extras: Map::new(),
            });
        }
        "CODE" => {
            let (language_tag, content) = rest.split_once(": ").ok_or("CODE line lacks ': '")?;
            graph.code_blocks.push(CodeBlock {
                language_tag: language_tag.to_string(),
                content: content.to_string(),
                span: Some(span),
                extras: Map::new(),
            });
        }
        _ => {}
    }
    Ok(())
}

/// Extracts the line format; each element's span is its whole line.
pub struct LineExtractor;

impl Extractor for LineExtractor {
    fn extract(&self, output: &str) -> Result<PredicateGraph, ProviderError> {
        let mut graph = PredicateGraph { source_text: Some(output.to_string()), ..Default::default() };
        let mut offset = 0;
        for (n, line) in output.split('\n').enumerate() {
            let len = line.chars().count();
            if len > 0 {
                parse_line(&mut graph, line, Span::new(offset, offset + len))
                    .map_err(|e| ProviderError(format!("line {}: {e}", n + 1)))?;
            }
            offset += len + 1;
        }
        if let Some(e) = validate_graph(&graph).first() {
            return Err(ProviderError(e.to_string()));
        }
        Ok(graph)
    }
}

/// Returns the model it was given.
pub struct IdentityTrainer;

impl Trainer for IdentityTrainer {
    fn train(&self, model: &ModelHandle, _: &[TrainingExample]) -> Result<ModelHandle, ProviderError> {
        Ok(model.clone())
    }
}

/// Bumps the round counter in `name@rounds`.
pub struct CheckpointTrainer;

impl Trainer for CheckpointTrainer {
    fn train(&self, model: &ModelHandle, _: &[TrainingExample]) -> Result<ModelHandle, ProviderError> {
        let stem = model.0.rsplit_once('@').map_or(model.0.as_str(), |(s, _)| s);
        Ok(ModelHandle(format!("{stem}@{}", checkpoint_round(model) + 1)))
    }
}

/// Replaces `eval(` calls with `literal_value(`.
pub struct StripEvalRewriter;

impl RewriteProvider for StripEvalRewriter {
    fn rewrite(&self, output: &str, _: &[Violation], _: Option<&str>) -> Result<String, ProviderError> {
        Ok(output.replace("eval(", "literal_value("))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(s: &str) -> Number {
        Number::parse_decimal(s).unwrap()
    }

    #[test]
    fn wrong_values() {
        assert_eq!(wrong_value(&n("7.095")), n("7.1"));
        assert_eq!(wrong_value(&n("7.05")), n("7.1"));
        assert_eq!(wrong_value(&n("7.3")), n("7.4"));
        assert_eq!(wrong_value(&n("-2.26")), n("-2.3"));
    }

    #[test]
    fn injection_counts() {
        assert_eq!(injected_count(&n("0.3"), 500), 150);
        assert_eq!(injected_count(&n("0.3"), 5), 2);
        assert_eq!(injected_count(&n("0.0625"), 40), 3);
        assert_eq!(injected_count(&n("1"), 7), 7);
    }

    #[test]
    fn handles() {
        assert_eq!(checkpoint_round(&ModelHandle::new("scripted")), 0);
        let next = CheckpointTrainer.train(&ModelHandle::new("scripted@2"), &[]).unwrap();
        assert_eq!(next, ModelHandle::new("scripted@3"));
    }

    #[test]
    fn extracts_line_format() {
        let text = "Here goes.\nOP MULTIPLY 47.30 0.15 = 7.095\nCALL calc value=7.1 unit=USD\n\
                    CLAIM factual: Fifteen percent is 7.095 [c1]\nCITE c1 receipt-2291\nCODE python: x = 1";
        let g = LineExtractor.extract(text).unwrap();
        assert_eq!(g.operations[0].inputs, [n("47.30"), n("0.15")]);
        assert_eq!(g.operations[0].span, Some(Span::new(11, 41)));
        assert_eq!(g.tool_calls[0].arguments["value"], Value::Number(n("7.1")));
        assert_eq!(g.tool_calls[0].arguments["unit"], Value::from("USD"));
        assert_eq!(g.claims[0].citation_ids, ["c1"]);
        assert_eq!(g.claims[0].text, "Fifteen percent is 7.095");
        assert_eq!(g.code_blocks[0].content, "x = 1");
        assert!(LineExtractor.extract("CLAIM factual: dangling [c9]").is_err());
        assert!(LineExtractor.extract("OP ADD 1 two = 3").is_err());
    }

    #[test]
    fn model_output_extracts() {
        let data = arithmetic_dataset(5, 2);
        let model = ScriptedModel::new(&data, ScriptedModelConfig::default());
        for d in &data {
            let g = LineExtractor.extract(&model.generate(&ModelHandle::new("m"), &d.prompt, 0).unwrap()).unwrap();
            assert_eq!(Value::Number(g.operations[0].output.clone()), g.tool_calls[0].arguments["value"]);
        }
    }
}
