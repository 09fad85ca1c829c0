//! `cape`: verify, correct and benchmark structured model outputs.
//!
//! Exit status: 0 when every check passed, 1 when the run was clean but found
//! violations (or a correction was not accepted, or a pack missed its
//! thresholds), 2 for usage, I/O and parse errors. Stdout carries only the
//! payload; diagnostics go to stderr.

mod loop_config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cape_core::correction::{CorrectionResult, Outcome, Rewriter};
use cape_core::cpl::{eval_expr, parse_expr, parse_policies, EvalEnv, Policy, ScopeKind};
use cape_core::graph::{canonical_serialize, validate_graph, PredicateGraph};
use cape_core::packs::{load_pack, render_profile, ProfileFormat};
use cape_core::provider::{Extractor, ModelHandle, RewriteProvider, SubprocessProvider};
use cape_core::session::{run_pack_dir, Session};
use cape_core::training_loop::{manifest_jsonl, run_loop, LoopConfig, LoopReport, ProviderSet, SemanticGate};
use cape_core::value::Value;
use cape_core::verifier::Verdict;
use clap::{Parser, Subcommand, ValueEnum};

const POLICY_PATH_VAR: &str = "CAPE_POLICY_PATH";

#[derive(Parser)]
#[command(name = "cape", version, about = "Policy verification and correction for structured model outputs")]
struct Cli {
    /// Payload format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Suppress the payload; only the exit status reports the result.
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Seed passed to model providers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a predicate graph and print its canonical form.
    ValidateGraph { file: PathBuf },
    /// Check a graph against policy files, policy directories or packs.
    Check {
        graph: PathBuf,
        /// Defaults to the entries of CAPE_POLICY_PATH.
        policies: Vec<PathBuf>,
        /// Defaults to the graph file's stem.
        #[arg(long)]
        output_id: Option<String>,
        /// Include per-policy statuses.
        #[arg(long)]
        details: bool,
    },
    /// Correct a graph's violations and re-verify.
    Correct {
        graph: PathBuf,
        policies: Vec<PathBuf>,
        #[arg(long)]
        output_id: Option<String>,
        /// Command speaking the provider protocol, used for rewrites.
        #[arg(long)]
        rewrite_provider: Option<String>,
        /// Command used to re-extract rewritten text; defaults to the
        /// rewrite provider.
        #[arg(long)]
        extractor: Option<String>,
    },
    /// Capability packs.
    Pack {
        #[command(subcommand)]
        command: PackCommand,
    },
    /// The verification-guided training loop.
    Loop {
        #[command(subcommand)]
        command: LoopCommand,
    },
    /// Evaluate an expression.
    Expr {
        expression: String,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Bind a scope element, e.g. `tool_call=0`.
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Subcommand)]
enum PackCommand {
    /// Compute the adherence profile of a pack.
    Run {
        pack: PathBuf,
        /// Directory of `<case id>.json` graphs (or `.txt` outputs with
        /// --extractor); defaults to the pack's own test cases.
        outputs: Option<PathBuf>,
        #[arg(long)]
        extractor: Option<String>,
    },
}

#[derive(Subcommand)]
enum LoopCommand {
    /// Run the loop described by a configuration file.
    Run {
        config: PathBuf,
        #[arg(long)]
        model_cmd: Option<String>,
        #[arg(long)]
        extractor_cmd: Option<String>,
        #[arg(long)]
        trainer_cmd: Option<String>,
        #[arg(long)]
        rewrite_provider: Option<String>,
        /// Write the training set as JSON lines.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

struct Output {
    format: Format,
    quiet: bool,
}

impl Output {
    fn emit(&self, payload: &str) -> Result<(), String> {
        if self.quiet {
            return Ok(());
        }
        let mut out = std::io::stdout().lock();
        let newline = if payload.ends_with('\n') { "" } else { "\n" };
        write!(out, "{payload}{newline}").and_then(|_| out.flush()).map_err(|e| format!("stdout: {e}"))
    }
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Left-aligned columns separated by two spaces.
fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}

fn policies_in(path: &Path) -> Result<Vec<Policy>, String> {
    if path.join("manifest.json").is_file() {
        let pack = load_pack(path).map_err(|e| e.to_string())?;
        return Ok(pack.core.into_iter().chain(pack.extended).collect());
    }
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| format!("{}: {e}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(policies_in(&f)?);
        }
        return Ok(out);
    }
    parse_policies(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_session(paths: &[PathBuf]) -> Result<Session, String> {
    let from_env: Vec<PathBuf>;
    let paths = if paths.is_empty() {
        from_env = std::env::var(POLICY_PATH_VAR)
            .unwrap_or_default()
            .split(':')
            .filter(|s| !s.is_empty())
            .map(PathBuf::from)
            .collect();
        &from_env
    } else {
        paths
    };
    let mut policies = Vec::new();
    for p in paths {
        policies.extend(policies_in(p)?);
    }
    log::info!("loaded {} policies", policies.len());
    Session::new(policies).map_err(|e| e.to_string())
}

fn read_graph(path: &Path) -> Result<PredicateGraph, String> {
    cape_core::graph::parse_graph(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn default_output_id(graph: &Path, given: Option<String>) -> String {
    given.unwrap_or_else(|| graph.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
}

fn cmd_validate_graph(out: &Output, file: &Path) -> Result<u8, String> {
    let text = read(file)?;
    let json: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("{}: syntax error: {e}", file.display()))?;
    let value = Value::from_json(&json).map_err(|e| format!("{}: {e}", file.display()))?;
    let graph = PredicateGraph::from_value(&value).map_err(|e| format!("{}: {e}", file.display()))?;
    let errors = validate_graph(&graph);
    if !errors.is_empty() {
        for e in &errors {
            eprintln!("{}: {e}", file.display());
        }
        return Ok(2);
    }
    out.emit(&canonical_serialize(&graph))?;
    Ok(0)
}

fn verdict_table(v: &Verdict) -> String {
    let rows: Vec<Vec<String>> = v
        .violations
        .iter()
        .map(|x| vec![x.policy_id.clone(), x.tier.as_str().to_string(), x.message.clone()])
        .collect();
    table(&["POLICY", "TIER", "MESSAGE"], &rows)
}

fn cmd_check(
    out: &Output,
    graph: &Path,
    policies: &[PathBuf],
    output_id: Option<String>,
    details: bool,
) -> Result<u8, String> {
    let session = load_session(policies)?;
    let g = read_graph(graph)?;
    let verdict = session.verdict(&g, &default_output_id(graph, output_id));
    let payload = match (out.format, details) {
        (Format::Table, _) => verdict_table(&verdict),
        (Format::Json, true) => verdict.to_canonical_json_with_details(),
        (Format::Json, false) => verdict.to_canonical_json(),
    };
    out.emit(&payload)?;
    Ok(u8::from(!verdict.is_clean()))
}

fn correction_table(r: &CorrectionResult) -> String {
    let rows: Vec<Vec<String>> = r
        .records
        .iter()
        .map(|rec| {
            let outcome = match &rec.outcome {
                Outcome::Applied => "applied".to_string(),
                Outcome::Warned => "warned".to_string(),
                Outcome::Rejected => "rejected".to_string(),
                Outcome::Conflict { winner, .. } => format!("conflict with {winner}"),
                Outcome::Failed { reason } => format!("failed: {reason}"),
            };
            let strategy = rec.strategy.map_or_else(|| "-".to_string(), |s| s.to_string());
            vec![rec.policy_id.clone(), rec.element_index.to_string(), strategy, outcome]
        })
        .collect();
    table(&["POLICY", "ELEMENT", "STRATEGY", "OUTCOME"], &rows)
}

fn cmd_correct(
    out: &Output,
    graph: &Path,
    policies: &[PathBuf],
    output_id: Option<String>,
    rewrite_provider: Option<&str>,
    extractor: Option<&str>,
) -> Result<u8, String> {
    let session = load_session(policies)?;
    let g = read_graph(graph)?;
    let provider = rewrite_provider.map(SubprocessProvider::spawn).transpose().map_err(|e| e.to_string())?;
    let separate = extractor.map(SubprocessProvider::spawn).transpose().map_err(|e| e.to_string())?;
    let rewriter = Rewriter {
        provider: provider.as_ref().map(|p| p as &dyn RewriteProvider),
        extractor: separate.as_ref().or(provider.as_ref()).map(|p| p as &dyn Extractor),
    };
    let result = session.correct_graph(&g, &default_output_id(graph, output_id), rewriter);
    for reason in &result.reasons {
        log::info!("not accepted: {reason}");
    }
    let payload = match out.format {
        Format::Table => correction_table(&result),
        Format::Json => result.to_canonical_json(),
    };
    out.emit(&payload)?;
    Ok(u8::from(!result.accepted))
}

fn cmd_pack_run(out: &Output, pack: &Path, outputs: Option<&Path>, extractor: Option<&str>) -> Result<u8, String> {
    let extractor = extractor.map(SubprocessProvider::spawn).transpose().map_err(|e| e.to_string())?;
    let profile =
        run_pack_dir(pack, outputs, extractor.as_ref().map(|x| x as &dyn Extractor)).map_err(|e| e.to_string())?;
    eprintln!(
        "{} {}: core adherence {}, extended adherence {}, {}",
        profile.pack,
        profile.version,
        profile.core_adherence,
        profile.extended_adherence,
        if profile.pass { "pass" } else { "fail" }
    );
    let format = match out.format {
        Format::Json => ProfileFormat::Json,
        Format::Table => ProfileFormat::Table,
    };
    out.emit(&render_profile(&profile, format))?;
    Ok(u8::from(!profile.pass))
}

fn loop_table(report: &LoopReport) -> String {
    let rows: Vec<Vec<String>> = report
        .epochs
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                e.model.to_string(),
                e.violation_rate().to_string(),
                e.accepted_direct.to_string(),
                e.accepted_corrected.to_string(),
                e.dropped.to_string(),
            ]
        })
        .collect();
    table(&["EPOCH", "MODEL", "VIOLATION_RATE", "DIRECT", "CORRECTED", "DROPPED"], &rows)
}

struct LoopOverrides<'a> {
    model_cmd: Option<&'a str>,
    extractor_cmd: Option<&'a str>,
    trainer_cmd: Option<&'a str>,
    rewrite_provider: Option<&'a str>,
}

fn cmd_loop_run(
    out: &Output,
    config_path: &Path,
    overrides: LoopOverrides<'_>,
    seed: Option<u64>,
    jobs: Option<usize>,
    manifest: Option<&Path>,
) -> Result<u8, String> {
    use loop_config::*;
    let (file, base) = read_loop_file(config_path)?;
    let command = |c: Option<&str>| c.map(|command| Component::Command { command: command.to_string() });
    let policies = load_policies(&base, &file.policies)?;
    let dataset = load_dataset(&base, &file.dataset)?;

    let model_c = command(overrides.model_cmd).or(file.model).ok_or("configuration names no model")?;
    let extractor_c = command(overrides.extractor_cmd).or(file.extractor).ok_or("configuration names no extractor")?;
    let trainer_c = command(overrides.trainer_cmd).or(file.trainer).unwrap_or(Component::Builtin("identity".into()));
    let rewriter_c = command(overrides.rewrite_provider).or(file.rewriter);

    let model = build_model(&model_c, &dataset)?;
    let extractor = build_extractor(&extractor_c)?;
    let trainer = build_trainer(&trainer_c)?;
    let rewriter = rewriter_c.as_ref().map(build_rewriter).transpose()?;
    let gate_parts = file.gate.as_ref().map(build_gate).transpose()?;

    let mut config = LoopConfig::new(file.epochs, policies, dataset);
    config.seed = seed.unwrap_or(file.seed);
    config.jobs = jobs.or(file.jobs).unwrap_or(1);
    if let Some(theta) = file.theta_meta {
        config.theta_meta = theta;
    }
    if let Some(id) = file.output_id {
        config.output_id = id;
    }
    let providers = ProviderSet {
        model: model.as_ref(),
        extractor: extractor.as_ref(),
        trainer: trainer.as_ref(),
        rewriter: rewriter.as_deref(),
        gate: gate_parts.as_ref().zip(file.gate.as_ref()).map(|((verifier, meta), g)| SemanticGate {
            verifier: verifier.as_ref(),
            meta: meta.as_ref(),
            rubric_id: &g.rubric_id,
        }),
    };
    let (report, examples) =
        run_loop(&config, providers, ModelHandle::new(file.initial_model)).map_err(|e| e.to_string())?;
    if let Some(path) = manifest {
        fs::write(path, manifest_jsonl(&examples)).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    let payload = match out.format {
        Format::Table => loop_table(&report),
        Format::Json => report.to_canonical_json(),
    };
    out.emit(&payload)?;
    Ok(0)
}

fn cmd_expr(out: &Output, expression: &str, graph: Option<&Path>, bind: Option<&str>) -> Result<u8, String> {
    let expr = match parse_expr(expression) {
        Ok(e) => e,
        Err(e) => {
            let caret = " ".repeat(expression[..e.offset.min(expression.len())].chars().count());
            return Err(format!("{e}\n  {expression}\n  {caret}^"));
        }
    };
    let graph = match graph {
        Some(p) => read_graph(p)?,
        None => PredicateGraph::default(),
    };
    let document = graph.to_value();
    let binding = match bind {
        None => None,
        Some(spec) => {
            let (kind, index) =
                spec.split_once('=').ok_or_else(|| format!("--bind expects kind=index, got '{spec}'"))?;
            let kind = ScopeKind::parse(kind).ok_or_else(|| format!("unknown scope kind '{kind}'"))?;
            let index: usize = index.parse().map_err(|_| format!("bad index '{index}'"))?;
            let element = match kind.collection() {
                None => Some(&document),
                Some(c) => document.as_map().and_then(|m| m.get(c)).and_then(Value::as_list).and_then(|l| l.get(index)),
            };
            let element = element.ok_or_else(|| format!("no element {spec}"))?;
            Some((kind.binding_name(), element))
        }
    };
    let env = match binding {
        Some((name, element)) => EvalEnv::bind(&document, name, element),
        None => EvalEnv::new(&document),
    };
    let value = eval_expr(&expr, &env).map_err(|e| format!("evaluation error: {e}"))?;
    let payload = match out.format {
        Format::Table => value.to_string(),
        Format::Json => value.to_canonical_json(),
    };
    out.emit(&payload)?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8, String> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err("--jobs must be at least 1".into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().map_err(|e| e.to_string())?;
    }
    let out = Output { format: cli.format, quiet: cli.quiet };
    match cli.command {
        Command::ValidateGraph { file } => cmd_validate_graph(&out, &file),
        Command::Check { graph, policies, output_id, details } => {
            cmd_check(&out, &graph, &policies, output_id, details)
        }
        Command::Correct { graph, policies, output_id, rewrite_provider, extractor } => {
            cmd_correct(&out, &graph, &policies, output_id, rewrite_provider.as_deref(), extractor.as_deref())
        }
        Command::Pack { command: PackCommand::Run { pack, outputs, extractor } } => {
            cmd_pack_run(&out, &pack, outputs.as_deref(), extractor.as_deref())
        }
        Command::Loop {
            command: LoopCommand::Run { config, model_cmd, extractor_cmd, trainer_cmd, rewrite_provider, manifest },
        } => {
            let overrides = LoopOverrides {
                model_cmd: model_cmd.as_deref(),
                extractor_cmd: extractor_cmd.as_deref(),
                trainer_cmd: trainer_cmd.as_deref(),
                rewrite_provider: rewrite_provider.as_deref(),
            };
            cmd_loop_run(&out, &config, overrides, cli.seed, cli.jobs, manifest.as_deref())
        }
        Command::Expr { expression, graph, bind } => cmd_expr(&out, &expression, graph.as_deref(), bind.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("cape: error: {e}");
            ExitCode::from(2)
        }
    }
}
