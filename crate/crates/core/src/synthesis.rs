//! Sub-schema driven synthesis: SQL generation per complexity level, SQL-to-text,
//! judging, execution with repair, reasoning traces and a column-balancing round.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::parse::{parse_json_object, parse_tagged, JsonKind};
use crate::llm::template::{self, bindings};
use crate::llm::{Gateway, LlmError, LlmRequest, Purpose};
use crate::schema::{ColumnRef, DatabaseSchema};
use crate::sql::{self, SqlError};
use crate::subschema::SubSchema;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("repair requested for SQL that already executes")]
    AlreadyExecutable,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Simple,
    Moderate,
    Challenging,
    Window,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Simple, Level::Moderate, Level::Challenging, Level::Window];

    pub fn name(self) -> &'static str {
        match self {
            Level::Simple => "simple",
            Level::Moderate => "moderate",
            Level::Challenging => "challenging",
            Level::Window => "window",
        }
    }

    pub fn guide(self) -> &'static str {
        match self {
            Level::Simple => {
                "A simple query reads one table or follows one obvious join, with plain filters and no nesting."
            }
            Level::Moderate => {
                "A moderate query joins tables, aggregates with GROUP BY, or combines several conditions."
            }
            Level::Challenging => {
                "A challenging query combines several joins with nested subqueries or CTEs, HAVING, CASE expressions or computed ratios."
            }
            Level::Window => {
                "The query must use at least one window function with an OVER clause, such as RANK, ROW_NUMBER or a windowed aggregate."
            }
        }
    }
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Level::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown level `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Round {
    Initial,
    ColumnFocused,
}

impl Round {
    fn tag(self) -> &'static str {
        match self {
            Round::Initial => "r1",
            Round::ColumnFocused => "r2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub n_per_level: usize,
    pub levels: Vec<Level>,
    pub min_col_example_count: usize,
    pub max_repair_attempts: usize,
    pub exec_timeout_secs: f64,
    pub jobs: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n_per_level: 3,
            levels: Level::ALL.to_vec(),
            min_col_example_count: 400,
            max_repair_attempts: 1,
            exec_timeout_secs: 30.0,
            jobs: 4,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_per_level == 0 {
            return Err("n_per_level must be at least 1".into());
        }
        if self.levels.is_empty() {
            return Err("at least one level is required".into());
        }
        if self.exec_timeout_secs.is_nan() || self.exec_timeout_secs <= 0.0 {
            return Err("exec_timeout_secs must be positive".into());
        }
        Ok(())
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.exec_timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2SExample {
    pub id: String,
    pub db_id: String,
    pub subschema_id: String,
    pub sql: String,
    pub question: String,
    pub difficulty: Level,
    pub reasoning: Option<String>,
    pub judge_verdict: bool,
    pub executable: bool,
    pub repaired: bool,
    pub round: Round,
    /// Fields this crate does not know about, kept for lossless round-trips.
    #[serde(flatten, default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub stage: String,
    pub subschema_id: String,
    pub reason: String,
}

impl Diagnostic {
    fn new(stage: &str, subschema_id: &str, reason: impl Into<String>) -> Self {
        Self { stage: stage.into(), subschema_id: subschema_id.into(), reason: reason.into() }
    }
}

/// A generated SQL with its translated question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPair {
    pub sql: String,
    pub question: String,
    pub difficulty: Level,
    pub variant: usize,
}

/// Shared inputs for every synthesis step.
pub struct SynthContext<'a> {
    pub schema: &'a DatabaseSchema,
    pub db_path: &'a Path,
    pub gateway: &'a Gateway,
    pub config: &'a GenerationConfig,
}

fn focus_list(cols: &[ColumnRef]) -> String {
    cols.iter().map(|c| format!("- {}.{}", c.table, c.column)).collect::<Vec<_>>().join("\n")
}

/// Requests `n_per_level` SQL queries per level and translates each to a question.
/// Malformed outputs and gateway failures are dropped with a diagnostic.
pub fn generate_for_subschema(
    ctx: &SynthContext<'_>,
    subschema: &SubSchema,
    focus: Option<&[ColumnRef]>,
    diagnostics: &mut Vec<Diagnostic>,
) -> Vec<RawPair> {
    let block = subschema.render(ctx.schema);
    let n = ctx.config.n_per_level;
    let mut out = Vec::new();
    for &level in &ctx.config.levels {
        for k in 0..n {
            let variant = format!("{} of {n}", k + 1);
            let mut b = bindings([
                ("DB_ID", ctx.schema.db_id.as_str()),
                ("SUB_SCHEMA", block.as_str()),
                ("LEVEL", level.name()),
                ("LEVEL_GUIDE", level.guide()),
                ("VARIANT", variant.as_str()),
            ]);
            let template_id = match focus {
                Some(cols) => {
                    b.insert("FOCUS_COLUMNS".into(), focus_list(cols));
                    template::GENERATE_SQL_FOCUS
                }
                None => template::GENERATE_SQL,
            };
            let sql = match ask_tagged(ctx.gateway, template_id, &b, Purpose::GenerateSql) {
                Ok(a) if !a.is_empty() => a,
                Ok(_) => {
                    diagnostics.push(Diagnostic::new("generate", &subschema.id, format!("{} #{k}: empty SQL", level.name())));
                    continue;
                }
                Err(e) => {
                    diagnostics.push(Diagnostic::new("generate", &subschema.id, format!("{} #{k}: {e}", level.name())));
                    continue;
                }
            };
            let b = bindings([("DB_ID", ctx.schema.db_id.as_str()), ("SUB_SCHEMA", block.as_str()), ("SQL", sql.as_str())]);
            match ask_tagged(ctx.gateway, template::SQL_TO_TEXT, &b, Purpose::SqlToText) {
                Ok(q) if !q.is_empty() => out.push(RawPair { sql, question: q, difficulty: level, variant: k }),
                Ok(_) => diagnostics.push(Diagnostic::new("sql_to_text", &subschema.id, format!("{} #{k}: empty question", level.name()))),
                Err(e) => diagnostics.push(Diagnostic::new("sql_to_text", &subschema.id, format!("{} #{k}: {e}", level.name()))),
            }
        }
    }
    out
}

fn ask_tagged(
    gateway: &Gateway,
    template_id: &str,
    b: &BTreeMap<String, String>,
    purpose: Purpose,
) -> Result<String, LlmError> {
    let req = LlmRequest::from_template(template_id, b, purpose)?;
    let resp = gateway.complete(&req)?;
    Ok(parse_tagged(&resp.text)?.answer.trim().to_string())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgement {
    pub logical: bool,
    pub reason: String,
    /// False when the verdict could not be parsed and was defaulted to illogical.
    pub parsed: bool,
}

/// Asks the judge whether `sql` and `question` form a logical, aligned pair.
pub fn judge_pair(
    ctx: &SynthContext<'_>,
    sql: &str,
    question: &str,
    subschema: &SubSchema,
) -> Result<Judgement, LlmError> {
    let block = subschema.render(ctx.schema);
    let b = bindings([("SUB_SCHEMA", block.as_str()), ("SQL", sql), ("QUESTION", question)]);
    let req = LlmRequest::from_template(template::JUDGE, &b, Purpose::Judge)?;
    let resp = ctx.gateway.complete(&req)?;
    match parse_json_object(&resp.text, &[("verdict", JsonKind::String)]) {
        Ok(obj) => {
            let verdict = obj["verdict"].as_str().unwrap_or_default().trim().to_lowercase();
            let reason = obj.get("reason").and_then(|r| r.as_str()).unwrap_or_default().to_string();
            Ok(Judgement { logical: verdict == "logical", reason, parsed: true })
        }
        Err(e) => Ok(Judgement { logical: false, reason: format!("unparseable verdict: {e}"), parsed: false }),
    }
}

/// Outcome of the repair loop.
#[derive(Debug, Clone, PartialEq)]
pub enum Repair {
    Fixed(T2SExample),
    Dropped { attempts: usize, last_error: String },
}

/// Asks the model to fix a failing query, re-executing each attempt.
pub fn repair_sql(
    ctx: &SynthContext<'_>,
    example: &T2SExample,
    error_message: &str,
    subschema: &SubSchema,
) -> Result<Repair, SynthError> {
    if sql::execute_query(&example.sql, ctx.db_path, ctx.config.timeout()).is_ok() {
        return Err(SynthError::AlreadyExecutable);
    }
    let block = subschema.render(ctx.schema);
    let mut current = example.sql.clone();
    let mut error = error_message.to_string();
    for attempt in 1..=ctx.config.max_repair_attempts {
        let b = bindings([
            ("DB_ID", ctx.schema.db_id.as_str()),
            ("SUB_SCHEMA", block.as_str()),
            ("QUESTION", example.question.as_str()),
            ("SQL", current.as_str()),
            ("ERROR", error.as_str()),
        ]);
        let candidate = match ask_tagged(ctx.gateway, template::REPAIR, &b, Purpose::Repair) {
            Ok(c) if !c.is_empty() => c,
            Ok(_) => {
                error = "repair returned no SQL".into();
                continue;
            }
            Err(e) => {
                error = e.to_string();
                continue;
            }
        };
        match sql::execute_query(&candidate, ctx.db_path, ctx.config.timeout()) {
            Ok(_) => {
                let mut fixed = example.clone();
                fixed.sql = candidate;
                fixed.executable = true;
                fixed.repaired = true;
                return Ok(Repair::Fixed(fixed));
            }
            Err(e) => {
                tracing::debug!(attempt, error = %e, "repair attempt failed");
                current = candidate;
                error = e.to_string();
            }
        }
    }
    Ok(Repair::Dropped { attempts: ctx.config.max_repair_attempts, last_error: error })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasoningOutcome {
    pub reasoning: Option<String>,
    pub diagnostics: Vec<String>,
}

/// Produces a stepwise trace ending with the example's SQL. A trace whose final SQL
/// differs is regenerated once; a second mismatch or a gateway failure leaves it empty.
pub fn generate_reasoning(ctx: &SynthContext<'_>, example: &T2SExample, subschema: &SubSchema) -> ReasoningOutcome {
    let block = subschema.render(ctx.schema);
    let b = bindings([
        ("DB_ID", ctx.schema.db_id.as_str()),
        ("SUB_SCHEMA", block.as_str()),
        ("QUESTION", example.question.as_str()),
        ("SQL", example.sql.as_str()),
    ]);
    let target = sql::normalize_whitespace(&example.sql);
    let mut diagnostics = Vec::new();
    for _ in 0..2 {
        let req = match LlmRequest::from_template(template::REASONING, &b, Purpose::Reasoning) {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(e.to_string());
                break;
            }
        };
        let text = match ctx.gateway.complete(&req) {
            Ok(r) => r.text,
            Err(e) => {
                diagnostics.push(format!("gateway: {e}"));
                return ReasoningOutcome { reasoning: None, diagnostics };
            }
        };
        match parse_tagged(&text) {
            Ok(t) if sql::normalize_whitespace(&t.answer) == target && !t.reasoning.is_empty() => {
                return ReasoningOutcome { reasoning: Some(format!("{}\n{}", t.reasoning, example.sql.trim())), diagnostics };
            }
            Ok(t) if t.reasoning.is_empty() => diagnostics.push("trace has no reasoning section".into()),
            Ok(_) => diagnostics.push("trace's final SQL differs from the example SQL".into()),
            Err(e) => diagnostics.push(e.to_string()),
        }
    }
    ReasoningOutcome { reasoning: None, diagnostics }
}

/// Column usage over `examples`; every schema column is a key. Also returns the
/// number of examples whose SQL failed to parse.
pub fn count_column_usage(examples: &[T2SExample], schema: &DatabaseSchema) -> (BTreeMap<ColumnRef, usize>, usize) {
    let mut counts: BTreeMap<ColumnRef, usize> = schema.all_columns().into_iter().map(|c| (c, 0)).collect();
    let parsed: Vec<Option<BTreeSet<ColumnRef>>> = examples
        .par_iter()
        .map(|e| sql::extract_schema_elements(&e.sql, schema).ok().map(|p| p.referenced))
        .collect();
    let mut unparseable = 0;
    for p in parsed {
        match p {
            Some(refs) => {
                for c in refs {
                    *counts.entry(c).or_insert(0) += 1;
                }
            }
            None => unparseable += 1,
        }
    }
    (counts, unparseable)
}

/// Columns used strictly fewer than `threshold` times.
pub fn select_focus_columns(counts: &BTreeMap<ColumnRef, usize>, threshold: usize) -> BTreeSet<ColumnRef> {
    counts.iter().filter(|(_, &n)| n < threshold).map(|(c, _)| c.clone()).collect()
}

/// Greedy set cover of `focus` by sub-schemas: repeatedly take the sub-schema that
/// covers the most still-uncovered focus columns, ties broken by smaller id. Each
/// selected sub-schema is paired with the focus columns it newly covers. Columns
/// no sub-schema contains are returned separately.
pub fn find_focus_subschemas(
    focus: &BTreeSet<ColumnRef>,
    all: &[SubSchema],
) -> (Vec<(SubSchema, Vec<ColumnRef>)>, Vec<ColumnRef>) {
    let focus: Vec<&ColumnRef> = focus.iter().collect();
    let members: Vec<Vec<usize>> = all
        .iter()
        .map(|ss| (0..focus.len()).filter(|&i| ss.contains(focus[i])).collect())
        .collect();
    let coverable: BTreeSet<usize> = members.iter().flatten().copied().collect();
    let missing: Vec<ColumnRef> = (0..focus.len()).filter(|i| !coverable.contains(i)).map(|i| focus[i].clone()).collect();
    let mut uncovered = coverable;
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&a, &b| all[a].id.cmp(&all[b].id));
    let mut selected = Vec::new();
    while !uncovered.is_empty() {
        let mut best: Option<(usize, usize)> = None;
        for &i in &order {
            let gain = members[i].iter().filter(|c| uncovered.contains(c)).count();
            if gain > 0 && best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let Some((i, _)) = best else { break };
        let newly: Vec<ColumnRef> = members[i].iter().filter(|c| uncovered.contains(c)).map(|&c| focus[c].clone()).collect();
        for c in &members[i] {
            uncovered.remove(c);
        }
        selected.push((all[i].clone(), newly));
    }
    (selected, missing)
}

/// Result of processing one sub-schema in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubschemaResult {
    pub round: Round,
    pub subschema_id: String,
    pub examples: Vec<T2SExample>,
    pub diagnostics: Vec<Diagnostic>,
    pub raw_pairs: usize,
}

/// Generation, judging, execution with repair and reasoning for one sub-schema.
pub fn process_subschema(
    ctx: &SynthContext<'_>,
    subschema: &SubSchema,
    focus: Option<&[ColumnRef]>,
    round: Round,
) -> SubschemaResult {
    let mut diagnostics = Vec::new();
    let raw = generate_for_subschema(ctx, subschema, focus, &mut diagnostics);
    let mut examples = Vec::new();
    for pair in &raw {
        let id = format!("{}-{}-{}-{}", subschema.id, round.tag(), pair.difficulty.name(), pair.variant);
        let mut example = T2SExample {
            id: id.clone(),
            db_id: ctx.schema.db_id.clone(),
            subschema_id: subschema.id.clone(),
            sql: pair.sql.clone(),
            question: pair.question.clone(),
            difficulty: pair.difficulty,
            reasoning: None,
            judge_verdict: false,
            executable: false,
            repaired: false,
            round,
            extra: Default::default(),
        };
        match judge_pair(ctx, &example.sql, &example.question, subschema) {
            Ok(j) if j.logical => example.judge_verdict = true,
            Ok(j) => {
                let stage = if j.parsed { "judge" } else { "judge_parse" };
                diagnostics.push(Diagnostic::new(stage, &subschema.id, format!("{id}: {}", j.reason)));
                continue;
            }
            Err(e) => {
                diagnostics.push(Diagnostic::new("judge", &subschema.id, format!("{id}: {e}")));
                continue;
            }
        }
        match sql::execute_query(&example.sql, ctx.db_path, ctx.config.timeout()) {
            Ok(_) => example.executable = true,
            Err(err) => match repair_sql(ctx, &example, &err.to_string(), subschema) {
                Ok(Repair::Fixed(fixed)) => example = fixed,
                Ok(Repair::Dropped { last_error, .. }) => {
                    diagnostics.push(Diagnostic::new("repair", &subschema.id, format!("{id}: {last_error}")));
                    continue;
                }
                Err(e) => {
                    diagnostics.push(Diagnostic::new("repair", &subschema.id, format!("{id}: {e}")));
                    continue;
                }
            },
        }
        if example.difficulty == Level::Window {
            match sql::classify_features(&example.sql) {
                Ok(f) if f.has_window => {}
                Ok(_) => diagnostics.push(Diagnostic::new("window_check", &subschema.id, format!("{id}: no OVER clause"))),
                Err(e) => diagnostics.push(Diagnostic::new("window_check", &subschema.id, format!("{id}: {e}"))),
            }
        }
        let outcome = generate_reasoning(ctx, &example, subschema);
        for d in outcome.diagnostics {
            diagnostics.push(Diagnostic::new("reasoning", &subschema.id, format!("{id}: {d}")));
        }
        example.reasoning = outcome.reasoning;
        examples.push(example);
    }
    SubschemaResult { round, subschema_id: subschema.id.clone(), examples, diagnostics, raw_pairs: raw.len() }
}

/// Append-only log of finished sub-schemas enabling resume.
pub struct Checkpoint {
    path: PathBuf,
    done: BTreeMap<(String, String), SubschemaResult>,
    writer: Mutex<fs::File>,
}

fn round_key(round: Round) -> String {
    round.tag().to_string()
}

impl Checkpoint {
    pub fn open(path: &Path) -> Result<Self, SynthError> {
        let mut done = BTreeMap::new();
        if path.exists() {
            let file = fs::File::open(path)?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let r: SubschemaResult = serde_json::from_str(&line)
                    .map_err(|e| SynthError::Checkpoint(format!("{} line {}: {e}", path.display(), i + 1)))?;
                done.insert((round_key(r.round), r.subschema_id.clone()), r);
            }
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let writer = fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { path: path.to_path_buf(), done, writer: Mutex::new(writer) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn get(&self, round: Round, id: &str) -> Option<&SubschemaResult> {
        self.done.get(&(round_key(round), id.to_string()))
    }

    fn append(&self, r: &SubschemaResult) -> Result<(), SynthError> {
        let line = serde_json::to_string(r).expect("result serializes");
        let mut w = self.writer.lock().expect("checkpoint poisoned");
        writeln!(w, "{line}")?;
        w.flush()?;
        Ok(())
    }
}

/// Examples and diagnostics of one round, in sub-schema order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundOutput {
    pub examples: Vec<T2SExample>,
    pub diagnostics: Vec<Diagnostic>,
    pub raw_pairs: usize,
    pub resumed: usize,
}

/// Processes `work` on a pool of `config.jobs` workers; output keeps input order.
pub fn run_round(
    ctx: &SynthContext<'_>,
    work: &[(SubSchema, Option<Vec<ColumnRef>>)],
    round: Round,
    checkpoint: Option<&Checkpoint>,
) -> Result<RoundOutput, SynthError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.config.jobs.max(1))
        .build()
        .map_err(|e| SynthError::Pool(e.to_string()))?;
    let results: Vec<Result<(SubschemaResult, bool), SynthError>> = pool.install(|| {
        work.par_iter()
            .map(|(ss, focus)| {
                if let Some(done) = checkpoint.and_then(|c| c.get(round, &ss.id)) {
                    return Ok((done.clone(), true));
                }
                let r = process_subschema(ctx, ss, focus.as_deref(), round);
                if let Some(c) = checkpoint {
                    c.append(&r)?;
                }
                Ok((r, false))
            })
            .collect()
    });
    let mut out = RoundOutput::default();
    for r in results {
        let (r, resumed) = r?;
        out.raw_pairs += r.raw_pairs;
        out.resumed += usize::from(resumed);
        out.examples.extend(r.examples);
        out.diagnostics.extend(r.diagnostics);
    }
    Ok(out)
}

/// First round over every sub-schema.
pub fn run_initial_round(
    ctx: &SynthContext<'_>,
    sub_schemas: &[SubSchema],
    checkpoint: Option<&Checkpoint>,
) -> Result<RoundOutput, SynthError> {
    let work: Vec<(SubSchema, Option<Vec<ColumnRef>>)> = sub_schemas.iter().map(|s| (s.clone(), None)).collect();
    run_round(ctx, &work, Round::Initial, checkpoint)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BalanceOutput {
    pub round: RoundOutput,
    pub focus_columns: Vec<ColumnRef>,
    pub focus_subschemas: Vec<String>,
    pub uncoverable: Vec<ColumnRef>,
}

/// Column-focused round targeting columns used fewer than the threshold in `existing`.
pub fn run_balance_round(
    ctx: &SynthContext<'_>,
    sub_schemas: &[SubSchema],
    existing: &[T2SExample],
    checkpoint: Option<&Checkpoint>,
) -> Result<BalanceOutput, SynthError> {
    let retained: Vec<T2SExample> = existing.iter().filter(|e| e.judge_verdict && e.executable).cloned().collect();
    let (counts, _) = count_column_usage(&retained, ctx.schema);
    let focus = select_focus_columns(&counts, ctx.config.min_col_example_count);
    let (selected, uncoverable) = find_focus_subschemas(&focus, sub_schemas);
    let mut round = RoundOutput::default();
    for c in &uncoverable {
        round.diagnostics.push(Diagnostic::new("focus", "", format!("{c} is in no sub-schema")));
    }
    let work: Vec<(SubSchema, Option<Vec<ColumnRef>>)> = selected.iter().map(|(s, c)| (s.clone(), Some(c.clone()))).collect();
    let r = run_round(ctx, &work, Round::ColumnFocused, checkpoint)?;
    round.examples = r.examples;
    round.diagnostics.extend(r.diagnostics);
    round.raw_pairs = r.raw_pairs;
    round.resumed = r.resumed;
    Ok(BalanceOutput {
        round,
        focus_columns: focus.into_iter().collect(),
        focus_subschemas: selected.iter().map(|(s, _)| s.id.clone()).collect(),
        uncoverable,
    })
}

/// Keeps judged-logical executable examples and removes exact duplicates of
/// (SQL, question) after whitespace normalization; the first occurrence wins.
pub fn final_filter(examples: Vec<T2SExample>) -> Vec<T2SExample> {
    let mut seen = HashSet::new();
    examples
        .into_iter()
        .filter(|e| e.judge_verdict && e.executable)
        .filter(|e| seen.insert((sql::normalize_whitespace(&e.sql), sql::normalize_whitespace(&e.question))))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub examples: Vec<T2SExample>,
    pub diagnostics: Vec<Diagnostic>,
    pub initial_raw_pairs: usize,
    pub initial_retained: usize,
    pub focus_columns: Vec<ColumnRef>,
    pub focus_subschemas: Vec<String>,
    pub balance_raw_pairs: usize,
}

/// Initial round, one column-focused round, then the final filter.
pub fn run_pipeline(
    ctx: &SynthContext<'_>,
    sub_schemas: &[SubSchema],
    checkpoint: Option<&Checkpoint>,
) -> Result<PipelineOutput, SynthError> {
    let first = run_initial_round(ctx, sub_schemas, checkpoint)?;
    let balance = run_balance_round(ctx, sub_schemas, &first.examples, checkpoint)?;
    let initial_retained = first.examples.len();
    let mut diagnostics = first.diagnostics;
    diagnostics.extend(balance.round.diagnostics);
    let mut all = first.examples;
    all.extend(balance.round.examples);
    Ok(PipelineOutput {
        examples: final_filter(all),
        diagnostics,
        initial_raw_pairs: first.raw_pairs,
        initial_retained,
        focus_columns: balance.focus_columns,
        focus_subschemas: balance.focus_subschemas,
        balance_raw_pairs: balance.round.raw_pairs,
    })
}
