//! Command-line orchestration of the toolkit's stages. Each subcommand writes its
//! outputs and a `<command>.manifest.json` into the output directory.

pub mod config;
pub mod manifest;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use t2s_core::dataset::{
    self, compute_stats, export_sft, load_bird_dev, read_jsonl, render_level_features, render_level_table,
    render_unused_table, split_dataset, write_json, write_jsonl, DatasetKind, FewShotPool, LabelledSql, SftConfig,
    StatsReport,
};
use t2s_core::evaluation::{evaluate_batch, linking_metrics, render_bounds_table, GoldRecord, LinkedSchema, LinkingGold, PredictionRecord};
use t2s_core::linking::{
    build_example_index, build_value_index, link_question, FilteredSchema, HashingEmbedder, LinkContext, LinkOutcome,
    LinkingMode, VectorIndex,
};
use t2s_core::llm::http::{HttpConfig, HttpProvider, DEFAULT_BASE_URL};
use t2s_core::llm::{Gateway, Mode, ReplayStore};
use t2s_core::schema::{introspect_schema, DatabaseSchema};
use t2s_core::subschema::{construct_sub_schemas, count_sub_schemas, gen_table_level_with, JoinabilityRule, WindowMode};
use t2s_core::synthesis::{
    final_filter, run_balance_round, run_initial_round, Checkpoint, Diagnostic, Level, SynthContext, T2SExample,
};

use crate::config::PipelineConfig;
use crate::manifest::Manifest;

fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "t2s", version, about = "Synthetic text-to-SQL generation, schema linking and evaluation")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// TOML or JSON pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for every parallel stage.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a SQLite database's schema into schema.json.
    Introspect(IntrospectArgs),
    /// Enumerate sub-schemas into subschemas.jsonl.
    Subschemas(SubschemasArgs),
    /// Run the initial generation round.
    Generate(GenerateArgs),
    /// Run the column-focused round over a previous generate output.
    Balance(BalanceArgs),
    /// Level, join, aggregation and column-usage statistics.
    Stats(StatsArgs),
    /// Coverage-aware train/dev/test split.
    Split(SplitArgs),
    /// Schema linking for a question file.
    Link(LinkArgs),
    /// EX and soft-F1 bounds for candidate predictions.
    Evaluate(EvaluateArgs),
    /// Fine-tuning records for the candidate-generation prompt.
    ExportSft(ExportArgs),
    /// Generate and balance against a live provider, recording every response.
    ReplayRecord(RecordArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct DbArgs {
    /// SQLite database file.
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// JSON list of extra foreign keys.
    #[arg(long)]
    pub fk_overrides: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SubschemaFlags {
    /// Table counts, e.g. 3,2,1.
    #[arg(long, value_delimiter = ',')]
    pub tc: Option<Vec<usize>>,
    /// Column window size.
    #[arg(short = 'w', long = "window")]
    pub window: Option<usize>,
    /// Window stride.
    #[arg(short = 's', long = "stride")]
    pub stride: Option<usize>,
    /// Column shuffle seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// covering or exhaustive.
    #[arg(long, value_parser = serde_enum::<WindowMode>)]
    pub window_mode: Option<WindowMode>,
    /// shared_key, induced_fk or any_path.
    #[arg(long, value_parser = serde_enum::<JoinabilityRule>)]
    pub joinability: Option<JoinabilityRule>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenerationFlags {
    /// Queries requested per level and sub-schema
    #[arg(long)]
    pub n_per_level: Option<usize>,
    /// Comma-separated subset of simple,moderate,challenging,window.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<Level>>,
    /// Columns used fewer times than this are targeted by balance.
    #[arg(long)]
    pub min_col_count: Option<usize>,
    /// Repair attempts for queries that fail to execute
    #[arg(long)]
    pub max_repair: Option<usize>,
    /// Per-query execution timeout in seconds.
    #[arg(long)]
    pub exec_timeout: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct LlmFlags {
    /// replay, record or live.
    #[arg(long, value_parser = serde_enum::<Mode>)]
    pub llm_mode: Option<Mode>,
    /// Replay store JSONL.
    #[arg(long)]
    pub replay_store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IntrospectArgs {
    #[command(flatten)]
    pub db: DbArgs,
}

#[derive(Debug, Args)]
pub struct SubschemasArgs {
    #[command(flatten)]
    pub db: DbArgs,
    #[command(flatten)]
    pub subschema: SubschemaFlags,
    /// Only count; skip writing subschemas.jsonl.
    #[arg(long)]
    pub count_only: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub db: DbArgs,
    #[command(flatten)]
    pub subschema: SubschemaFlags,
    #[command(flatten)]
    pub generation: GenerationFlags,
    #[command(flatten)]
    pub llm: LlmFlags,
    /// Reuse finished sub-schemas from the output directory's checkpoint.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[command(flatten)]
    pub db: DbArgs,
    #[command(flatten)]
    pub subschema: SubschemaFlags,
    #[command(flatten)]
    pub generation: GenerationFlags,
    #[command(flatten)]
    pub llm: LlmFlags,
    /// First-round examples; defaults to round1.jsonl in the output directory.
    #[arg(long)]
    pub round1: Option<PathBuf>,
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub db: DbArgs,
    /// Example JSONL, optionally as LABEL=PATH; repeatable.
    #[arg(long)]
    pub input: Vec<String>,
    /// BIRD dev JSON file.
    #[arg(long)]
    pub bird_dev: Option<PathBuf>,
    /// Keep only this database from the BIRD file.
    #[arg(long)]
    pub db_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub db: DbArgs,
    /// Example JSONL to split.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub train: Option<f64>,
    #[arg(long)]
    pub dev: Option<f64>,
    #[arg(long)]
    pub test: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_stratify: bool,
}

#[derive(Debug, Args)]
pub struct LinkArgs {
    #[command(flatten)]
    pub db: DbArgs,
    #[command(flatten)]
    pub llm: LlmFlags,
    /// Example corpus to retrieve from.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Question JSONL with question_id (or id), question, optional evidence and SQL.
    #[arg(long)]
    pub questions: PathBuf,
    /// Linking modes; repeatable or comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub mode: Vec<LinkingMode>,
    #[arg(long)]
    pub all_modes: bool,
    /// Skip the value index.
    #[arg(long)]
    pub no_value_index: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction JSONL with question_id and candidates.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold JSONL with question_id, sql and db_id.
    #[arg(long)]
    pub gold: PathBuf,
    /// One database for every question.
    #[arg(long, conflicts_with = "db_dir")]
    pub db: Option<PathBuf>,
    /// Directory holding <db_id>/<db_id>.sqlite or <db_id>.sqlite.
    #[arg(long)]
    pub db_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-query timeout in seconds.
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    /// Row label of the Markdown report.
    #[arg(long, default_value = "predictions")]
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaSource {
    Subschema,
    Linked,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub db: DbArgs,
    #[command(flatten)]
    pub subschema: SubschemaFlags,
    /// Split JSONL to export.
    #[arg(long)]
    pub input: PathBuf,
    /// T2S or T2SWS.
    #[arg(long, value_parser = serde_enum::<DatasetKind>, default_value = "T2S")]
    pub kind: DatasetKind,
    /// Few-shot demonstrations per prompt.
    #[arg(long, default_value_t = 0)]
    pub fs: usize,
    /// Include reasoning in demonstrations.
    #[arg(long)]
    pub fs_reasoning: bool,
    /// Demonstration corpus; defaults to the input split.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Where T2SWS schema blocks come from: subschema or linked.
    #[arg(long, value_parser = serde_enum::<SchemaSource>, default_value = "subschema")]
    pub schema_source: SchemaSource,
    /// linked-<mode>.jsonl from `link`, for --schema-source linked.
    #[arg(long)]
    pub linked: Option<PathBuf>,
    /// Export all six prompt configurations.
    #[arg(long)]
    pub all_configs: bool,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[command(flatten)]
    pub db: DbArgs,
    #[command(flatten)]
    pub subschema: SubschemaFlags,
    #[command(flatten)]
    pub generation: GenerationFlags,
    /// Store to append recordings to.
    #[arg(long)]
    pub store: PathBuf,
}

/// Resolved inputs shared by every command.
struct Run {
    cfg: PipelineConfig,
    out: PathBuf,
}

fn base_config(cli_config: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    match cli_config {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

impl DbArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(db) = &self.db {
            cfg.db_path = Some(db.clone());
        }
        if let Some(fk) = &self.fk_overrides {
            cfg.fk_overrides = Some(fk.clone());
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
    }
}

impl SubschemaFlags {
    fn apply(&self, cfg: &mut PipelineConfig) {
        let s = &mut cfg.subschema;
        if let Some(tc) = &self.tc {
            s.table_counts_tc = tc.clone();
        }
        if let Some(w) = self.window {
            s.window_w = w;
        }
        if let Some(v) = self.stride {
            s.stride_s = v;
        }
        if let Some(v) = self.seed {
            s.shuffle_seed = v;
        }
        if let Some(v) = self.window_mode {
            s.window_mode = v;
        }
        if let Some(v) = self.joinability {
            s.joinability = v;
        }
    }
}

impl GenerationFlags {
    fn apply(&self, cfg: &mut PipelineConfig) {
        let g = &mut cfg.generation;
        if let Some(v) = self.n_per_level {
            g.n_per_level = v;
        }
        if let Some(v) = &self.levels {
            g.levels = v.clone();
        }
        if let Some(v) = self.min_col_count {
            g.min_col_example_count = v;
        }
        if let Some(v) = self.max_repair {
            g.max_repair_attempts = v;
        }
        if let Some(v) = self.exec_timeout {
            g.exec_timeout_secs = v;
        }
    }
}

impl LlmFlags {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(m) = self.llm_mode {
            cfg.llm.mode = m;
        }
        if let Some(s) = &self.replay_store {
            cfg.llm.replay_store = Some(s.clone());
        }
    }
}

impl Run {
    fn new(cfg: PipelineConfig) -> anyhow::Result<Self> {
        cfg.validate()?;
        let out = cfg.output_dir.clone().ok_or_else(|| anyhow!("no output directory: pass --out or set output_dir"))?;
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self { cfg, out })
    }

    fn db_path(&self) -> anyhow::Result<&Path> {
        let p = self.cfg.db_path.as_deref().ok_or_else(|| anyhow!("no database: pass --db or set db_path"))?;
        if !p.is_file() {
            bail!("database {} does not exist", p.display());
        }
        Ok(p)
    }

    fn schema(&self, manifest: &mut Manifest) -> anyhow::Result<(PathBuf, DatabaseSchema)> {
        let db = self.db_path()?.to_path_buf();
        manifest.input("db", &db)?;
        if let Some(fk) = &self.cfg.fk_overrides {
            manifest.input("fk_overrides", fk)?;
        }
        let schema = introspect_schema(&db, self.cfg.fk_overrides.as_deref())?;
        Ok((db, schema))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Builds the gateway described by the configuration; `None` in replay mode without a store.
pub fn build_gateway(cfg: &PipelineConfig) -> anyhow::Result<Option<Gateway>> {
    let s = &cfg.llm;
    let provider = || -> anyhow::Result<Arc<HttpProvider>> {
        let base = HttpConfig {
            base_url: s.base_url.clone().unwrap_or_else(|| DEFAULT_BASE_URL.to_string()),
            model: s.model.clone().unwrap_or_default(),
            api_key: None,
            timeout_secs: s.timeout_secs,
        };
        let http = HttpConfig::from_env(Some(&base)).filter(|c| !c.model.is_empty());
        let http = http.ok_or_else(|| anyhow!("no model configured: set T2S_MODEL or llm.model"))?;
        Ok(Arc::new(HttpProvider::new(http)))
    };
    let gw = match s.mode {
        Mode::Replay => match &s.replay_store {
            Some(p) => {
                if !p.is_file() {
                    bail!("replay store {} does not exist", p.display());
                }
                Gateway::replay(Arc::new(ReplayStore::load(p)?))
            }
            None => return Ok(None),
        },
        Mode::Record => {
            let p = s.replay_store.as_ref().ok_or_else(|| anyhow!("record mode needs llm.replay_store"))?;
            Gateway::record(provider()?, Arc::new(ReplayStore::load(p)?))
        }
        Mode::Live => Gateway::live(provider()?),
    };
    Ok(Some(gw.with_limits(s.max_in_flight, s.requests_per_second)))
}

fn require_gateway(g: Option<Gateway>) -> anyhow::Result<Gateway> {
    g.ok_or_else(|| anyhow!("this command needs a model: set llm.replay_store for replay, or llm.mode = record/live"))
}

/// Persists recordings when the gateway records into a configured store.
fn save_recordings(gw: &Gateway, cfg: &PipelineConfig) -> anyhow::Result<()> {
    if gw.mode() == Mode::Record {
        if let Some(p) = &cfg.llm.replay_store {
            gw.store().save(p)?;
        }
    }
    Ok(())
}

/// Parses nothing itself: runs an already parsed command line. A supplied gateway
/// replaces the one the configuration would build.
pub fn dispatch(cli: Cli, gateway: Option<Gateway>) -> anyhow::Result<Manifest> {
    let mut cfg = base_config(cli.config.as_deref())?;
    if let Some(j) = cli.jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        cfg.generation.jobs = j;
    }
    let jobs = cli.jobs;
    let run = move || execute(cli.command, cfg, gateway);
    match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new().num_threads(j).build()?.install(run),
        None => run(),
    }
}

fn execute(command: Command, mut cfg: PipelineConfig, gateway: Option<Gateway>) -> anyhow::Result<Manifest> {
    match command {
        Command::Introspect(a) => {
            a.db.apply(&mut cfg);
            cmd_introspect(&Run::new(cfg)?)
        }
        Command::Subschemas(a) => {
            a.db.apply(&mut cfg);
            a.subschema.apply(&mut cfg);
            cmd_subschemas(&Run::new(cfg)?, a.count_only)
        }
        Command::Generate(a) => {
            a.db.apply(&mut cfg);
            a.subschema.apply(&mut cfg);
            a.generation.apply(&mut cfg);
            a.llm.apply(&mut cfg);
            let run = Run::new(cfg)?;
            let gw = require_gateway(match gateway {
                Some(g) => Some(g),
                None => build_gateway(&run.cfg)?,
            })?;
            let m = cmd_generate(&run, &gw, a.resume)?;
            save_recordings(&gw, &run.cfg)?;
            Ok(m)
        }
        Command::Balance(a) => {
            a.db.apply(&mut cfg);
            a.subschema.apply(&mut cfg);
            a.generation.apply(&mut cfg);
            a.llm.apply(&mut cfg);
            let run = Run::new(cfg)?;
            let gw = require_gateway(match gateway {
                Some(g) => Some(g),
                None => build_gateway(&run.cfg)?,
            })?;
            let m = cmd_balance(&run, &gw, a.round1.as_deref(), a.resume)?;
            save_recordings(&gw, &run.cfg)?;
            Ok(m)
        }
        Command::Stats(a) => {
            a.db.apply(&mut cfg);
            cmd_stats(&Run::new(cfg)?, &a)
        }
        Command::Split(a) => {
            a.db.apply(&mut cfg);
            let s = &mut cfg.split;
            for (dst, src) in [(&mut s.train, a.train), (&mut s.dev, a.dev), (&mut s.test, a.test)] {
                if let Some(v) = src {
                    *dst = v;
                }
            }
            if let Some(seed) = a.seed {
                s.seed = seed;
            }
            if a.no_stratify {
                s.stratify = false;
            }
            cmd_split(&Run::new(cfg)?, &a.input)
        }
        Command::Link(a) => {
            a.db.apply(&mut cfg);
            a.llm.apply(&mut cfg);
            if a.no_value_index {
                cfg.linking.value_index = false;
            }
            let modes = if a.all_modes {
                LinkingMode::ALL.to_vec()
            } else if a.mode.is_empty() {
                vec![cfg.linking.mode]
            } else {
                a.mode.clone()
            };
            if let [only] = modes.as_slice() {
                cfg.linking.mode = *only;
            }
            let run = Run::new(cfg)?;
            let gw = match gateway {
                Some(g) => Some(g),
                None if modes.iter().any(|m| m.uses_llm()) => {
                    Some(build_gateway(&run.cfg)?.ok_or_else(|| anyhow!("LLM linking modes need llm.mode live/record or a replay store"))?)
                }
                None => None,
            };
            let m = cmd_link(&run, &a, &modes, gw.as_ref())?;
            if let Some(gw) = &gw {
                save_recordings(gw, &run.cfg)?;
            }
            Ok(m)
        }
        Command::Evaluate(a) => {
            if let Some(out) = &a.out {
                cfg.output_dir = Some(out.clone());
            }
            if let Some(db) = &a.db {
                cfg.db_path = Some(db.clone());
            }
            cmd_evaluate(&Run::new(cfg)?, &a)
        }
        Command::ExportSft(a) => {
            a.db.apply(&mut cfg);
            a.subschema.apply(&mut cfg);
            cmd_export(&Run::new(cfg)?, &a)
        }
        Command::ReplayRecord(a) => {
            a.db.apply(&mut cfg);
            a.subschema.apply(&mut cfg);
            a.generation.apply(&mut cfg);
            cfg.llm.mode = Mode::Record;
            cfg.llm.replay_store = Some(a.store.clone());
            let run = Run::new(cfg)?;
            let gw = require_gateway(match gateway {
                Some(g) => Some(g),
                None => build_gateway(&run.cfg)?,
            })?;
            if gw.mode() != Mode::Record {
                bail!("replay-record needs a recording gateway");
            }
            cmd_record(&run, &gw)
        }
    }
}

fn cmd_introspect(run: &Run) -> anyhow::Result<Manifest> {
    let mut m = Manifest::new("introspect", &run.cfg);
    let (_, schema) = run.schema(&mut m)?;
    let path = run.path("schema.json");
    fs::write(&path, schema.to_json_pretty() + "\n").with_context(|| format!("writing {}", path.display()))?;
    m.count("tables", schema.tables.len());
    m.count("columns", schema.column_count());
    m.count("foreign_keys", schema.foreign_keys.len());
    m.write(&run.out)?;
    Ok(m)
}

fn cmd_subschemas(run: &Run, count_only: bool) -> anyhow::Result<Manifest> {
    let mut m = Manifest::new("subschemas", &run.cfg);
    let (_, schema) = run.schema(&mut m)?;
    let c = &run.cfg.subschema;
    let table_sets = gen_table_level_with(&schema, &c.table_counts_tc, c.joinability).len();
    let total = if count_only {
        count_sub_schemas(&schema, c)?
    } else {
        let subs = construct_sub_schemas(&schema, c)?;
        write_jsonl(&run.path("subschemas.jsonl"), &subs)?;
        subs.len()
    };
    m.count("table_sets", table_sets);
    m.count("sub_schemas", total);
    m.write(&run.out)?;
    Ok(m)
}

fn round_counts(m: &mut Manifest, prefix: &str, raw: usize, kept: usize, diags: &[Diagnostic], resumed: usize) {
    m.count(&format!("{prefix}raw_pairs"), raw);
    m.count(&format!("{prefix}retained"), kept);
    m.count(&format!("{prefix}diagnostics"), diags.len());
    m.count(&format!("{prefix}resumed_subschemas"), resumed);
    let mut by_stage: BTreeMap<&str, usize> = BTreeMap::new();
    for d in diags {
        *by_stage.entry(d.stage.as_str()).or_insert(0) += 1;
    }
    m.count(&format!("{prefix}diagnostics_by_stage"), json!(by_stage));
}

fn open_checkpoint(path: &Path, resume: bool) -> anyhow::Result<Checkpoint> {
    if !resume && path.exists() {
        fs::remove_file(path).with_context(|| format!("removing {}", path.display()))?;
    }
    Ok(Checkpoint::open(path)?)
}

fn cmd_generate(run: &Run, gw: &Gateway, resume: bool) -> anyhow::Result<Manifest> {
    let mut m = Manifest::new("generate", &run.cfg);
    let (db, schema) = run.schema(&mut m)?;
    let subs = construct_sub_schemas(&schema, &run.cfg.subschema)?;
    let ctx = SynthContext { schema: &schema, db_path: &db, gateway: gw, config: &run.cfg.generation };
    let ckpt_path = run.path("checkpoint.jsonl");
    let ckpt = open_checkpoint(&ckpt_path, resume)?;
    let r = run_initial_round(&ctx, &subs, Some(&ckpt))?;
    drop(ckpt);
    let dataset = final_filter(r.examples.clone());
    write_jsonl(&run.path("round1.jsonl"), &r.examples)?;
    write_jsonl(&run.path("diagnostics.jsonl"), &r.diagnostics)?;
    write_jsonl(&run.path("dataset.jsonl"), &dataset)?;
    fs::remove_file(&ckpt_path).with_context(|| format!("removing {}", ckpt_path.display()))?;
    m.count("sub_schemas", subs.len());
    round_counts(&mut m, "", r.raw_pairs, r.examples.len(), &r.diagnostics, r.resumed);
    m.count("dataset", dataset.len());
    m.write(&run.out)?;
    Ok(m)
}

fn cmd_balance(run: &Run, gw: &Gateway, round1: Option<&Path>, resume: bool) -> anyhow::Result<Manifest> {
    let mut m = Manifest::new("balance", &run.cfg);
    let (db, schema) = run.schema(&mut m)?;
    let r1_path = round1.map(Path::to_path_buf).unwrap_or_else(|| run.path("round1.jsonl"));
    m.input("round1", &r1_path)?;
    let first: Vec<T2SExample> = read_jsonl(&r1_path)?;
    let subs = construct_sub_schemas(&schema, &run.cfg.subschema)?;
    let ctx = SynthContext { schema: &schema, db_path: &db, gateway: gw, config: &run.cfg.generation };
    let ckpt_path = run.path("checkpoint-balance.jsonl");
    let ckpt = open_checkpoint(&ckpt_path, resume)?;
    let b = run_balance_round(&ctx, &subs, &first, Some(&ckpt))?;
    drop(ckpt);
    let mut all = first.clone();
    all.extend(b.round.examples.iter().cloned());
    let dataset = final_filter(all);
    write_jsonl(&run.path("round2.jsonl"), &b.round.examples)?;
    write_jsonl(&run.path("diagnostics-balance.jsonl"), &b.round.diagnostics)?;
    write_jsonl(&run.path("dataset.jsonl"), &dataset)?;
    write_json(
        &run.path("focus.json"),
        &json!({
            "focus_columns": b.focus_columns,
            "focus_subschemas": b.focus_subschemas,
            "uncoverable": b.uncoverable,
        }),
    )?;
    fs::remove_file(&ckpt_path).with_context(|| format!("removing {}", ckpt_path.display()))?;
    let labelled: Vec<LabelledSql> = dataset.iter().map(LabelledSql::from).collect();
    let stats = compute_stats(&labelled, &schema);
    m.count("round1_examples", first.len());
    m.count("focus_columns", b.focus_columns.len());
    m.count("focus_subschemas", b.focus_subschemas.len());
    m.count("uncoverable_columns", b.uncoverable.len());
    round_counts(&mut m, "", b.round.raw_pairs, b.round.examples.len(), &b.round.diagnostics, b.round.resumed);
    m.count("dataset", dataset.len());
    m.count("unused_columns", stats.unused_count);
    m.write(&run.out)?;
    Ok(m)
}

fn cmd_record(run: &Run, gw: &Gateway) -> anyhow::Result<Manifest> {
    let store = run.cfg.llm.replay_store.clone().expect("set by caller");
    let gen = cmd_generate(run, gw, false)?;
    gw.store().rewind();
    let bal = cmd_balance(run, gw, None, false)?;
    gw.store().save(&store)?;
    let mut m = Manifest::new("replay-record", &run.cfg);
    m.input("db", run.db_path()?)?;
    m.count("recorded_responses", gw.store().len());
    m.count("provider_calls", gw.provider_calls());
    m.count("generate", json!(gen.counts));
    m.count("balance", json!(bal.counts));
    m.write(&run.out)?;
    Ok(m)
}

fn cmd_stats(run: &Run, a: &StatsArgs) -> anyhow::Result<Manifest> {
    let mut m = Manifest::new("stats", &run.cfg);
    let (_, schema) = run.schema(&mut m)?;
    let mut sets: Vec<(String, Vec<LabelledSql>)> = Vec::new();
    for spec in &a.input {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                (p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.clone()), p)
            }
        };
        m.input(&format!("input:{label}"), &path)?;
        let examples: Vec<T2SExample> = read_jsonl(&path)?;
        sets.push((label, examples.iter().map(LabelledSql::from).collect()));
    }
    if let Some(path) = &a.bird_dev {
        m.input("bird_dev", path)?;
        let recs = load_bird_dev(path, a.db_id.as_deref())?;
        sets.push(("BIRD-Dev".to_string(), recs.iter().map(LabelledSql::from).collect()));
    }
    if sets.is_empty() {
        bail!("nothing to analyse: pass --input or --bird-dev");
    }
    let reports: Vec<(String, StatsReport)> = sets.iter().map(|(l, items)| (l.clone(), compute_stats(items, &schema))).collect();
    let rows: Vec<(String, &StatsReport)> = reports.iter().map(|(l, r)| (l.clone(), r)).collect();
    let json_map: BTreeMap<&str, &StatsReport> = reports.iter().map(|(l, r)| (l.as_str(), r)).collect();
    write_json(&run.path("stats.json"), &json_map)?;
    let md = format!(
        "## Level distribution\n\n{}\n## Unused columns\n\n{}\n## Joins and aggregation by level\n\n{}",
        render_level_table(&rows),
        render_unused_table(&rows),
        render_level_features(&rows)
    );
    fs::write(run.path("stats.md"), md)?;
    for (label, r) in &reports {
        m.count(
            label,
            json!({
                "total": r.total,
                "unparseable": r.unparseable,
                "window_queries": r.window_queries,
                "unused_count": r.unused_count,
                "unused_rate": (r.unused_rate * 100.0).round() / 100.0,
            }),
        );
    }
    m.write(&run.out)?;
    Ok(m)
}

fn cmd_split(run: &Run, input: &Path) -> anyhow::Result<Manifest> {
    let mut m = Manifest::new("split", &run.cfg);
    m.input("input", input)?;
    let examples: Vec<T2SExample> = read_jsonl(input)?;
    let schema = match &run.cfg.db_path {
        Some(_) => Some(run.schema(&mut m)?.1),
        None => None,
    };
    let outcome = split_dataset(&examples, &run.cfg.split, schema.as_ref())?;
    for s in &outcome.splits {
        write_jsonl(&run.path(&format!("{}.jsonl", s.name.name())), &s.examples)?;
        m.count(s.name.name(), s.examples.len());
    }
    m.warnings = outcome.warnings;
    m.write(&run.out)?;
    Ok(m)
}

/// A question to link; accepts synthetic examples and BIRD-style records.
#[derive(Debug, Clone, Deserialize)]
pub struct LinkQuestion {
    #[serde(alias = "id")]
    pub question_id: Value,
    pub question: String,
    #[serde(default, alias = "hint")]
    pub evidence: String,
    #[serde(default, alias = "SQL")]
    pub sql: Option<String>,
}

fn id_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// One line of a `link` output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub question_id: String,
    pub outcome: LinkOutcome,
    pub linked: LinkedSchema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<LinkingGold>,
}

pub fn linked_file_name(mode: LinkingMode) -> String {
    format!("linked-{}.jsonl", mode.name())
}

fn cmd_link(run: &Run, a: &LinkArgs, modes: &[LinkingMode], gw: Option<&Gateway>) -> anyhow::Result<Manifest> {
    let mut m = Manifest::new("link", &run.cfg);
    let (db, schema) = run.schema(&mut m)?;
    m.input("corpus", &a.corpus)?;
    m.input("questions", &a.questions)?;
    let corpus: Vec<T2SExample> = read_jsonl(&a.corpus)?;
    let questions: Vec<LinkQuestion> = read_jsonl(&a.questions)?;
    let bm25 = build_example_index(&corpus, run.cfg.linking.bm25)?;
    let vectors = if modes.iter().any(|m| m.uses_vectors()) {
        Some(VectorIndex::from_examples(&corpus, HashingEmbedder::default())?)
    } else {
        None
    };
    let values = if run.cfg.linking.value_index { Some(build_value_index(&db, &schema, run.cfg.linking.lsh)?) } else { None };
    let ctx = LinkContext {
        schema: &schema,
        corpus: &corpus,
        bm25: &bm25,
        vectors: vectors.as_ref(),
        values: values.as_ref(),
        gateway: gw,
    };
    let golds: Vec<Option<LinkingGold>> = questions
        .iter()
        .map(|q| q.sql.as_deref().and_then(|s| LinkingGold::from_sql(s, &schema).ok()))
        .collect();
    let unparsed = questions.iter().zip(&golds).filter(|(q, g)| q.sql.is_some() && g.is_none()).count();
    if unparsed > 0 {
        m.warnings.push(format!("{unparsed} gold SQL queries could not be analysed and are left out of the metrics"));
    }
    let mut metrics = BTreeMap::new();
    for &mode in modes {
        let records: Vec<LinkRecord> = questions
            .par_iter()
            .zip(golds.par_iter())
            .map(|(q, g)| {
                let outcome = link_question(&ctx, &q.question, &q.evidence, mode)?;
                Ok(LinkRecord {
                    question_id: id_string(&q.question_id),
                    linked: outcome.filtered.to_linked(),
                    outcome,
                    gold: g.clone(),
                })
            })
            .collect::<anyhow::Result<_>>()?;
        write_jsonl(&run.path(&linked_file_name(mode)), &records)?;
        let scored: Vec<(LinkedSchema, LinkingGold)> =
            records.iter().filter_map(|r| r.gold.clone().map(|g| (r.linked.clone(), g))).collect();
        metrics.insert(mode.name().to_string(), linking_metrics(&scored));
    }
    write_json(&run.path("metrics.json"), &metrics)?;
    m.count("questions", questions.len());
    m.count("corpus", corpus.len());
    m.count("value_entries", values.as_ref().map_or(0, |v| v.len()));
    m.count("metrics", json!(metrics));
    m.write(&run.out)?;
    Ok(m)
}

fn cmd_evaluate(run: &Run, a: &EvaluateArgs) -> anyhow::Result<Manifest> {
    let mut m = Manifest::new("evaluate", &run.cfg);
    m.input("predictions", &a.pred)?;
    m.input("gold", &a.gold)?;
    let preds: Vec<PredictionRecord> = read_jsonl(&a.pred)?;
    let golds: Vec<GoldRecord> = read_jsonl(&a.gold)?;
    let single = run.cfg.db_path.clone();
    if let Some(db) = &single {
        m.input("db", db)?;
    }
    let dir = a.db_dir.clone();
    if single.is_none() && dir.is_none() {
        bail!("pass --db or --db-dir");
    }
    let resolve = move |db_id: &str| -> Option<PathBuf> {
        if let Some(p) = &single {
            return Some(p.clone());
        }
        let d = dir.as_ref()?;
        [d.join(db_id).join(format!("{db_id}.sqlite")), d.join(format!("{db_id}.sqlite"))].into_iter().find(|p| p.is_file())
    };
    if a.timeout.is_nan() || a.timeout <= 0.0 {
        bail!("--timeout must be positive");
    }
    let outcome = evaluate_batch(&preds, &golds, &resolve, Duration::from_secs_f64(a.timeout));
    write_jsonl(&run.path("scores.jsonl"), &outcome.results)?;
    let failures: Vec<String> = outcome.failures.iter().map(ToString::to_string).collect();
    write_json(
        &run.path("report.json"),
        &json!({
            "aggregate": outcome.aggregate,
            "failures": failures,
            "approximate_questions": outcome.results.iter().filter(|r| r.approximate).count(),
            "truncated_questions": outcome.results.iter().filter(|r| r.truncated).count(),
        }),
    )?;
    fs::write(run.path("report.md"), render_bounds_table(&[(a.label.clone(), outcome.aggregate)]))?;
    m.count("questions", outcome.results.len());
    m.count("failures", failures.len());
    m.count("aggregate", json!(outcome.aggregate));
    m.warnings = failures;
    m.write(&run.out)?;
    Ok(m)
}

fn cmd_export(run: &Run, a: &ExportArgs) -> anyhow::Result<Manifest> {
    let mut m = Manifest::new("export-sft", &run.cfg);
    m.input("input", &a.input)?;
    let split: Vec<T2SExample> = read_jsonl(&a.input)?;
    let configs = if a.all_configs {
        SftConfig::all()
    } else {
        vec![SftConfig { dataset_kind: a.kind, fs_count: a.fs, fs_reasoning: a.fs_reasoning && a.fs > 0 }]
    };
    let needs_schema = configs.iter().any(|c| c.dataset_kind == DatasetKind::T2SWS);
    let schema_text: HashMap<String, String> = if !needs_schema {
        HashMap::new()
    } else {
        let (_, schema) = run.schema(&mut m)?;
        match a.schema_source {
            SchemaSource::Subschema => construct_sub_schemas(&schema, &run.cfg.subschema)?
                .into_iter()
                .map(|s| {
                    let text = s.render(&schema);
                    (s.id, text)
                })
                .collect(),
            SchemaSource::Linked => {
                let path = a.linked.as_ref().ok_or_else(|| anyhow!("--schema-source linked needs --linked"))?;
                m.input("linked", path)?;
                let recs: Vec<LinkRecord> = read_jsonl(path)?;
                recs.into_iter().map(|r| (r.question_id, FilteredSchema::render(&r.outcome.filtered, &schema))).collect()
            }
        }
    };
    let source = a.schema_source;
    let schema_for = |e: &T2SExample| -> Option<String> {
        match source {
            SchemaSource::Subschema => schema_text.get(&e.subschema_id).cloned(),
            SchemaSource::Linked => schema_text.get(&e.id).cloned(),
        }
    };
    let pool = if configs.iter().any(|c| c.fs_count > 0) {
        let corpus: Vec<T2SExample> = match &a.pool {
            Some(p) => {
                m.input("pool", p)?;
                read_jsonl(p)?
            }
            None => split.clone(),
        };
        Some(FewShotPool::new(build_example_index(&corpus, run.cfg.linking.bm25)?, &corpus))
    } else {
        None
    };
    for c in &configs {
        let records = export_sft(&split, c, &schema_for, pool.as_ref())?;
        let name = format!("sft-{}.jsonl", c.label());
        dataset::write_jsonl(&run.path(&name), &records)?;
        m.count(&c.label(), records.len());
    }
    m.write(&run.out)?;
    Ok(m)
}
