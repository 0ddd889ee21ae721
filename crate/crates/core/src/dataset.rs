//! Dataset persistence, coverage-aware splitting, statistics reports, SFT export
//! and the BIRD dev-file loader.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linking::Bm25Index;
use crate::llm::parse::format_tagged;
use crate::llm::template::{self, bindings, render_prompt};
use crate::llm::LlmError;
use crate::rng::SplitMix64;
use crate::schema::{ColumnRef, DatabaseSchema};
use crate::sql;
use crate::synthesis::T2SExample;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {message}")]
    Line { path: PathBuf, line: usize, message: String },
    #[error("{0}: {1}")]
    Json(PathBuf, String),
    #[error("invalid split ratios: {0}")]
    Ratios(String),
    #[error("cannot split an empty dataset")]
    Empty,
    #[error("no filtered schema for examples: {}", .0.join(", "))]
    MissingSchema(Vec<String>),
    #[error("few-shot demonstrations requested without a pool")]
    MissingPool,
    #[error(transparent)]
    Llm(#[from] LlmError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Line { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| DatasetError::Json(path.to_path_buf(), e.to_string()))?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| DatasetError::Json(path.to_path_buf(), e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// One question of the BIRD dev file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirdRecord {
    #[serde(default)]
    pub question_id: u64,
    pub db_id: String,
    pub question: String,
    #[serde(default)]
    pub evidence: String,
    #[serde(rename = "SQL")]
    pub sql: String,
    #[serde(default)]
    pub difficulty: String,
}

/// Loads the BIRD dev JSON array, optionally keeping one database.
pub fn load_bird_dev(path: &Path, db_id: Option<&str>) -> Result<Vec<BirdRecord>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let all: Vec<BirdRecord> = serde_json::from_str(&text).map_err(|e| DatasetError::Json(path.to_path_buf(), e.to_string()))?;
    Ok(all.into_iter().filter(|r| db_id.is_none_or(|d| r.db_id == d)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub examples: Vec<T2SExample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
    pub seed: u64,
    pub stratify: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train: 0.94, dev: 0.03, test: 0.03, seed: 42, stratify: true }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let r = [self.train, self.dev, self.test];
        if r.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(DatasetError::Ratios("each ratio must lie in [0, 1]".into()));
        }
        if ((r.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Ratios(format!("ratios sum to {}, not 1", r.iter().sum::<f64>())));
        }
        Ok(())
    }

    /// Split sizes: dev and test are rounded, train takes the rest.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let dev = (((n as f64) * self.dev).round() as usize).min(n);
        let test = (((n as f64) * self.test).round() as usize).min(n - dev);
        [n - dev - test, dev, test]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub splits: Vec<DatasetSplit>,
    pub warnings: Vec<String>,
}

/// Splits into train/dev/test. A greedy pass first gives each split one example per
/// schema column where possible; the rest is filled by a seeded, difficulty-stratified
/// systematic sample. Columns with fewer examples than splits produce a warning.
pub fn split_dataset(
    examples: &[T2SExample],
    config: &SplitConfig,
    schema: Option<&DatabaseSchema>,
) -> Result<SplitOutcome, DatasetError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n = examples.len();
    let sizes = config.sizes(n);
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    let mut warnings = Vec::new();

    if let Some(schema) = schema {
        let uses: Vec<BTreeSet<ColumnRef>> = examples
            .par_iter()
            .map(|e| sql::extract_schema_elements(&e.sql, schema).map(|p| p.referenced).unwrap_or_default())
            .collect();
        let mut support: BTreeMap<&ColumnRef, usize> = BTreeMap::new();
        for u in &uses {
            for c in u {
                *support.entry(c).or_insert(0) += 1;
            }
        }
        for c in schema.all_columns() {
            let k = support.get(&c).copied().unwrap_or(0);
            if k < 3 {
                warnings.push(format!("column {c} appears in {k} example(s); it cannot be covered in every split"));
            }
        }
        // Smallest splits first so scarce columns reach them.
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by_key(|&s| (sizes[s], s));
        for s in order {
            let mut uncovered: BTreeSet<&ColumnRef> = support.keys().copied().collect();
            let mut filled = 0;
            while filled < sizes[s] && !uncovered.is_empty() {
                let mut best: Option<(usize, usize)> = None;
                for (i, u) in uses.iter().enumerate() {
                    if assigned[i].is_some() {
                        continue;
                    }
                    let gain = u.iter().filter(|c| uncovered.contains(c)).count();
                    if gain > 0 && best.is_none_or(|(_, g)| gain > g) {
                        best = Some((i, gain));
                    }
                }
                let Some((i, _)) = best else { break };
                assigned[i] = Some(s);
                filled += 1;
                for c in &uses[i] {
                    uncovered.remove(c);
                }
            }
        }
    }

    let mut counts = [0usize; 3];
    for s in assigned.iter().flatten() {
        counts[*s] += 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| assigned[i].is_none()).collect();
    let sequence = stratified_order(examples, &rest, config);
    let mut it = sequence.into_iter();
    for s in [1, 2, 0] {
        while counts[s] < sizes[s] {
            let Some(i) = it.next() else { break };
            assigned[i] = Some(s);
            counts[s] += 1;
        }
    }
    for i in it {
        assigned[i] = Some(0);
    }

    let mut splits: Vec<DatasetSplit> = SplitName::ALL.iter().map(|&name| DatasetSplit { name, examples: Vec::new() }).collect();
    for (i, s) in assigned.into_iter().enumerate() {
        splits[s.expect("every example assigned")].examples.push(examples[i].clone());
    }
    Ok(SplitOutcome { splits, warnings })
}

/// Shuffles each difficulty stratum, then interleaves the strata by relative position
/// so any prefix holds the strata in proportion.
fn stratified_order(examples: &[T2SExample], idx: &[usize], config: &SplitConfig) -> Vec<usize> {
    let mut rng = SplitMix64::new(config.seed);
    if !config.stratify {
        let mut v = idx.to_vec();
        rng.shuffle(&mut v);
        return v;
    }
    let mut strata: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for &i in idx {
        strata.entry(examples[i].difficulty).or_default().push(i);
    }
    let mut keyed = Vec::with_capacity(idx.len());
    for (_, mut members) in strata {
        rng.shuffle(&mut members);
        let len = members.len() as f64;
        for (k, i) in members.into_iter().enumerate() {
            keyed.push(((k as f64 + 0.5) / len, i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// A query with its difficulty label, the unit of the statistics report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelledSql {
    pub sql: String,
    pub difficulty: String,
}

impl From<&T2SExample> for LabelledSql {
    fn from(e: &T2SExample) -> Self {
        Self { sql: e.sql.clone(), difficulty: e.difficulty.name().to_string() }
    }
}

impl From<&BirdRecord> for LabelledSql {
    fn from(r: &BirdRecord) -> Self {
        Self { sql: r.sql.clone(), difficulty: r.difficulty.clone() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub count: usize,
    pub mean_joins: f64,
    /// Percentage of the level's parseable queries that aggregate.
    pub aggregation_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub empty: bool,
    pub total: usize,
    pub unparseable: usize,
    /// Keyed by difficulty label.
    pub levels: BTreeMap<String, LevelStats>,
    /// Queries containing a window function.
    pub window_queries: usize,
    pub total_columns: usize,
    pub unused_columns: Vec<ColumnRef>,
    pub unused_count: usize,
    pub unused_rate: f64,
    /// Number of queries using each column, keyed `table.column`.
    pub column_usage: BTreeMap<String, usize>,
    /// Number of queries per join count.
    pub join_histogram: BTreeMap<usize, usize>,
}

pub fn compute_stats(items: &[LabelledSql], schema: &DatabaseSchema) -> StatsReport {
    let all = schema.all_columns();
    let mut report = StatsReport { total: items.len(), empty: items.is_empty(), total_columns: all.len(), ..Default::default() };
    let mut usage: BTreeMap<ColumnRef, usize> = all.iter().map(|c| (c.clone(), 0)).collect();
    let analysed: Vec<Option<(sql::ParsedQuery, sql::Features)>> = items
        .par_iter()
        .map(|it| {
            let p = sql::extract_schema_elements(&it.sql, schema).ok()?;
            let f = sql::classify_features(&it.sql).ok()?;
            Some((p, f))
        })
        .collect();
    let mut sums: BTreeMap<String, (usize, usize, usize, usize)> = BTreeMap::new();
    for (it, a) in items.iter().zip(analysed) {
        let e = sums.entry(it.difficulty.clone()).or_default();
        e.0 += 1;
        let Some((p, f)) = a else {
            report.unparseable += 1;
            continue;
        };
        e.1 += 1;
        e.2 += f.join_count;
        e.3 += usize::from(f.has_aggregation);
        report.window_queries += usize::from(f.has_window);
        *report.join_histogram.entry(f.join_count).or_insert(0) += 1;
        for c in p.referenced {
            *usage.entry(c).or_insert(0) += 1;
        }
    }
    for (label, (count, parsed, joins, aggs)) in sums {
        let (mean_joins, aggregation_rate) = if parsed == 0 {
            (0.0, 0.0)
        } else {
            (joins as f64 / parsed as f64, 100.0 * aggs as f64 / parsed as f64)
        };
        report.levels.insert(label, LevelStats { count, mean_joins, aggregation_rate });
    }
    report.unused_columns = usage.iter().filter(|(_, &n)| n == 0).map(|(c, _)| c.clone()).collect();
    report.unused_count = report.unused_columns.len();
    report.unused_rate = if all.is_empty() { 0.0 } else { 100.0 * report.unused_count as f64 / all.len() as f64 };
    report.column_usage = usage.into_iter().map(|(c, n)| (c.to_string(), n)).collect();
    report
}

fn level_count(r: &StatsReport, label: &str) -> usize {
    r.levels.get(label).map_or(0, |l| l.count)
}

/// Question counts per level; the Window column counts queries with an OVER clause.
pub fn render_level_table(rows: &[(String, &StatsReport)]) -> String {
    let mut s = String::from("| Dataset | Overall | Simple | Moderate | Challenging | Window |\n|---|---:|---:|---:|---:|---:|\n");
    for (name, r) in rows {
        s.push_str(&format!(
            "| {name} | {} | {} | {} | {} | {} |\n",
            r.total,
            level_count(r, "simple"),
            level_count(r, "moderate"),
            level_count(r, "challenging"),
            r.window_queries
        ));
    }
    s
}

pub fn render_unused_table(rows: &[(String, &StatsReport)]) -> String {
    let mut s = String::from("| Dataset | Unused Column Count | Unused Column Rate (%) |\n|---|---:|---:|\n");
    for (name, r) in rows {
        s.push_str(&format!("| {name} | {} | {:.2} |\n", r.unused_count, r.unused_rate));
    }
    s
}

pub fn render_level_features(rows: &[(String, &StatsReport)]) -> String {
    let mut s = String::from("| Dataset | Level | Count | Mean Joins | Aggregation Rate (%) |\n|---|---|---:|---:|---:|\n");
    for (name, r) in rows {
        for (label, l) in &r.levels {
            s.push_str(&format!("| {name} | {label} | {} | {:.3} | {:.2} |\n", l.count, l.mean_joins, l.aggregation_rate));
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetKind {
    #[serde(rename = "T2S")]
    T2S,
    #[serde(rename = "T2SWS")]
    T2SWS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SftConfig {
    pub dataset_kind: DatasetKind,
    pub fs_count: usize,
    pub fs_reasoning: bool,
}

impl SftConfig {
    /// The six distinct prompt layouts; reasoning is irrelevant without few-shots.
    pub fn all() -> Vec<SftConfig> {
        let mut v = Vec::new();
        for kind in [DatasetKind::T2S, DatasetKind::T2SWS] {
            v.push(SftConfig { dataset_kind: kind, fs_count: 0, fs_reasoning: false });
            for r in [false, true] {
                v.push(SftConfig { dataset_kind: kind, fs_count: 6, fs_reasoning: r });
            }
        }
        v
    }

    pub fn label(&self) -> String {
        let kind = match self.dataset_kind {
            DatasetKind::T2S => "t2s",
            DatasetKind::T2SWS => "t2sws",
        };
        format!("{kind}-fs{}-{}", self.fs_count, if self.fs_reasoning { "r" } else { "nr" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub id: String,
    pub prompt: String,
    pub completion: String,
    pub config: SftConfig,
}

pub const SCHEMA_HEADER: &str = "### Database Schema";
pub const EXAMPLE_HEADER: &str = "### Example";

/// Demonstrations for a prompt: BM25 neighbours of the question, never the example
/// itself, padded in id order when too few documents match.
pub struct FewShotPool {
    index: Bm25Index,
    by_id: HashMap<String, T2SExample>,
    ids: Vec<String>,
}

impl FewShotPool {
    pub fn new(index: Bm25Index, corpus: &[T2SExample]) -> Self {
        let mut ids: Vec<String> = corpus.iter().map(|e| e.id.clone()).collect();
        ids.sort();
        Self { index, by_id: corpus.iter().map(|e| (e.id.clone(), e.clone())).collect(), ids }
    }

    pub fn select(&self, example: &T2SExample, k: usize) -> Vec<&T2SExample> {
        let mut chosen: Vec<String> = self
            .index
            .search(&example.question, k + 1)
            .into_iter()
            .map(|(id, _)| id)
            .filter(|id| *id != example.id && self.by_id.contains_key(id))
            .take(k)
            .collect();
        for id in &self.ids {
            if chosen.len() >= k {
                break;
            }
            if *id != example.id && !chosen.contains(id) {
                chosen.push(id.clone());
            }
        }
        chosen.iter().filter_map(|id| self.by_id.get(id)).collect()
    }
}

fn completion(e: &T2SExample) -> String {
    match &e.reasoning {
        Some(r) => format!("<reasoning>{}</reasoning><answer>{}</answer>", r.trim(), e.sql.trim()),
        None => format!("<answer>{}</answer>", e.sql.trim()),
    }
}

fn demonstration(i: usize, e: &T2SExample, with_reasoning: bool) -> String {
    let body = match (&e.reasoning, with_reasoning) {
        (Some(r), true) => format_tagged(r.trim(), e.sql.trim()),
        (None, true) => format_tagged("", e.sql.trim()),
        _ => format!("<answer>\n{}\n</answer>", e.sql.trim()),
    };
    format!("{EXAMPLE_HEADER} {}\nQuestion: {}\n{body}\n", i + 1, e.question.trim())
}

/// Builds SFT records from the candidate-generation template. `schema_for` supplies
/// the filtered schema text of an example for T2SWS.
pub fn export_sft(
    split: &[T2SExample],
    config: &SftConfig,
    schema_for: &(dyn Fn(&T2SExample) -> Option<String> + Sync),
    pool: Option<&FewShotPool>,
) -> Result<Vec<SftRecord>, DatasetError> {
    if config.fs_count > 0 && pool.is_none() {
        return Err(DatasetError::MissingPool);
    }
    if config.dataset_kind == DatasetKind::T2SWS {
        let missing: Vec<String> = split.iter().filter(|e| schema_for(e).is_none()).map(|e| e.id.clone()).collect();
        if !missing.is_empty() {
            return Err(DatasetError::MissingSchema(missing));
        }
    }
    split
        .par_iter()
        .map(|e| {
            let mut aug = String::new();
            if config.dataset_kind == DatasetKind::T2SWS {
                let schema = schema_for(e).expect("checked above");
                aug.push_str(&format!("{SCHEMA_HEADER}\n{}\n", schema.trim_end()));
            }
            if let Some(pool) = pool.filter(|_| config.fs_count > 0) {
                for (i, d) in pool.select(e, config.fs_count).into_iter().enumerate() {
                    aug.push('\n');
                    aug.push_str(&demonstration(i, d, config.fs_reasoning));
                }
            }
            let b = bindings([("DB_ID", e.db_id.as_str()), ("AUGMENTATION", aug.trim_end()), ("QUESTION", e.question.as_str())]);
            Ok(SftRecord { id: e.id.clone(), prompt: render_prompt(template::SQL_GENERATION, &b)?, completion: completion(e), config: *config })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linking::{build_example_index, Bm25Params};
    use crate::llm::parse::parse_tagged;
    use crate::schema::{ColumnDef, TableDef};
    use crate::synthesis::{Level, Round};

    fn ex(id: usize, sql: &str, level: Level) -> T2SExample {
        T2SExample {
            id: format!("e{id:03}"),
            db_id: "d".into(),
            subschema_id: "s".into(),
            sql: sql.into(),
            question: format!("question number {id} about things"),
            difficulty: level,
            reasoning: Some(format!("step one for {id}\n{sql}")),
            judge_verdict: true,
            executable: true,
            repaired: false,
            round: Round::Initial,
            extra: Default::default(),
        }
    }

    fn schema() -> DatabaseSchema {
        DatabaseSchema::new(
            "d",
            vec![TableDef {
                name: "t".into(),
                columns: ["a", "b", "c"].iter().map(|c| ColumnDef::new(*c, "TEXT")).collect(),
                primary_key: vec![],
            }],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn jsonl_round_trip_keeps_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let mut e = ex(1, "SELECT a FROM t", Level::Simple);
        e.extra.insert("source".into(), serde_json::json!({"k": [1, 2]}));
        let items: Vec<T2SExample> = (0..1000).map(|i| if i == 0 { e.clone() } else { ex(i, "SELECT b FROM t", Level::Moderate) }).collect();
        write_jsonl(&path, &items).unwrap();
        let back: Vec<T2SExample> = read_jsonl(&path).unwrap();
        assert_eq!(back, items);
        assert!(fs::read_to_string(&path).unwrap().lines().next().unwrap().contains("\"source\""));
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"a\":1}\n{oops\n").unwrap();
        let err = read_jsonl::<serde_json::Value>(&path).unwrap_err();
        assert!(matches!(err, DatasetError::Line { line: 2, .. }), "{err}");
        fs::write(&path, "").unwrap();
        assert!(read_jsonl::<serde_json::Value>(&path).unwrap().is_empty());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<T2SExample> = (0..100).map(|i| ex(i, "SELECT a FROM t", Level::ALL[i % 4])).collect();
        let cfg = SplitConfig::default();
        let a = split_dataset(&items, &cfg, None).unwrap();
        let sizes: Vec<usize> = a.splits.iter().map(|s| s.examples.len()).collect();
        assert_eq!(sizes, vec![94, 3, 3]);
        assert_eq!(a, split_dataset(&items, &cfg, None).unwrap());
        let mut ids: Vec<String> = a.splits.iter().flat_map(|s| s.examples.iter().map(|e| e.id.clone())).collect();
        ids.sort();
        assert_eq!(ids, items.iter().map(|e| e.id.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn split_covers_columns_in_every_split() {
        let s = schema();
        let mut items: Vec<T2SExample> = (0..90).map(|i| ex(i, "SELECT a FROM t", Level::Simple)).collect();
        for i in 90..93 {
            items.push(ex(i, "SELECT b, c FROM t", Level::Moderate));
        }
        let out = split_dataset(&items, &SplitConfig::default(), Some(&s)).unwrap();
        for split in &out.splits {
            let labelled: Vec<LabelledSql> = split.examples.iter().map(LabelledSql::from).collect();
            assert_eq!(compute_stats(&labelled, &s).unused_count, 0, "{:?}", split.name);
        }
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn stats_mean_joins() {
        let s = DatabaseSchema::new(
            "d",
            vec![
                TableDef { name: "t".into(), columns: vec![ColumnDef::new("a", "INT")], primary_key: vec![] },
                TableDef { name: "u".into(), columns: vec![ColumnDef::new("a", "INT")], primary_key: vec![] },
                TableDef { name: "v".into(), columns: vec![ColumnDef::new("a", "INT")], primary_key: vec![] },
            ],
            vec![],
        )
        .unwrap();
        let items = vec![
            LabelledSql { sql: "SELECT a FROM t".into(), difficulty: "simple".into() },
            LabelledSql { sql: "SELECT COUNT(a) FROM u".into(), difficulty: "simple".into() },
            LabelledSql { sql: "SELECT t.a FROM t JOIN u ON t.a = u.a JOIN v ON v.a = u.a".into(), difficulty: "simple".into() },
        ];
        let r = compute_stats(&items, &s);
        let l = &r.levels["simple"];
        assert!((l.mean_joins - 2.0 / 3.0).abs() < 1e-12);
        assert!((l.aggregation_rate - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(r.unused_count, 0);
        let empty = compute_stats(&[], &s);
        assert!(empty.empty);
        assert_eq!(empty.unused_count, 3);
    }

    #[test]
    fn export_structure() {
        let corpus: Vec<T2SExample> = (0..10).map(|i| ex(i, "SELECT a FROM t", Level::Simple)).collect();
        let pool = FewShotPool::new(build_example_index(&corpus, Bm25Params::default()).unwrap(), &corpus);
        let schema_for = |_: &T2SExample| Some("CREATE TABLE t (a TEXT);".to_string());
        for cfg in SftConfig::all() {
            let recs = export_sft(&corpus, &cfg, &schema_for, Some(&pool)).unwrap();
            for (r, e) in recs.iter().zip(&corpus) {
                assert_eq!(r.prompt.contains(SCHEMA_HEADER), cfg.dataset_kind == DatasetKind::T2SWS);
                assert_eq!(r.prompt.matches(EXAMPLE_HEADER).count(), cfg.fs_count);
                assert_eq!(parse_tagged(&r.completion).unwrap().answer, e.sql);
            }
        }
        let none = |_: &T2SExample| None;
        let cfg = SftConfig { dataset_kind: DatasetKind::T2SWS, fs_count: 0, fs_reasoning: false };
        assert!(matches!(export_sft(&corpus, &cfg, &none, None), Err(DatasetError::MissingSchema(_))));
    }
}
