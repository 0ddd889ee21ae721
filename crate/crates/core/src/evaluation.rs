//! Execution accuracy, soft F1, candidate-set bounds and schema-linking metrics.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{ColumnRef, DatabaseSchema};
use crate::sql::{self, Cell, ResultTable, SqlError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold query for `{question_id}` failed: {source}")]
    Gold { question_id: String, source: SqlError },
    #[error("no gold record for question `{0}`")]
    MissingGold(String),
    #[error("no database for `{0}`")]
    UnknownDatabase(String),
}

pub const REL_TOLERANCE: f64 = 1e-6;
pub const ABS_TOLERANCE: f64 = 1e-9;

/// Above this many candidate row pairs the optimal assignment gives way to greedy matching.
pub const OPTIMAL_PAIR_LIMIT: usize = 250_000;
/// Above this many row pairs even greedy matching is skipped and leftover rows stay unmatched.
pub const GREEDY_PAIR_LIMIT: usize = 25_000_000;

fn numbers_equal(a: f64, b: f64) -> bool {
    if a == b {
        return true;
    }
    let diff = (a - b).abs();
    diff <= ABS_TOLERANCE || diff <= REL_TOLERANCE * a.abs().max(b.abs())
}

/// Cell equality: numbers within tolerance, text ignoring trailing whitespace,
/// null equal only to null.
pub fn cells_equal(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Cell::Null, Cell::Null) => true,
        (Cell::Text(x), Cell::Text(y)) => x.trim_end() == y.trim_end(),
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => numbers_equal(x, y),
            _ => false,
        },
    }
}

fn rank(c: &Cell) -> u8 {
    match c {
        Cell::Null => 0,
        Cell::Int(_) | Cell::Real(_) => 1,
        Cell::Text(_) => 2,
    }
}

/// Total order: null, then numbers, then text.
pub fn cmp_cells(a: &Cell, b: &Cell) -> Ordering {
    rank(a).cmp(&rank(b)).then_with(|| match (a, b) {
        (Cell::Text(x), Cell::Text(y)) => x.trim_end().cmp(y.trim_end()),
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => Ordering::Equal,
        },
    })
}

fn cmp_rows(a: &[Cell], b: &[Cell]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = cmp_cells(x, y);
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

fn rows_equal(a: &[Cell], b: &[Cell]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cells_equal(x, y))
}

/// 1 when the row multisets agree with column order significant; row order counts
/// only when `ordered` (the gold query has a top-level ORDER BY).
pub fn execution_accuracy(pred: &ResultTable, gold: &ResultTable, ordered: bool) -> u8 {
    if pred.rows.len() != gold.rows.len() {
        return 0;
    }
    if ordered {
        return u8::from(pred.rows.iter().zip(&gold.rows).all(|(p, g)| rows_equal(p, g)));
    }
    let mut p: Vec<&Vec<Cell>> = pred.rows.iter().collect();
    let mut g: Vec<&Vec<Cell>> = gold.rows.iter().collect();
    p.sort_by(|a, b| cmp_rows(a, b));
    g.sort_by(|a, b| cmp_rows(a, b));
    u8::from(p.iter().zip(&g).all(|(a, b)| rows_equal(a, b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    /// Maximum-weight assignment, falling back to greedy on very large tables.
    #[default]
    Optimal,
    /// Pairs with the largest overlap first, ties by (pred row, gold row).
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftF1 {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub matched_cells: usize,
    /// Set when the matching was not guaranteed optimal.
    pub approximate: bool,
}

fn sorted_row(r: &[Cell]) -> Vec<Cell> {
    let mut v = r.to_vec();
    v.sort_by(cmp_cells);
    v
}

/// Size of the cell multiset intersection of two rows, each sorted by `cmp_cells`.
fn overlap(a: &[Cell], b: &[Cell]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        if cells_equal(&a[i], &b[j]) {
            n += 1;
            i += 1;
            j += 1;
        } else if cmp_cells(&a[i], &b[j]) == Ordering::Less {
            i += 1;
        } else {
            j += 1;
        }
    }
    n
}

fn exact_key(r: &[Cell]) -> String {
    serde_json::to_string(r).expect("cells serialize")
}

/// Soft F1 with the default strategy.
pub fn soft_f1(pred: &ResultTable, gold: &ResultTable) -> f64 {
    soft_f1_with(pred, gold, MatchStrategy::Optimal).f1
}

/// Rows are matched one-to-one; matched cells are true positives, the remaining
/// predicted and gold cells are false positives and false negatives.
pub fn soft_f1_with(pred: &ResultTable, gold: &ResultTable, strategy: MatchStrategy) -> SoftF1 {
    let pred_cells: usize = pred.rows.iter().map(Vec::len).sum();
    let gold_cells: usize = gold.rows.iter().map(Vec::len).sum();
    let empty = |c: usize| SoftF1 { f1: c as f64, precision: c as f64, recall: c as f64, matched_cells: 0, approximate: false };
    match (pred_cells == 0, gold_cells == 0) {
        (true, true) => return empty(1),
        (true, false) | (false, true) => return empty(0),
        _ => {}
    }
    let p: Vec<Vec<Cell>> = pred.rows.iter().map(|r| sorted_row(r)).collect();
    let g: Vec<Vec<Cell>> = gold.rows.iter().map(|r| sorted_row(r)).collect();

    // Exactly identical rows are always paired together in some optimal matching.
    let mut tp = 0usize;
    let mut by_key: HashMap<String, Vec<usize>> = HashMap::new();
    for j in (0..g.len()).rev() {
        by_key.entry(exact_key(&gold.rows[j])).or_default().push(j);
    }
    let mut gold_used = vec![false; g.len()];
    let mut pred_left = Vec::new();
    for (i, r) in pred.rows.iter().enumerate() {
        match by_key.get_mut(&exact_key(r)).and_then(Vec::pop) {
            Some(j) => {
                gold_used[j] = true;
                tp += p[i].len();
            }
            None => pred_left.push(i),
        }
    }
    let gold_left: Vec<usize> = (0..g.len()).filter(|&j| !gold_used[j]).collect();

    let pairs = pred_left.len() * gold_left.len();
    let mut approximate = false;
    if pairs > 0 {
        let use_optimal = strategy == MatchStrategy::Optimal && pairs <= OPTIMAL_PAIR_LIMIT;
        if use_optimal {
            tp += optimal_match(&p, &g, &pred_left, &gold_left);
        } else if pairs <= GREEDY_PAIR_LIMIT {
            approximate = strategy == MatchStrategy::Optimal;
            tp += greedy_match(&p, &g, &pred_left, &gold_left);
        } else {
            approximate = true;
        }
    }
    let precision = tp as f64 / pred_cells as f64;
    let recall = tp as f64 / gold_cells as f64;
    let f1 = if tp == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    SoftF1 { f1, precision, recall, matched_cells: tp, approximate }
}

fn optimal_match(p: &[Vec<Cell>], g: &[Vec<Cell>], pl: &[usize], gl: &[usize]) -> usize {
    let n = pl.len().max(gl.len());
    let mut m = Matrix::new(n, n, 0i64);
    for (a, &i) in pl.iter().enumerate() {
        for (b, &j) in gl.iter().enumerate() {
            m[(a, b)] = overlap(&p[i], &g[j]) as i64;
        }
    }
    let (total, _) = kuhn_munkres(&m);
    total as usize
}

fn greedy_match(p: &[Vec<Cell>], g: &[Vec<Cell>], pl: &[usize], gl: &[usize]) -> usize {
    let mut scored = Vec::new();
    for &i in pl {
        for &j in gl {
            let o = overlap(&p[i], &g[j]);
            if o > 0 {
                scored.push((o, i, j));
            }
        }
    }
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pu = vec![false; p.len()];
    let mut gu = vec![false; g.len()];
    let mut tp = 0;
    for (o, i, j) in scored {
        if !pu[i] && !gu[j] {
            pu[i] = true;
            gu[j] = true;
            tp += o;
        }
    }
    tp
}

/// Scores of every candidate for one question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateScores {
    pub ex: Vec<f64>,
    pub f1: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub ex_ub: f64,
    pub ex_lb: f64,
    pub f1_ub: f64,
    pub f1_lb: f64,
}

/// Upper bound = best candidate, lower bound = worst; no candidates scores zero.
pub fn question_bounds(s: &CandidateScores) -> Bounds {
    let max = |v: &[f64]| v.iter().copied().fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x)))).unwrap_or(0.0);
    let min = |v: &[f64]| v.iter().copied().fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.min(x)))).unwrap_or(0.0);
    Bounds { ex_ub: max(&s.ex), ex_lb: min(&s.ex), f1_ub: max(&s.f1), f1_lb: min(&s.f1) }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub questions: usize,
    /// Means times 100.
    pub ex_ub: f64,
    pub ex_lb: f64,
    pub f1_ub: f64,
    pub f1_lb: f64,
}

pub fn aggregate_bounds(scores: &[CandidateScores]) -> Aggregate {
    let bounds: Vec<Bounds> = scores.iter().map(question_bounds).collect();
    aggregate(&bounds)
}

pub fn aggregate(bounds: &[Bounds]) -> Aggregate {
    let n = bounds.len();
    if n == 0 {
        return Aggregate::default();
    }
    let mean = |f: fn(&Bounds) -> f64| 100.0 * bounds.iter().map(f).sum::<f64>() / n as f64;
    Aggregate { questions: n, ex_ub: mean(|b| b.ex_ub), ex_lb: mean(|b| b.ex_lb), f1_ub: mean(|b| b.f1_ub), f1_lb: mean(|b| b.f1_lb) }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub question_id: String,
    pub candidates: Vec<String>,
}

/// One line of a gold file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub question_id: String,
    pub sql: String,
    pub db_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question_id: String,
    pub db_id: String,
    pub scores: CandidateScores,
    pub bounds: Bounds,
    /// Candidate execution or parse failures, by candidate index.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<(usize, String)>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub approximate: bool,
}

/// Scores every candidate of one question against an already executed gold result.
pub fn score_candidates(
    question_id: &str,
    db_id: &str,
    candidates: &[String],
    gold: &ResultTable,
    ordered: bool,
    db_path: &Path,
    timeout: Duration,
) -> QuestionResult {
    let mut scores = CandidateScores::default();
    let mut errors = Vec::new();
    let mut truncated = gold.truncated;
    let mut approximate = false;
    for (i, cand) in candidates.iter().enumerate() {
        match sql::execute_query(cand, db_path, timeout) {
            Ok(pred) => {
                truncated |= pred.truncated;
                let f = soft_f1_with(&pred, gold, MatchStrategy::Optimal);
                approximate |= f.approximate;
                scores.ex.push(f64::from(execution_accuracy(&pred, gold, ordered)));
                scores.f1.push(f.f1);
            }
            Err(e) => {
                errors.push((i, e.to_string()));
                scores.ex.push(0.0);
                scores.f1.push(0.0);
            }
        }
    }
    let bounds = question_bounds(&scores);
    QuestionResult { question_id: question_id.into(), db_id: db_id.into(), scores, bounds, errors, truncated, approximate }
}

#[derive(Debug, Default)]
pub struct BatchOutcome {
    pub results: Vec<QuestionResult>,
    pub failures: Vec<EvalError>,
    pub aggregate: Aggregate,
}

/// Evaluates predictions in parallel; `resolve` maps a database id to its file.
/// Questions whose gold query fails are reported and left out of the aggregate.
pub fn evaluate_batch(
    predictions: &[PredictionRecord],
    golds: &[GoldRecord],
    resolve: &(dyn Fn(&str) -> Option<PathBuf> + Sync),
    timeout: Duration,
) -> BatchOutcome {
    let gold_by_id: BTreeMap<&str, &GoldRecord> = golds.iter().map(|g| (g.question_id.as_str(), g)).collect();
    let results: Vec<Result<QuestionResult, EvalError>> = predictions
        .par_iter()
        .map(|p| {
            let gold = gold_by_id.get(p.question_id.as_str()).ok_or_else(|| EvalError::MissingGold(p.question_id.clone()))?;
            let db = resolve(&gold.db_id).ok_or_else(|| EvalError::UnknownDatabase(gold.db_id.clone()))?;
            let gold_table = sql::execute_query(&gold.sql, &db, timeout)
                .map_err(|source| EvalError::Gold { question_id: p.question_id.clone(), source })?;
            let ordered = sql::has_top_level_order_by(&gold.sql).unwrap_or(false);
            Ok(score_candidates(&p.question_id, &gold.db_id, &p.candidates, &gold_table, ordered, &db, timeout))
        })
        .collect();
    let mut out = BatchOutcome::default();
    for r in results {
        match r {
            Ok(q) => out.results.push(q),
            Err(e) => out.failures.push(e),
        }
    }
    let bounds: Vec<Bounds> = out.results.iter().map(|r| r.bounds).collect();
    out.aggregate = aggregate(&bounds);
    out
}

/// Markdown table with one row per named aggregate.
pub fn render_bounds_table(rows: &[(String, Aggregate)]) -> String {
    let mut s = String::from("| Method | EX UB | EX LB | F1 UB | F1 LB |\n|---|---:|---:|---:|---:|\n");
    for (name, a) in rows {
        s.push_str(&format!("| {name} | {:.2} | {:.2} | {:.2} | {:.2} |\n", a.ex_ub, a.ex_lb, a.f1_ub, a.f1_lb));
    }
    s
}

/// Tables and columns the gold query uses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkingGold {
    pub tables: BTreeSet<String>,
    pub columns: BTreeSet<ColumnRef>,
}

impl LinkingGold {
    pub fn from_sql(sql: &str, schema: &DatabaseSchema) -> Result<Self, SqlError> {
        let p = sql::extract_schema_elements(sql, schema)?;
        let mut tables = p.referenced_tables.clone();
        tables.extend(p.referenced.iter().map(|c| c.table.clone()));
        Ok(Self { tables, columns: p.referenced })
    }
}

/// Tables and columns kept by a linker for one question.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedSchema {
    pub tables: BTreeSet<String>,
    pub columns: BTreeSet<ColumnRef>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkingMetrics {
    pub tr: f64,
    pub tp: f64,
    pub cr: f64,
    pub cp: f64,
    pub srr: f64,
    pub questions: usize,
}

fn recall<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> f64 {
    if gold.is_empty() {
        return 1.0;
    }
    pred.intersection(gold).count() as f64 / gold.len() as f64
}

/// An empty prediction is fully precise only when the gold set is empty too.
fn precision<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> f64 {
    if pred.is_empty() {
        return if gold.is_empty() { 1.0 } else { 0.0 };
    }
    pred.intersection(gold).count() as f64 / pred.len() as f64
}

/// Macro-averaged table/column recall and precision, and the share of questions
/// whose gold columns are all kept; all as percentages.
pub fn linking_metrics(items: &[(LinkedSchema, LinkingGold)]) -> LinkingMetrics {
    let n = items.len();
    if n == 0 {
        return LinkingMetrics::default();
    }
    let mut m = LinkingMetrics { questions: n, ..Default::default() };
    for (pred, gold) in items {
        m.tr += recall(&pred.tables, &gold.tables);
        m.tp += precision(&pred.tables, &gold.tables);
        m.cr += recall(&pred.columns, &gold.columns);
        m.cp += precision(&pred.columns, &gold.columns);
        m.srr += f64::from(u8::from(gold.columns.is_subset(&pred.columns)));
    }
    let k = 100.0 / n as f64;
    m.tr *= k;
    m.tp *= k;
    m.cr *= k;
    m.cp *= k;
    m.srr *= k;
    m
}
