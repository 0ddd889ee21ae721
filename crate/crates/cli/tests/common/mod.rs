//! Deterministic stand-in model and fixture helpers for the CLI tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use t2s_core::linking::fallback_keywords;
use t2s_core::llm::{FinishReason, LlmRequest, LlmResponse, Provider, ProviderError, Purpose, Usage};
use t2s_core::rng::fnv1a;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn fixtures() -> PathBuf {
    repo_root().join("fixtures")
}

/// Builds `<dir>/<stem>.sqlite` from a SQL script.
pub fn build_db(script: &Path, dir: &Path, stem: &str) -> PathBuf {
    let path = dir.join(format!("{stem}.sqlite"));
    let _ = std::fs::remove_file(&path);
    let conn = rusqlite::Connection::open(&path).unwrap();
    conn.execute_batch(&std::fs::read_to_string(script).unwrap()).unwrap();
    path
}

pub fn school_db(dir: &Path) -> PathBuf {
    build_db(&fixtures().join("school_district.sql"), dir, "school_district")
}

pub const STORE: &str = "replay/school_district.jsonl";

pub fn pipeline_config() -> PathBuf {
    fixtures().join("pipeline.toml")
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub pk: Option<String>,
    /// (from column, to table, to column).
    pub fks: Vec<(String, String, String)>,
}

fn unquote(s: &str) -> String {
    s.trim().trim_matches('"').replace("\"\"", "\"")
}

/// Reads the CREATE TABLE blocks of a prompt.
pub fn parse_tables(prompt: &str) -> Vec<Table> {
    let mut out: Vec<Table> = Vec::new();
    let mut current: Option<Table> = None;
    for line in prompt.lines() {
        if let Some(rest) = line.strip_prefix("CREATE TABLE ") {
            current = Some(Table { name: unquote(rest.trim_end_matches('(').trim()), ..Default::default() });
        } else if line.starts_with(");") {
            if let Some(t) = current.take() {
                out.push(t);
            }
        } else if let Some(t) = current.as_mut() {
            let body = line.split(" -- ").next().unwrap().trim().trim_end_matches(',');
            if let Some(fk) = body.strip_prefix("FOREIGN KEY (") {
                let (from, rest) = fk.split_once(") REFERENCES ").unwrap();
                let (to_t, to_c) = rest.split_once('(').unwrap();
                t.fks.push((unquote(from), unquote(to_t), unquote(to_c.trim_end_matches(')'))));
            } else if let Some(rest) = body.strip_prefix('"') {
                let end = rest.find('"').unwrap() + 1;
                let name = unquote(&body[..=end]);
                if body.contains("PRIMARY KEY") {
                    t.pk = Some(name.clone());
                }
                t.columns.push(name);
            }
        }
    }
    out
}

fn section<'a>(prompt: &'a str, start: &str, end: &str) -> &'a str {
    let from = prompt.find(start).map(|i| i + start.len()).unwrap_or(0);
    let rest = &prompt[from..];
    rest[..rest.find(end).unwrap_or(rest.len())].trim()
}

fn q(t: &str, c: &str) -> String {
    format!("\"{t}\".\"{c}\"")
}

fn is_id(c: &str) -> bool {
    c.to_lowercase().ends_with("id")
}

/// A join between two visible tables through a rendered foreign key.
fn find_join(tables: &[Table]) -> Option<(String, String, String, String)> {
    tables.iter().find_map(|t| {
        t.fks.iter().find(|(_, to, _)| tables.iter().any(|o| &o.name == to)).map(|(fc, to, tc)| (t.name.clone(), fc.clone(), to.clone(), tc.clone()))
    })
}

fn pick(cols: &[String], k: usize, n: usize) -> Vec<String> {
    if cols.is_empty() {
        return Vec::new();
    }
    (0..n.min(cols.len())).map(|i| cols[(k + i) % cols.len()].clone()).collect()
}

fn level_sql(level: &str, tables: &[Table], k: usize) -> String {
    let t0 = &tables[0];
    let non_id: Vec<String> = t0.columns.iter().filter(|c| !is_id(c)).cloned().collect();
    let pool = if non_id.is_empty() { t0.columns.clone() } else { non_id };
    let cols = pick(&pool, k, 2);
    let list = cols.iter().map(|c| q(&t0.name, c)).collect::<Vec<_>>().join(", ");
    match level {
        "simple" => format!("SELECT {list} FROM \"{}\" WHERE {} IS NOT NULL", t0.name, q(&t0.name, &cols[0])),
        "moderate" => match find_join(tables) {
            Some((a, fc, b, tc)) => {
                let tb = tables.iter().find(|t| t.name == b).unwrap();
                let g = pick(&tb.columns.iter().filter(|c| !is_id(c)).cloned().collect::<Vec<_>>(), k, 1);
                let g = g.first().cloned().unwrap_or(tc.clone());
                format!(
                    "SELECT {}, COUNT({}) AS n FROM \"{a}\" JOIN \"{b}\" ON {} = {} GROUP BY {}",
                    q(&b, &g),
                    q(&a, &fc),
                    q(&a, &fc),
                    q(&b, &tc),
                    q(&b, &g)
                )
            }
            None => format!("SELECT {}, COUNT(*) AS n FROM \"{}\" GROUP BY {}", q(&t0.name, &cols[0]), t0.name, q(&t0.name, &cols[0])),
        },
        "challenging" => match find_join(tables) {
            Some((a, fc, b, tc)) => {
                let ta = tables.iter().find(|t| t.name == a).unwrap();
                let c = pick(&ta.columns.iter().filter(|c| !is_id(c)).cloned().collect::<Vec<_>>(), k, 1);
                let c = c.first().cloned().unwrap_or(fc.clone());
                format!(
                    "SELECT {}, {} FROM \"{a}\" JOIN \"{b}\" ON {} = {} WHERE {} IN (SELECT {} FROM \"{a}\" WHERE {} IS NOT NULL)",
                    q(&b, &tc),
                    q(&a, &c),
                    q(&a, &fc),
                    q(&b, &tc),
                    q(&a, &c),
                    q(&a, &c),
                    q(&a, &c)
                )
            }
            None => format!(
                "SELECT {list} FROM \"{0}\" WHERE {1} IN (SELECT {1} FROM \"{0}\" WHERE {1} IS NOT NULL)",
                t0.name,
                q(&t0.name, &cols[0])
            ),
        },
        _ => format!(
            "SELECT {list}, RANK() OVER (ORDER BY {}) AS rnk FROM \"{}\"",
            q(&t0.name, cols.last().unwrap()),
            t0.name
        ),
    }
}

fn focus_sql(level: &str, table: &str, cols: &[String]) -> String {
    let list = cols.iter().map(|c| q(table, c)).collect::<Vec<_>>().join(", ");
    let first = q(table, &cols[0]);
    match level {
        "simple" => format!("SELECT {list} FROM \"{table}\""),
        "moderate" => format!("SELECT {list}, COUNT(*) AS n FROM \"{table}\" GROUP BY {list}"),
        "challenging" => format!("SELECT DISTINCT {list} FROM \"{table}\" WHERE {first} IN (SELECT {first} FROM \"{table}\")"),
        _ => format!("SELECT {list}, ROW_NUMBER() OVER (ORDER BY {first}) AS rn FROM \"{table}\""),
    }
}

const LEVELS: [&str; 4] = ["simple", "moderate", "challenging", "window"];

fn answer(s: &str) -> String {
    format!("<answer>\n{s}\n</answer>")
}

/// Deterministic model covering every prompt the pipeline and linker send.
///
/// Outside focus prompts it also produces, on fixed prompt-hash buckets, a
/// malformed response, a query needing repair, a meaningless aggregate the judge
/// rejects, a query whose verdict is unparseable, and a first reasoning trace
/// whose SQL disagrees.
#[derive(Default)]
pub struct ScriptedProvider {
    seen: Mutex<HashMap<String, usize>>,
    pub calls: Mutex<usize>,
}

impl ScriptedProvider {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn generate(&self, prompt: &str) -> String {
        let h = fnv1a(prompt.as_bytes());
        let tables = parse_tables(prompt);
        let level = section(prompt, "Write one ", " SQL query.");
        let variant = section(prompt, "This is request ", " for this schema");
        let (k, n) = variant.split_once(" of ").map(|(a, b)| (a.parse::<usize>().unwrap() - 1, b.parse::<usize>().unwrap())).unwrap();
        let li = LEVELS.iter().position(|l| *l == level).unwrap_or(0);
        if prompt.contains("underused columns") {
            let focus: Vec<(String, String)> = section(prompt, "as make sense:\n", "\nThis is request")
                .lines()
                .filter_map(|l| l.strip_prefix("- ")?.split_once('.').map(|(t, c)| (t.to_string(), c.to_string())))
                .collect();
            let mut by_table: Vec<(String, Vec<String>)> = Vec::new();
            for (t, c) in focus {
                match by_table.iter_mut().find(|(bt, _)| *bt == t) {
                    Some((_, cs)) => cs.push(c),
                    None => by_table.push((t, vec![c])),
                }
            }
            let (t, cols) = &by_table[(li * n + k) % by_table.len()];
            return answer(&focus_sql(level, t, cols));
        }
        if h % 13 == 5 {
            return "I am not sure which query fits.".into();
        }
        if level == "moderate" && h % 7 == 2 {
            let t0 = &tables[0];
            let pk = t0.pk.clone().unwrap_or_else(|| t0.columns[0].clone());
            return answer(&format!("SELECT AVG({}) FROM \"{}\"", q(&t0.name, &pk), t0.name));
        }
        let mut sql = level_sql(level, &tables, k);
        if level == "simple" && h % 11 == 4 {
            sql.push_str(" LIMIT 3");
        }
        if h % 5 == 1 {
            sql = sql.replacen("SELECT", "SELEC", 1);
        }
        answer(&sql)
    }

    fn question(&self, prompt: &str) -> String {
        let sql = section(prompt, "### SQL\n", "\n\n### Task");
        let mut tables: Vec<String> = Vec::new();
        let mut cols: Vec<String> = Vec::new();
        for part in sql.split("\".\"").collect::<Vec<_>>().windows(2) {
            let t = part[0].rsplit('"').next().unwrap().to_string();
            let c = part[1].split('"').next().unwrap().replace('_', " ");
            if !tables.contains(&t) {
                tables.push(t);
            }
            if !cols.contains(&c) {
                cols.push(c);
            }
        }
        let mut extra = String::new();
        if sql.contains("OVER") {
            extra.push_str(", ranked");
        }
        if sql.contains("COUNT") {
            extra.push_str(", with counts");
        }
        if sql.contains("AVG") {
            extra.push_str(", averaged");
        }
        if sql.contains(" IN (") {
            extra.push_str(", restricted by a nested lookup");
        }
        if sql.contains("LIMIT") {
            extra.push_str(", first three only");
        }
        answer(&format!("What are the {} of {}{extra}?", cols.join(", "), tables.join(" and ")))
    }

    fn judge(&self, prompt: &str) -> String {
        let sql = section(prompt, "### SQL\n", "\n\n### Question");
        if sql.ends_with("LIMIT 3") {
            return "Looks fine to me.".into();
        }
        let avg_id = sql.split("AVG(").skip(1).any(|rest| rest.split(')').next().is_some_and(|arg| is_id(arg.trim_matches('"'))));
        if avg_id {
            return r#"{"verdict": "illogical", "reason": "averages an identifier"}"#.into();
        }
        r#"{"verdict": "logical", "reason": "question matches the query"}"#.into()
    }

    fn repair(&self, prompt: &str) -> String {
        let sql = section(prompt, "### Failing SQL\n", "\n\n### Error");
        answer(&sql.replacen("SELEC ", "SELECT ", 1))
    }

    fn reasoning(&self, prompt: &str) -> String {
        let sql = section(prompt, "### SQL\n", "\n\n### Task");
        let n = {
            let mut seen = self.seen.lock().unwrap();
            let e = seen.entry(prompt.to_string()).or_insert(0);
            *e += 1;
            *e
        };
        let trace = "1. Find the tables the question names.\n2. Select the requested columns.\n3. Apply the filters and grouping.";
        let final_sql = if n == 1 && fnv1a(prompt.as_bytes()).is_multiple_of(3) { "SELECT 1" } else { sql };
        format!("<reasoning>\n{trace}\n</reasoning>\n{}", answer(final_sql))
    }

    fn keywords(&self, prompt: &str) -> String {
        let question = section(prompt, "### Question\n", "\n\n### Hint");
        let hint = section(prompt, "### Hint\n", "\n\n### Respond");
        serde_json::to_string(&fallback_keywords(question, hint)).unwrap()
    }

    fn column_filter(&self, prompt: &str) -> String {
        let table = parse_tables(prompt).into_iter().next().unwrap_or_default();
        let question = section(prompt, "User Question:\n", "\n\n### Now").to_lowercase();
        let cols: Vec<&String> = table
            .columns
            .iter()
            .filter(|c| Some(*c) == table.pk.as_ref() || question.contains(&c.to_lowercase().replace('_', " ")))
            .collect();
        serde_json::json!({"reasoning": "columns named in the question", "selected_columns": cols}).to_string()
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, ProviderError> {
        *self.calls.lock().unwrap() += 1;
        let p = &req.rendered_prompt;
        let text = match req.purpose_tag {
            Purpose::GenerateSql => self.generate(p),
            Purpose::SqlToText => self.question(p),
            Purpose::Judge => self.judge(p),
            Purpose::Repair => self.repair(p),
            Purpose::Reasoning => self.reasoning(p),
            Purpose::Keywords => self.keywords(p),
            Purpose::ColumnFilter => self.column_filter(p),
            Purpose::TranslateCandidates => answer("SELECT 1"),
        };
        Ok(LlmResponse { text, finish_reason: FinishReason::Complete, usage: Usage::default() })
    }
}

/// Path of the compiled `t2s` binary.
pub fn t2s_bin() -> &'static str {
    env!("CARGO_BIN_EXE_t2s")
}

/// Runs the binary and returns (exit code, stdout, stderr).
pub fn run_t2s<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> (i32, String, String) {
    let out = std::process::Command::new(t2s_bin()).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Runs the binary and panics with its stderr unless it exits 0.
pub fn ok_t2s<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> String {
    let (code, stdout, stderr) = run_t2s(args);
    assert_eq!(code, 0, "t2s failed: {stderr}");
    stdout
}

/// Replay-mode generate followed by balance into `out`.
pub fn replay_pipeline(db: &Path, out: &Path) {
    let cfg = pipeline_config();
    for cmd in ["generate", "balance"] {
        ok_t2s(&[
            "--config".as_ref(),
            cfg.as_os_str(),
            cmd.as_ref(),
            "--db".as_ref(),
            db.as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
        ]);
    }
}

/// Every `"table"."column"` reference in a query, in order.
pub fn qualified_refs(sql: &str) -> Vec<(String, String)> {
    sql.split("\".\"")
        .collect::<Vec<_>>()
        .windows(2)
        .map(|p| (p[0].rsplit('"').next().unwrap().to_string(), p[1].split('"').next().unwrap().to_string()))
        .collect()
}

/// Tables named after FROM or JOIN.
pub fn from_tables(sql: &str) -> Vec<String> {
    let mut out = Vec::new();
    for kw in ["FROM \"", "JOIN \""] {
        for rest in sql.split(kw).skip(1) {
            out.push(rest.split('"').next().unwrap().to_string());
        }
    }
    out
}

/// Table names, primary keys and foreign keys read straight from SQLite.
pub struct RawSchema {
    pub columns: Vec<(String, String)>,
    pub pks: Vec<(String, String)>,
    pub fks: Vec<(String, String, String, String)>,
}

pub fn raw_schema(db: &Path) -> RawSchema {
    let conn = rusqlite::Connection::open(db).unwrap();
    let tables: Vec<String> = conn
        .prepare("SELECT name FROM sqlite_master WHERE type='table' AND name NOT LIKE 'sqlite_%'")
        .unwrap()
        .query_map([], |r| r.get(0))
        .unwrap()
        .map(Result::unwrap)
        .collect();
    let mut s = RawSchema { columns: Vec::new(), pks: Vec::new(), fks: Vec::new() };
    for t in tables {
        let mut stmt = conn.prepare(&format!("PRAGMA table_info(\"{t}\")")).unwrap();
        let cols: Vec<(String, i64)> = stmt.query_map([], |r| Ok((r.get(1)?, r.get(5)?))).unwrap().map(Result::unwrap).collect();
        for (c, pk) in cols {
            if pk > 0 {
                s.pks.push((t.clone(), c.clone()));
            }
            s.columns.push((t.clone(), c));
        }
        let mut stmt = conn.prepare(&format!("PRAGMA foreign_key_list(\"{t}\")")).unwrap();
        let fks: Vec<(String, String, String)> = stmt.query_map([], |r| Ok((r.get(2)?, r.get(3)?, r.get(4)?))).unwrap().map(Result::unwrap).collect();
        for (to_t, from_c, to_c) in fks {
            s.fks.push((t.clone(), from_c, to_t, to_c));
        }
    }
    s
}
