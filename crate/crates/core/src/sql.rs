//! SQL parsing, schema-element extraction, feature classification and read-only execution.
//!
//! Parsing uses the SQLite dialect. Column references are resolved through a scope
//! chain built from each SELECT's FROM clause: aliases map to base tables, derived
//! tables and CTEs expose their output columns, and correlated subqueries see the
//! enclosing scopes.

use std::collections::BTreeSet;
use std::ops::ControlFlow;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use regex::Regex;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    Expr, FunctionArguments, GroupByExpr, Ident, JoinConstraint, JoinOperator, ObjectName, OrderByKind, Query,
    Select, SelectItem, SelectItemQualifiedWildcardKind, SetExpr, Statement, TableFactor, TableWithJoins, Visit,
    Visitor,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::{Parser, ParserError};
use thiserror::Error;

use crate::schema::{ColumnRef, DatabaseSchema};

#[derive(Debug, Error)]
pub enum SqlError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { message: String, line: usize, column: usize },
    #[error("expected a single SELECT query")]
    NotAQuery,
    #[error("cannot open database {0}")]
    Open(String),
    #[error("{0}")]
    Engine(String),
    #[error("query timed out after {0:?}")]
    Timeout(Duration),
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_ROW_CAP: usize = 10_000;

const AGGREGATES: [&str; 6] = ["count", "sum", "avg", "min", "max", "total"];
const ROWID_NAMES: [&str; 3] = ["rowid", "oid", "_rowid_"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedQuery {
    pub raw_sql: String,
    pub referenced: BTreeSet<ColumnRef>,
    pub referenced_tables: BTreeSet<String>,
    pub join_count: usize,
    pub has_aggregation: bool,
    pub has_window: bool,
    /// Column or table references that could not be resolved against the schema.
    #[serde(default)]
    pub unresolved: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features {
    pub join_count: usize,
    pub has_aggregation: bool,
    pub has_window: bool,
}

/// Rewrites `alias.'name'` (accepted by SQLite) to `alias."name"`.
fn normalize_quoted_columns(sql: &str) -> std::borrow::Cow<'_, str> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r#"([A-Za-z0-9_\]"`])\.'([^']*)'"#).unwrap());
    re.replace_all(sql, "$1.\"$2\"")
}

fn parse_error(err: ParserError) -> SqlError {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"Line: (\d+), Column: (\d+)").unwrap());
    let message = err.to_string();
    let (line, column) = re
        .captures(&message)
        .map(|c| (c[1].parse().unwrap_or(0), c[2].parse().unwrap_or(0)))
        .unwrap_or((0, 0));
    SqlError::Parse { message, line, column }
}

/// Parses one query statement.
pub fn parse_query(sql: &str) -> Result<Box<Query>, SqlError> {
    let normalized = normalize_quoted_columns(sql);
    let mut statements = Parser::parse_sql(&SQLiteDialect {}, &normalized).map_err(parse_error)?;
    if statements.len() != 1 {
        return Err(SqlError::NotAQuery);
    }
    match statements.pop() {
        Some(Statement::Query(q)) => Ok(q),
        _ => Err(SqlError::NotAQuery),
    }
}

/// Whether the outermost query carries an ORDER BY clause.
pub fn has_top_level_order_by(sql: &str) -> Result<bool, SqlError> {
    Ok(parse_query(sql)?.order_by.is_some())
}

/// Collapses whitespace runs to one space and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn ident_lower(id: &Ident) -> String {
    id.value.to_lowercase()
}

fn last_ident(name: &ObjectName) -> Option<&Ident> {
    name.0.last().and_then(|p| p.as_ident())
}

#[derive(Default)]
struct FeatureVisitor {
    joins: usize,
    aggregation: bool,
    window: bool,
}

fn joins_in(twj: &TableWithJoins) -> usize {
    let nested = |tf: &TableFactor| match tf {
        TableFactor::NestedJoin { table_with_joins, .. } => joins_in(table_with_joins),
        _ => 0,
    };
    twj.joins.len() + nested(&twj.relation) + twj.joins.iter().map(|j| nested(&j.relation)).sum::<usize>()
}

impl Visitor for FeatureVisitor {
    type Break = ();

    fn pre_visit_select(&mut self, select: &Select) -> ControlFlow<()> {
        self.joins += select.from.len().saturating_sub(1);
        self.joins += select.from.iter().map(joins_in).sum::<usize>();
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<()> {
        if let Expr::Function(f) = expr {
            if f.over.is_some() {
                self.window = true;
            } else if let Some(name) = last_ident(&f.name) {
                let name = ident_lower(name);
                let arity = match &f.args {
                    FunctionArguments::List(l) => l.args.len(),
                    _ => 0,
                };
                // multi-argument min/max are scalar functions in SQLite
                let scalar = (name == "min" || name == "max") && arity > 1;
                if AGGREGATES.contains(&name.as_str()) && !scalar {
                    self.aggregation = true;
                }
            }
        }
        ControlFlow::Continue(())
    }
}

fn features_of(query: &Query) -> Features {
    let mut v = FeatureVisitor::default();
    let _ = query.visit(&mut v);
    Features {
        join_count: v.joins,
        has_aggregation: v.aggregation,
        has_window: v.window,
    }
}

/// Join count (explicit joins plus comma joins, whole statement), aggregation and window flags.
pub fn classify_features(sql: &str) -> Result<Features, SqlError> {
    Ok(features_of(&*parse_query(sql)?))
}

/// Resolves the query's column and table references against `schema`.
pub fn extract_schema_elements(sql: &str, schema: &DatabaseSchema) -> Result<ParsedQuery, SqlError> {
    let query = parse_query(sql)?;
    let features = features_of(&query);
    let mut analyzer = Analyzer {
        schema,
        referenced: BTreeSet::new(),
        tables: BTreeSet::new(),
        unresolved: BTreeSet::new(),
        ctes: Vec::new(),
    };
    analyzer.query(&query, &[]);
    Ok(ParsedQuery {
        raw_sql: sql.to_string(),
        referenced: analyzer.referenced,
        referenced_tables: analyzer.tables,
        join_count: features.join_count,
        has_aggregation: features.has_aggregation,
        has_window: features.has_window,
        unresolved: analyzer.unresolved,
    })
}

#[derive(Debug, Clone)]
struct Relation {
    /// Lowercased name the relation is addressed by (alias or table name).
    name: String,
    /// Canonical base table, when the relation is a schema table.
    base: Option<String>,
    /// Lowercased base table name for lenient qualification.
    base_lower: Option<String>,
    columns: Vec<String>,
    /// Accepts any column (unknown table or recursive CTE with unknown shape).
    open: bool,
}

impl Relation {
    fn find_column(&self, name: &str) -> Option<&String> {
        self.columns.iter().find(|c| c.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Default, Clone)]
struct Scope {
    relations: Vec<Relation>,
    aliases: Vec<String>,
}

impl Scope {
    fn relation(&self, name: &str) -> Option<&Relation> {
        let name = name.to_lowercase();
        self.relations
            .iter()
            .find(|r| r.name == name)
            .or_else(|| self.relations.iter().find(|r| r.base_lower.as_deref() == Some(name.as_str())))
    }
}

struct Analyzer<'s> {
    schema: &'s DatabaseSchema,
    referenced: BTreeSet<ColumnRef>,
    tables: BTreeSet<String>,
    unresolved: BTreeSet<String>,
    ctes: Vec<(String, Vec<String>, bool)>,
}

impl<'s> Analyzer<'s> {
    fn mark(&mut self, rel: &Relation, column: &str) -> bool {
        match &rel.base {
            Some(base) => match rel.find_column(column) {
                Some(c) => {
                    self.referenced.insert(ColumnRef::new(base.clone(), c.clone()));
                    true
                }
                None => false,
            },
            None => rel.open || rel.find_column(column).is_some(),
        }
    }

    fn mark_all(&mut self, rel: &Relation) {
        if let Some(base) = &rel.base {
            for c in &rel.columns {
                self.referenced.insert(ColumnRef::new(base.clone(), c.clone()));
            }
        }
    }

    /// Analyses a query and returns its output column names.
    fn query(&mut self, q: &Query, outer: &[&Scope]) -> Vec<String> {
        let mark = self.ctes.len();
        if let Some(with) = &q.with {
            for cte in &with.cte_tables {
                let name = ident_lower(&cte.alias.name);
                let declared: Vec<String> = cte.alias.columns.iter().map(|c| c.name.value.clone()).collect();
                if with.recursive {
                    self.ctes.push((name.clone(), declared.clone(), declared.is_empty()));
                }
                let produced = self.query(&cte.query, outer);
                if with.recursive {
                    self.ctes.pop();
                }
                let cols = if declared.is_empty() { produced } else { declared };
                self.ctes.push((name, cols, false));
            }
        }
        let (outputs, scope) = self.set_expr(&q.body, outer);
        let mut chain: Vec<&Scope> = outer.to_vec();
        chain.push(&scope);
        if let Some(ob) = &q.order_by {
            if let OrderByKind::Expressions(items) = &ob.kind {
                for item in items {
                    self.walk(&item.expr, &chain, true);
                }
            }
        }
        if let Some(limit) = &q.limit_clause {
            let mut walker = Walker { analyzer: self, scopes: &chain, depth: 0, aliases_first: false };
            let _ = limit.visit(&mut walker);
        }
        self.ctes.truncate(mark);
        outputs
    }

    fn set_expr(&mut self, body: &SetExpr, outer: &[&Scope]) -> (Vec<String>, Scope) {
        match body {
            SetExpr::Select(s) => self.select(s, outer),
            SetExpr::Query(q) => {
                let out = self.query(q, outer);
                (out.clone(), Scope { relations: Vec::new(), aliases: out })
            }
            SetExpr::SetOperation { left, right, .. } => {
                let (out, _) = self.set_expr(left, outer);
                self.set_expr(right, outer);
                (out.clone(), Scope { relations: Vec::new(), aliases: out })
            }
            SetExpr::Values(values) => {
                let width = values.rows.first().map(|r| r.content.len()).unwrap_or(0);
                for row in &values.rows {
                    for e in &row.content {
                        self.walk(e, outer, false);
                    }
                }
                let out: Vec<String> = (1..=width).map(|i| format!("column{i}")).collect();
                (out, Scope::default())
            }
            _ => (Vec::new(), Scope::default()),
        }
    }

    fn add_factor(&mut self, tf: &TableFactor, scope: &mut Scope, outer: &[&Scope], constraints: &mut Vec<(usize, JoinConstraint)>) {
        match tf {
            TableFactor::Table { name, alias, .. } => {
                let Some(tname) = last_ident(name) else { return };
                let alias_name = alias.as_ref().map(|a| ident_lower(&a.name));
                let lower = ident_lower(tname);
                let cte = (name.0.len() == 1)
                    .then(|| self.ctes.iter().rev().find(|(n, _, _)| *n == lower).cloned())
                    .flatten();
                let rel = if let Some((_, cols, open)) = cte {
                    Relation { name: alias_name.unwrap_or(lower), base: None, base_lower: None, columns: cols, open }
                } else if let Some(t) = self.schema.table(&tname.value) {
                    self.tables.insert(t.name.clone());
                    Relation {
                        name: alias_name.unwrap_or_else(|| t.name.to_lowercase()),
                        base: Some(t.name.clone()),
                        base_lower: Some(t.name.to_lowercase()),
                        columns: t.columns.iter().map(|c| c.name.clone()).collect(),
                        open: false,
                    }
                } else {
                    self.unresolved.insert(format!("table {}", tname.value));
                    Relation { name: alias_name.unwrap_or(lower), base: None, base_lower: None, columns: Vec::new(), open: true }
                };
                scope.relations.push(rel);
            }
            TableFactor::Derived { subquery, alias, .. } => {
                let produced = self.query(subquery, outer);
                let (name, cols) = match alias {
                    Some(a) if !a.columns.is_empty() => {
                        (ident_lower(&a.name), a.columns.iter().map(|c| c.name.value.clone()).collect())
                    }
                    Some(a) => (ident_lower(&a.name), produced),
                    None => (String::new(), produced),
                };
                scope.relations.push(Relation { name, base: None, base_lower: None, columns: cols, open: false });
            }
            TableFactor::NestedJoin { table_with_joins, .. } => {
                self.add_twj(table_with_joins, scope, outer, constraints);
            }
            other => {
                let mut walker = Walker { analyzer: self, scopes: outer, depth: 0, aliases_first: false };
                let _ = other.visit(&mut walker);
                scope.relations.push(Relation { name: String::new(), base: None, base_lower: None, columns: Vec::new(), open: true });
            }
        }
    }

    fn add_twj(&mut self, twj: &TableWithJoins, scope: &mut Scope, outer: &[&Scope], constraints: &mut Vec<(usize, JoinConstraint)>) {
        self.add_factor(&twj.relation, scope, outer, constraints);
        for join in &twj.joins {
            self.add_factor(&join.relation, scope, outer, constraints);
            let constraint = match &join.join_operator {
                JoinOperator::Join(c)
                | JoinOperator::Inner(c)
                | JoinOperator::Left(c)
                | JoinOperator::LeftOuter(c)
                | JoinOperator::Right(c)
                | JoinOperator::RightOuter(c)
                | JoinOperator::FullOuter(c)
                | JoinOperator::CrossJoin(c)
                | JoinOperator::Semi(c)
                | JoinOperator::LeftSemi(c)
                | JoinOperator::RightSemi(c)
                | JoinOperator::Anti(c)
                | JoinOperator::LeftAnti(c)
                | JoinOperator::RightAnti(c)
                | JoinOperator::StraightJoin(c) => c.clone(),
                _ => JoinConstraint::None,
            };
            constraints.push((scope.relations.len() - 1, constraint));
        }
    }

    fn select(&mut self, s: &Select, outer: &[&Scope]) -> (Vec<String>, Scope) {
        let mut scope = Scope::default();
        let mut constraints = Vec::new();
        for twj in &s.from {
            self.add_twj(twj, &mut scope, outer, &mut constraints);
        }
        for item in &s.projection {
            if let SelectItem::ExprWithAlias { alias, .. } = item {
                scope.aliases.push(alias.value.clone());
            }
        }

        let mut chain: Vec<&Scope> = outer.to_vec();
        chain.push(&scope);

        for (right, constraint) in &constraints {
            match constraint {
                JoinConstraint::On(e) => self.walk(e, &chain, false),
                JoinConstraint::Using(names) => {
                    for n in names {
                        let Some(col) = last_ident(n) else { continue };
                        let mut found = false;
                        for rel in &scope.relations[..=*right] {
                            found |= self.mark(rel, &col.value);
                        }
                        if !found {
                            self.unresolved.insert(col.value.clone());
                        }
                    }
                }
                JoinConstraint::Natural => {
                    let rel = &scope.relations[*right];
                    for c in rel.columns.clone() {
                        let earlier: Vec<&Relation> = scope.relations[..*right]
                            .iter()
                            .filter(|r| r.find_column(&c).is_some())
                            .collect();
                        if !earlier.is_empty() {
                            self.mark(rel, &c);
                            for r in earlier {
                                self.mark(r, &c);
                            }
                        }
                    }
                }
                JoinConstraint::None => {}
            }
        }

        let mut outputs = Vec::new();
        for item in &s.projection {
            match item {
                SelectItem::UnnamedExpr(e) => {
                    self.walk(e, &chain, false);
                    outputs.push(match e {
                        Expr::Identifier(id) => id.value.clone(),
                        Expr::CompoundIdentifier(parts) => parts.last().map(|p| p.value.clone()).unwrap_or_default(),
                        other => other.to_string(),
                    });
                }
                SelectItem::ExprWithAlias { expr, alias } => {
                    self.walk(expr, &chain, false);
                    outputs.push(alias.value.clone());
                }
                SelectItem::ExprWithAliases { expr, aliases } => {
                    self.walk(expr, &chain, false);
                    outputs.extend(aliases.iter().map(|a| a.value.clone()));
                }
                SelectItem::Wildcard(_) => {
                    for rel in &scope.relations {
                        self.mark_all(rel);
                        outputs.extend(rel.columns.iter().cloned());
                    }
                }
                SelectItem::QualifiedWildcard(kind, _) => {
                    let target = match kind {
                        SelectItemQualifiedWildcardKind::ObjectName(n) => last_ident(n).map(|i| i.value.clone()),
                        SelectItemQualifiedWildcardKind::Expr(_) => None,
                    };
                    match target.as_deref().and_then(|t| scope.relation(t)) {
                        Some(rel) => {
                            self.mark_all(rel);
                            outputs.extend(rel.columns.iter().cloned());
                        }
                        None => {
                            self.unresolved.insert(format!("{}.*", target.unwrap_or_default()));
                        }
                    }
                }
            }
        }

        if let Some(e) = &s.selection {
            self.walk(e, &chain, false);
        }
        if let GroupByExpr::Expressions(exprs, _) = &s.group_by {
            for e in exprs {
                self.walk(e, &chain, true);
            }
        }
        if let Some(e) = &s.having {
            self.walk(e, &chain, true);
        }
        if let Some(e) = &s.qualify {
            self.walk(e, &chain, true);
        }
        for item in &s.sort_by {
            self.walk(&item.expr, &chain, true);
        }
        for nw in &s.named_window {
            let mut walker = Walker { analyzer: self, scopes: &chain, depth: 0, aliases_first: false };
            let _ = nw.visit(&mut walker);
        }
        drop(chain);
        (outputs, scope)
    }

    fn walk(&mut self, e: &Expr, scopes: &[&Scope], aliases_first: bool) {
        let mut walker = Walker { analyzer: self, scopes, depth: 0, aliases_first };
        let _ = e.visit(&mut walker);
    }

    fn resolve_bare(&mut self, id: &Ident, scopes: &[&Scope], aliases_first: bool) {
        let name = &id.value;
        if aliases_first && scopes.last().is_some_and(|s| s.aliases.iter().any(|a| a.eq_ignore_ascii_case(name))) {
            return;
        }
        for scope in scopes.iter().rev() {
            for rel in &scope.relations {
                if rel.find_column(name).is_some() {
                    self.mark(rel, name);
                    return;
                }
            }
            if scope.aliases.iter().any(|a| a.eq_ignore_ascii_case(name)) {
                return;
            }
        }
        if ROWID_NAMES.contains(&name.to_lowercase().as_str()) {
            return;
        }
        if scopes.iter().any(|s| s.relations.iter().any(|r| r.open)) {
            return;
        }
        // SQLite reads an unresolvable double-quoted identifier as a string literal
        if id.quote_style == Some('"') {
            return;
        }
        self.unresolved.insert(name.clone());
    }

    fn resolve_qualified(&mut self, parts: &[Ident], scopes: &[&Scope]) {
        let [.., table, column] = parts else { return };
        for scope in scopes.iter().rev() {
            if let Some(rel) = scope.relation(&table.value) {
                let rel = rel.clone();
                if !self.mark(&rel, &column.value) && !ROWID_NAMES.contains(&column.value.to_lowercase().as_str()) {
                    self.unresolved.insert(format!("{}.{}", table.value, column.value));
                }
                return;
            }
        }
        self.unresolved.insert(format!("{}.{}", table.value, column.value));
    }
}

struct Walker<'a, 's, 'c> {
    analyzer: &'a mut Analyzer<'s>,
    scopes: &'a [&'c Scope],
    depth: usize,
    aliases_first: bool,
}

impl Visitor for Walker<'_, '_, '_> {
    type Break = ();

    fn pre_visit_query(&mut self, query: &Query) -> ControlFlow<()> {
        if self.depth == 0 {
            self.analyzer.query(query, self.scopes);
        }
        self.depth += 1;
        ControlFlow::Continue(())
    }

    fn post_visit_query(&mut self, _query: &Query) -> ControlFlow<()> {
        self.depth -= 1;
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<()> {
        if self.depth > 0 {
            return ControlFlow::Continue(());
        }
        match expr {
            Expr::Identifier(id) => self.analyzer.resolve_bare(id, self.scopes, self.aliases_first),
            Expr::CompoundIdentifier(parts) => self.analyzer.resolve_qualified(parts, self.scopes),
            _ => {}
        }
        ControlFlow::Continue(())
    }
}

/// One result cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Real(f) => Some(*f),
            _ => None,
        }
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Null => write!(f, "NULL"),
            Cell::Int(i) => write!(f, "{i}"),
            Cell::Real(r) => write!(f, "{r}"),
            Cell::Text(t) => write!(f, "{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Set when the row cap cut the result short.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ExecOptions {
    pub timeout: Duration,
    pub row_cap: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            row_cap: DEFAULT_ROW_CAP,
        }
    }
}

/// Opens `db_path` read-only.
pub fn open_read_only(db_path: &Path) -> Result<Connection, SqlError> {
    if !db_path.is_file() {
        return Err(SqlError::Open(db_path.display().to_string()));
    }
    let conn = Connection::open_with_flags(db_path, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX)
        .map_err(|e| SqlError::Open(format!("{}: {e}", db_path.display())))?;
    conn.execute_batch("PRAGMA query_only = 1")
        .map_err(|e| SqlError::Engine(e.to_string()))?;
    Ok(conn)
}

pub fn execute_query(sql: &str, db_path: &Path, timeout: Duration) -> Result<ResultTable, SqlError> {
    let conn = open_read_only(db_path)?;
    execute_on(&conn, sql, &ExecOptions { timeout, ..ExecOptions::default() })
}

/// Executes on an open connection; a progress handler enforces the deadline.
pub fn execute_on(conn: &Connection, sql: &str, options: &ExecOptions) -> Result<ResultTable, SqlError> {
    let deadline = Instant::now() + options.timeout;
    conn.progress_handler(1_000, Some(move || Instant::now() >= deadline))
        .map_err(|e| SqlError::Engine(e.to_string()))?;
    let result = run(conn, sql, options.row_cap);
    conn.progress_handler(0, None::<fn() -> bool>)
        .map_err(|e| SqlError::Engine(e.to_string()))?;
    result.map_err(|e| {
        if Instant::now() >= deadline && matches!(e.sqlite_error_code(), Some(rusqlite::ErrorCode::OperationInterrupted)) {
            SqlError::Timeout(options.timeout)
        } else {
            SqlError::Engine(e.to_string())
        }
    })
}

fn run(conn: &Connection, sql: &str, row_cap: usize) -> rusqlite::Result<ResultTable> {
    let mut stmt = conn.prepare(sql)?;
    if !stmt.readonly() {
        return Err(rusqlite::Error::SqliteFailure(
            rusqlite::ffi::Error::new(rusqlite::ffi::SQLITE_READONLY),
            Some("only read-only statements may be executed".into()),
        ));
    }
    let columns: Vec<String> = stmt.column_names().into_iter().map(str::to_string).collect();
    let width = columns.len();
    let mut rows = stmt.query([])?;
    let mut out = Vec::new();
    let mut truncated = false;
    while let Some(row) = rows.next()? {
        if out.len() >= row_cap {
            truncated = true;
            break;
        }
        let mut cells = Vec::with_capacity(width);
        for i in 0..width {
            cells.push(match row.get_ref(i)? {
                rusqlite::types::ValueRef::Null => Cell::Null,
                rusqlite::types::ValueRef::Integer(v) => Cell::Int(v),
                rusqlite::types::ValueRef::Real(v) => Cell::Real(v),
                rusqlite::types::ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                rusqlite::types::ValueRef::Blob(b) => Cell::Text(String::from_utf8_lossy(b).into_owned()),
            });
        }
        out.push(cells);
    }
    Ok(ResultTable { columns, rows: out, truncated })
}
