//! Typed schema model of a file-based SQL database and the foreign-key join graph.
//!
//! Identifier comparisons are case-insensitive; the original spelling is kept for
//! display and for SQL generation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot open database {path}: {source}")]
    Open {
        path: String,
        #[source]
        source: rusqlite::Error,
    },
    #[error("sqlite error while introspecting: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{table}.{column}`")]
    UnknownColumn { table: String, column: String },
    #[error("invalid schema: {0}")]
    Invalid(String),
}

pub type Result<T, E = SchemaError> = std::result::Result<T, E>;

/// Default number of distinct sample values kept per column.
pub const DEFAULT_SAMPLE_CAP: usize = 5;
/// Sample values longer than this many characters are truncated.
pub const SAMPLE_MAX_CHARS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub declared_type: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub sample_values: Vec<String>,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, declared_type: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            declared_type: declared_type.into(),
            description: None,
            sample_values: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    #[serde(default)]
    pub primary_key: Vec<String>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }
}

/// One column pair of a (possibly composite) foreign key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from_table: String,
    pub from_column: String,
    pub to_table: String,
    pub to_column: String,
}

impl ForeignKey {
    fn key(&self) -> (String, String, String, String) {
        (
            self.from_table.to_lowercase(),
            self.from_column.to_lowercase(),
            self.to_table.to_lowercase(),
            self.to_column.to_lowercase(),
        )
    }

    fn is_self_loop(&self) -> bool {
        self.from_table.eq_ignore_ascii_case(&self.to_table)
            && self.from_column.eq_ignore_ascii_case(&self.to_column)
    }

    pub fn touches(&self, table: &str) -> bool {
        self.from_table.eq_ignore_ascii_case(table) || self.to_table.eq_ignore_ascii_case(table)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub db_id: String,
    pub tables: Vec<TableDef>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
}

/// A fully qualified column reference, stored in the schema's original spelling.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        Self {
            table: table.into(),
            column: column.into(),
        }
    }
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

impl DatabaseSchema {
    /// Builds a schema and checks every structural invariant.
    pub fn new(
        db_id: impl Into<String>,
        tables: Vec<TableDef>,
        foreign_keys: Vec<ForeignKey>,
    ) -> Result<Self> {
        let schema = Self {
            db_id: db_id.into(),
            tables,
            foreign_keys,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for t in &self.tables {
            if !seen.insert(t.name.to_lowercase()) {
                return Err(SchemaError::Invalid(format!("duplicate table `{}`", t.name)));
            }
            if t.columns.is_empty() {
                return Err(SchemaError::Invalid(format!("table `{}` has no columns", t.name)));
            }
            let mut cols = BTreeSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.to_lowercase()) {
                    return Err(SchemaError::Invalid(format!(
                        "duplicate column `{}.{}`",
                        t.name, c.name
                    )));
                }
            }
            for pk in &t.primary_key {
                if t.column(pk).is_none() {
                    return Err(SchemaError::UnknownColumn {
                        table: t.name.clone(),
                        column: pk.clone(),
                    });
                }
            }
        }
        for fk in &self.foreign_keys {
            self.check_fk(fk)?;
        }
        Ok(())
    }

    fn check_fk(&self, fk: &ForeignKey) -> Result<()> {
        for (table, column) in [(&fk.from_table, &fk.from_column), (&fk.to_table, &fk.to_column)] {
            let t = self
                .table(table)
                .ok_or_else(|| SchemaError::UnknownTable(table.clone()))?;
            if t.column(column).is_none() {
                return Err(SchemaError::UnknownColumn {
                    table: table.clone(),
                    column: column.clone(),
                });
            }
        }
        if fk.is_self_loop() {
            return Err(SchemaError::Invalid(format!(
                "foreign key {}.{} references itself",
                fk.from_table, fk.from_column
            )));
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn column_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    /// Every column of the database in table order.
    pub fn all_columns(&self) -> Vec<ColumnRef> {
        self.tables
            .iter()
            .flat_map(|t| t.columns.iter().map(|c| ColumnRef::new(&t.name, &c.name)))
            .collect()
    }

    /// Resolves a (table, column) pair to the schema's canonical spelling.
    pub fn resolve_column(&self, table: &str, column: &str) -> Option<ColumnRef> {
        let t = self.table(table)?;
        let c = t.column(column)?;
        Some(ColumnRef::new(&t.name, &c.name))
    }

    /// Primary-key columns plus every column on either side of a foreign key
    /// touching `table`, in the table's column order.
    pub fn connection_columns(&self, table: &str) -> Result<Vec<String>> {
        let t = self
            .table(table)
            .ok_or_else(|| SchemaError::UnknownTable(table.to_string()))?;
        let mut wanted: BTreeSet<String> = t.primary_key.iter().map(|c| c.to_lowercase()).collect();
        for fk in &self.foreign_keys {
            if fk.from_table.eq_ignore_ascii_case(&t.name) {
                wanted.insert(fk.from_column.to_lowercase());
            }
            if fk.to_table.eq_ignore_ascii_case(&t.name) {
                wanted.insert(fk.to_column.to_lowercase());
            }
        }
        Ok(t.columns
            .iter()
            .filter(|c| wanted.contains(&c.name.to_lowercase()))
            .map(|c| c.name.clone())
            .collect())
    }

    /// Undirected table graph with an edge wherever a foreign key connects two
    /// distinct tables.
    pub fn joinable_graph(&self) -> JoinGraph {
        let mut graph = JoinGraph::with_tables(self.tables.iter().map(|t| t.name.clone()).collect());
        for fk in &self.foreign_keys {
            if let (Some(a), Some(b)) = (self.table_index(&fk.from_table), self.table_index(&fk.to_table)) {
                graph.add_edge(a, b);
            }
        }
        graph
    }

    /// Table graph in which two tables are adjacent when they hold columns of the
    /// same foreign-key equivalence class, i.e. they can be joined on one shared
    /// key value even if the declared constraints route through a third table.
    pub fn shared_key_graph(&self) -> JoinGraph {
        let cols = self.all_columns();
        let index: BTreeMap<(String, String), usize> = cols
            .iter()
            .enumerate()
            .map(|(i, c)| ((c.table.to_lowercase(), c.column.to_lowercase()), i))
            .collect();
        let mut parent: Vec<usize> = (0..cols.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let lookup = |t: &str, c: &str| index.get(&(t.to_lowercase(), c.to_lowercase())).copied();
        let mut keyed = BTreeSet::new();
        for fk in &self.foreign_keys {
            if let (Some(a), Some(b)) = (lookup(&fk.from_table, &fk.from_column), lookup(&fk.to_table, &fk.to_column)) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
                keyed.insert(a);
                keyed.insert(b);
            }
        }
        let mut classes: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for &col in &keyed {
            let root = find(&mut parent, col);
            let table = self.table_index(&cols[col].table).expect("column of known table");
            classes.entry(root).or_default().insert(table);
        }
        let mut graph = JoinGraph::with_tables(self.tables.iter().map(|t| t.name.clone()).collect());
        for tables in classes.values() {
            let tables: Vec<usize> = tables.iter().copied().collect();
            for (i, &a) in tables.iter().enumerate() {
                for &b in &tables[i + 1..] {
                    graph.add_edge(a, b);
                }
            }
        }
        graph
    }

    /// Merges extra foreign keys after validating them against real columns.
    /// Duplicates (case-insensitive) are ignored.
    pub fn merge_foreign_keys(&mut self, extra: Vec<ForeignKey>) -> Result<()> {
        for fk in extra {
            self.check_fk(&fk)?;
            let canon = ForeignKey {
                from_table: self.table(&fk.from_table).unwrap().name.clone(),
                from_column: self.table(&fk.from_table).unwrap().column(&fk.from_column).unwrap().name.clone(),
                to_table: self.table(&fk.to_table).unwrap().name.clone(),
                to_column: self.table(&fk.to_table).unwrap().column(&fk.to_column).unwrap().name.clone(),
            };
            if !self.foreign_keys.iter().any(|f| f.key() == canon.key()) {
                self.foreign_keys.push(canon);
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let schema: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        schema.validate()?;
        Ok(schema)
    }
}

/// Simple undirected graph over table indices. No self-loops, no multi-edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinGraph {
    tables: Vec<String>,
    adjacency: Vec<BTreeSet<usize>>,
}

impl JoinGraph {
    pub fn with_tables(tables: Vec<String>) -> Self {
        let adjacency = vec![BTreeSet::new(); tables.len()];
        Self { tables, adjacency }
    }

    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.adjacency[a].insert(b);
            self.adjacency[b].insert(a);
        }
    }

    pub fn tables(&self) -> &[String] {
        &self.tables
    }

    pub fn neighbors(&self, node: usize) -> &BTreeSet<usize> {
        &self.adjacency[node]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].contains(&b)
    }

    /// Edges as sorted name pairs, each reported once.
    pub fn edges(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (a, ns) in self.adjacency.iter().enumerate() {
            for &b in ns.iter().filter(|&&b| b > a) {
                let (x, y) = (&self.tables[a], &self.tables[b]);
                if x <= y {
                    out.push((x.clone(), y.clone()));
                } else {
                    out.push((y.clone(), x.clone()));
                }
            }
        }
        out.sort();
        out
    }

    /// Whether `nodes` induce a connected subgraph. The empty set is not connected.
    pub fn is_connected_subset(&self, nodes: &[usize]) -> bool {
        let Some(&start) = nodes.first() else {
            return false;
        };
        let members: BTreeSet<usize> = nodes.iter().copied().collect();
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            for &m in &self.adjacency[n] {
                if members.contains(&m) && seen.insert(m) {
                    stack.push(m);
                }
            }
        }
        seen.len() == members.len()
    }

    /// Connected component label of every node.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.tables.len()];
        let mut next = 0;
        for s in 0..self.tables.len() {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            let mut stack = vec![s];
            while let Some(n) = stack.pop() {
                for &m in &self.adjacency[n] {
                    if label[m] == usize::MAX {
                        label[m] = next;
                        stack.push(m);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

/// Introspection knobs.
#[derive(Debug, Clone)]
pub struct IntrospectOptions {
    pub sample_cap: usize,
    pub collect_samples: bool,
}

impl Default for IntrospectOptions {
    fn default() -> Self {
        Self {
            sample_cap: DEFAULT_SAMPLE_CAP,
            collect_samples: true,
        }
    }
}

pub fn open_read_only(path: &Path) -> Result<Connection> {
    if !path.is_file() {
        return Err(SchemaError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("database file {} not found", path.display()),
        )));
    }
    Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI,
    )
    .map_err(|source| SchemaError::Open {
        path: path.display().to_string(),
        source,
    })
}

/// Reads the foreign-key override file: a JSON list of
/// `{from_table, from_column, to_table, to_column}` objects.
pub fn read_fk_overrides(path: &Path) -> Result<Vec<ForeignKey>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Introspects `db_path` into a schema, merging optional foreign-key overrides.
pub fn introspect_schema(db_path: &Path, overrides: Option<&Path>) -> Result<DatabaseSchema> {
    introspect_with(db_path, overrides, &IntrospectOptions::default())
}

pub fn introspect_with(
    db_path: &Path,
    overrides: Option<&Path>,
    options: &IntrospectOptions,
) -> Result<DatabaseSchema> {
    let conn = open_read_only(db_path)?;
    let db_id = db_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "db".to_string());

    let mut names: Vec<String> = Vec::new();
    {
        let mut stmt = conn.prepare(
            "SELECT name, COALESCE(sql, '') FROM sqlite_master \
             WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
        )?;
        let rows = stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))?;
        for row in rows {
            let (name, sql) = row?;
            // virtual tables are not part of the relational schema
            if sql.trim_start().to_uppercase().starts_with("CREATE VIRTUAL") {
                continue;
            }
            names.push(name);
        }
    }

    let mut tables = Vec::with_capacity(names.len());
    for name in &names {
        let mut stmt = conn.prepare(&format!("PRAGMA table_info({})", quote_ident(name)))?;
        let mut cols: Vec<(i64, ColumnDef)> = Vec::new();
        let rows = stmt.query_map([], |r| {
            Ok((
                r.get::<_, String>(1)?,
                r.get::<_, Option<String>>(2)?.unwrap_or_default(),
                r.get::<_, i64>(5)?,
            ))
        })?;
        for row in rows {
            let (col, ty, pk) = row?;
            cols.push((pk, ColumnDef::new(col, ty)));
        }
        let mut pk: Vec<(i64, String)> = cols
            .iter()
            .filter(|(p, _)| *p > 0)
            .map(|(p, c)| (*p, c.name.clone()))
            .collect();
        pk.sort();
        let mut columns: Vec<ColumnDef> = cols.into_iter().map(|(_, c)| c).collect();
        if options.collect_samples {
            for col in &mut columns {
                col.sample_values = sample_values(&conn, name, &col.name, options.sample_cap)?;
            }
        }
        tables.push(TableDef {
            name: name.clone(),
            columns,
            primary_key: pk.into_iter().map(|(_, c)| c).collect(),
        });
    }

    let mut schema = DatabaseSchema {
        db_id,
        tables,
        foreign_keys: Vec::new(),
    };

    let mut native = Vec::new();
    for name in &names {
        let mut stmt = conn.prepare(&format!("PRAGMA foreign_key_list({})", quote_ident(name)))?;
        let rows = stmt.query_map([], |r| {
            Ok((
                r.get::<_, i64>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, String>(3)?,
                r.get::<_, Option<String>>(4)?,
            ))
        })?;
        for row in rows {
            let (seq, to_table, from_col, to_col) = row?;
            let Some(parent) = schema.table(&to_table) else {
                tracing::warn!(table = %name, target = %to_table, "foreign key to unknown table ignored");
                continue;
            };
            // a missing target column means the parent's primary key
            let to_col = match to_col {
                Some(c) => c,
                None => match parent.primary_key.get(seq as usize) {
                    Some(c) => c.clone(),
                    None => {
                        tracing::warn!(table = %name, target = %to_table, "foreign key without resolvable target column ignored");
                        continue;
                    }
                },
            };
            let fk = ForeignKey {
                from_table: name.clone(),
                from_column: from_col,
                to_table: parent.name.clone(),
                to_column: to_col,
            };
            if fk.is_self_loop() {
                continue;
            }
            if schema.check_fk(&fk).is_err() {
                tracing::warn!(?fk, "native foreign key references a missing column; ignored");
                continue;
            }
            native.push(fk);
        }
    }
    schema.merge_foreign_keys(native)?;

    if let Some(path) = overrides {
        let extra = read_fk_overrides(path)?;
        schema.merge_foreign_keys(extra)?;
    }
    schema.validate()?;
    Ok(schema)
}

fn sample_values(conn: &Connection, table: &str, column: &str, cap: usize) -> Result<Vec<String>> {
    if cap == 0 {
        return Ok(Vec::new());
    }
    let sql = format!(
        "SELECT DISTINCT {c} FROM {t} WHERE {c} IS NOT NULL LIMIT {cap}",
        c = quote_ident(column),
        t = quote_ident(table)
    );
    let mut stmt = conn.prepare(&sql)?;
    let mut rows = stmt.query([])?;
    let mut out = Vec::new();
    while let Some(row) = rows.next()? {
        let value = match row.get_ref(0)? {
            rusqlite::types::ValueRef::Null => continue,
            rusqlite::types::ValueRef::Integer(i) => i.to_string(),
            rusqlite::types::ValueRef::Real(f) => f.to_string(),
            rusqlite::types::ValueRef::Text(t) => String::from_utf8_lossy(t).into_owned(),
            rusqlite::types::ValueRef::Blob(b) => format!("<blob {} bytes>", b.len()),
        };
        out.push(truncate_chars(&value, SAMPLE_MAX_CHARS));
    }
    Ok(out)
}

fn truncate_chars(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((idx, _)) => s[..idx].to_string(),
        None => s.to_string(),
    }
}

/// Double-quotes an identifier for SQLite.
pub fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(ddl: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.sqlite");
        let conn = Connection::open(&path).unwrap();
        conn.execute_batch(ddl).unwrap();
        (dir, path)
    }

    const TWO_TABLES: &str = "
        CREATE TABLE parent (id INTEGER PRIMARY KEY, name TEXT);
        CREATE TABLE child (cid INTEGER PRIMARY KEY, parent_id INTEGER REFERENCES parent(id), note TEXT);
        INSERT INTO parent VALUES (1, 'a'), (2, 'b');
        INSERT INTO child VALUES (10, 1, 'x');
    ";

    #[test]
    fn introspects_native_foreign_key() {
        let (_d, path) = fixture(TWO_TABLES);
        let schema = introspect_schema(&path, None).unwrap();
        assert_eq!(schema.tables.len(), 2);
        assert_eq!(
            schema.foreign_keys,
            vec![ForeignKey {
                from_table: "child".into(),
                from_column: "parent_id".into(),
                to_table: "parent".into(),
                to_column: "id".into(),
            }]
        );
        assert_eq!(schema.table("PARENT").unwrap().primary_key, vec!["id"]);
        assert_eq!(schema.table("parent").unwrap().column("name").unwrap().sample_values, vec!["a", "b"]);
    }

    #[test]
    fn override_file_adds_foreign_key() {
        let (dir, path) = fixture(
            "CREATE TABLE a (x INTEGER, v TEXT); CREATE TABLE b (y INTEGER PRIMARY KEY, w TEXT);",
        );
        let ov = dir.path().join("fks.json");
        fs::write(
            &ov,
            r#"[{"from_table":"A","from_column":"x","to_table":"b","to_column":"Y"}]"#,
        )
        .unwrap();
        let schema = introspect_schema(&path, Some(&ov)).unwrap();
        assert_eq!(
            schema.foreign_keys,
            vec![ForeignKey {
                from_table: "a".into(),
                from_column: "x".into(),
                to_table: "b".into(),
                to_column: "y".into(),
            }]
        );
    }

    #[test]
    fn override_with_missing_column_is_rejected() {
        let (dir, path) = fixture("CREATE TABLE a (x INTEGER); CREATE TABLE b (y INTEGER);");
        let ov = dir.path().join("fks.json");
        fs::write(
            &ov,
            r#"[{"from_table":"a","from_column":"nope","to_table":"b","to_column":"y"}]"#,
        )
        .unwrap();
        let err = introspect_schema(&path, Some(&ov)).unwrap_err();
        assert!(matches!(err, SchemaError::UnknownColumn { .. }), "{err}");
    }

    #[test]
    fn unreadable_database_is_an_error() {
        assert!(introspect_schema(Path::new("/nonexistent/db.sqlite"), None).is_err());
    }

    #[test]
    fn introspection_is_deterministic() {
        let (_d, path) = fixture(TWO_TABLES);
        let a = introspect_schema(&path, None).unwrap();
        let b = introspect_schema(&path, None).unwrap();
        assert_eq!(a.to_json_pretty(), b.to_json_pretty());
    }

    #[test]
    fn virtual_tables_and_views_are_excluded() {
        let (_d, path) = fixture(
            "CREATE TABLE t (id INTEGER PRIMARY KEY); CREATE VIEW v AS SELECT id FROM t;",
        );
        let schema = introspect_schema(&path, None).unwrap();
        assert_eq!(schema.tables.len(), 1);
    }

    fn schema_with(fks: &[(&str, &str, &str, &str)]) -> DatabaseSchema {
        let t = |name: &str, cols: &[&str], pk: &[&str]| TableDef {
            name: name.into(),
            columns: cols.iter().map(|c| ColumnDef::new(*c, "TEXT")).collect(),
            primary_key: pk.iter().map(|s| s.to_string()).collect(),
        };
        DatabaseSchema::new(
            "t",
            vec![
                t("this", &["id", "ref_id", "v"], &["id"]),
                t("other", &["oid", "t_id", "w"], &["oid"]),
                t("loose", &["a", "b"], &[]),
            ],
            fks.iter()
                .map(|(a, b, c, d)| ForeignKey {
                    from_table: a.to_string(),
                    from_column: b.to_string(),
                    to_table: c.to_string(),
                    to_column: d.to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn connection_columns_cases() {
        let s = schema_with(&[("other", "t_id", "this", "id")]);
        assert_eq!(s.connection_columns("this").unwrap(), vec!["id"]);
        let s = schema_with(&[("this", "ref_id", "other", "oid")]);
        assert_eq!(s.connection_columns("this").unwrap(), vec!["id", "ref_id"]);
        assert!(s.connection_columns("loose").unwrap().is_empty());
        assert!(matches!(s.connection_columns("missing"), Err(SchemaError::UnknownTable(_))));
    }

    #[test]
    fn joinable_graph_deduplicates_and_ignores_direction() {
        let s = schema_with(&[
            ("other", "t_id", "this", "id"),
            ("this", "ref_id", "other", "oid"),
        ]);
        assert_eq!(s.joinable_graph().edges(), vec![("other".into(), "this".into())]);
        let s = schema_with(&[]);
        assert!(s.joinable_graph().edges().is_empty());
    }

    #[test]
    fn self_referencing_column_is_rejected() {
        let mut s = schema_with(&[]);
        let err = s
            .merge_foreign_keys(vec![ForeignKey {
                from_table: "this".into(),
                from_column: "id".into(),
                to_table: "this".into(),
                to_column: "id".into(),
            }])
            .unwrap_err();
        assert!(matches!(err, SchemaError::Invalid(_)));
    }
}
