//! Table-level and column-level sub-schema construction.
//!
//! Table sets are enumerated over a join graph and kept when connected; each
//! table's non-connection columns are shuffled, cut into sliding windows, and the
//! per-table windows are combined by Cartesian product.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{fnv1a, SplitMix64};
use crate::schema::{ColumnRef, DatabaseSchema, JoinGraph, SchemaError};

#[derive(Debug, Error)]
pub enum SubSchemaError {
    #[error("invalid sub-schema config: {0}")]
    Config(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// How windows are laid over a table's shuffled non-connection columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Slide by `s` and stop once a window reaches the last column.
    #[default]
    Covering,
    /// Start a window at every multiple of `s` below the column count.
    Exhaustive,
}

/// Which tables count as directly joinable when testing a table set for connectivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinabilityRule {
    /// Tables sharing a column of the same foreign-key equivalence class.
    #[default]
    SharedKey,
    /// Tables connected by a declared foreign key; the set's induced subgraph must be connected.
    InducedFk,
    /// Any set whose tables lie in one component of the full foreign-key graph.
    AnyPath,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubSchemaConfig {
    pub window_w: usize,
    pub stride_s: usize,
    pub table_counts_tc: Vec<usize>,
    pub shuffle_seed: u64,
    pub window_mode: WindowMode,
    pub joinability: JoinabilityRule,
}

impl Default for SubSchemaConfig {
    fn default() -> Self {
        Self {
            window_w: 3,
            stride_s: 2,
            table_counts_tc: vec![3, 2, 1],
            shuffle_seed: 42,
            window_mode: WindowMode::default(),
            joinability: JoinabilityRule::default(),
        }
    }
}

impl SubSchemaConfig {
    pub fn validate(&self, schema: &DatabaseSchema) -> Result<(), SubSchemaError> {
        if self.window_w == 0 {
            return Err(SubSchemaError::Config("window_w must be at least 1".into()));
        }
        if self.stride_s == 0 {
            return Err(SubSchemaError::Config("stride_s must be at least 1".into()));
        }
        if self.table_counts_tc.is_empty() {
            return Err(SubSchemaError::Config("table_counts_tc must not be empty".into()));
        }
        for &k in &self.table_counts_tc {
            if k == 0 || k > schema.tables.len() {
                return Err(SubSchemaError::Config(format!(
                    "table count {k} outside 1..={}",
                    schema.tables.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TableLevelSubSchema {
    /// Table names sorted case-insensitively.
    pub tables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubSchema {
    pub id: String,
    pub per_table_columns: BTreeMap<String, Vec<String>>,
    pub parent_tables: TableLevelSubSchema,
}

impl SubSchema {
    pub fn columns(&self) -> impl Iterator<Item = ColumnRef> + '_ {
        self.per_table_columns
            .iter()
            .flat_map(|(t, cs)| cs.iter().map(move |c| ColumnRef::new(t, c)))
    }

    pub fn contains(&self, col: &ColumnRef) -> bool {
        self.per_table_columns.iter().any(|(t, cs)| {
            t.eq_ignore_ascii_case(&col.table) && cs.iter().any(|c| c.eq_ignore_ascii_case(&col.column))
        })
    }

    /// Schema block shown to the model: one CREATE TABLE per table with only the
    /// selected columns, sample values as comments, and the foreign keys among them.
    pub fn render(&self, schema: &DatabaseSchema) -> String {
        let mut out = String::new();
        for table_name in &self.parent_tables.tables {
            let Some(table) = schema.table(table_name) else { continue };
            let cols = &self.per_table_columns[table_name];
            out.push_str(&render_table(schema, &table.name, cols, &self.parent_tables.tables));
            out.push('\n');
        }
        out.trim_end().to_string()
    }
}

/// Renders a CREATE TABLE block for `columns` of `table`, with foreign keys whose
/// endpoints both lie inside `visible_tables` and among the rendered columns.
pub fn render_table(schema: &DatabaseSchema, table: &str, columns: &[String], visible_tables: &[String]) -> String {
    let Some(t) = schema.table(table) else {
        return String::new();
    };
    let mut lines = Vec::new();
    for name in columns {
        let Some(c) = t.column(name) else { continue };
        let mut line = format!("  {} {}", crate::schema::quote_ident(&c.name), c.declared_type);
        if t.primary_key.len() == 1 && t.primary_key[0].eq_ignore_ascii_case(&c.name) {
            line.push_str(" PRIMARY KEY");
        }
        let mut notes = Vec::new();
        if let Some(d) = &c.description {
            notes.push(d.clone());
        }
        if !c.sample_values.is_empty() {
            notes.push(format!("examples: {}", c.sample_values.join(", ")));
        }
        lines.push((line, notes));
    }
    let visible = |name: &str| visible_tables.iter().any(|v| v.eq_ignore_ascii_case(name));
    let shown = |name: &str| columns.iter().any(|c| c.eq_ignore_ascii_case(name));
    if t.primary_key.len() > 1 {
        let pk: Vec<String> = t.primary_key.iter().map(|c| crate::schema::quote_ident(c)).collect();
        lines.push((format!("  PRIMARY KEY ({})", pk.join(", ")), Vec::new()));
    }
    for fk in &schema.foreign_keys {
        if fk.from_table.eq_ignore_ascii_case(&t.name) && visible(&fk.to_table) && shown(&fk.from_column) {
            lines.push((
                format!(
                    "  FOREIGN KEY ({}) REFERENCES {}({})",
                    crate::schema::quote_ident(&fk.from_column),
                    crate::schema::quote_ident(&fk.to_table),
                    crate::schema::quote_ident(&fk.to_column)
                ),
                Vec::new(),
            ));
        }
    }
    let mut out = format!("CREATE TABLE {} (\n", crate::schema::quote_ident(&t.name));
    let n = lines.len();
    for (i, (line, notes)) in lines.into_iter().enumerate() {
        out.push_str(&line);
        if i + 1 < n {
            out.push(',');
        }
        if !notes.is_empty() {
            out.push_str(" -- ");
            out.push_str(&notes.join("; "));
        }
        out.push('\n');
    }
    out.push_str(");\n");
    out
}

/// Number of windows the given mode produces over `n` columns.
pub fn window_count(n: usize, w: usize, s: usize, mode: WindowMode) -> usize {
    assert!(w >= 1 && s >= 1, "window and stride must be positive");
    if n == 0 {
        return 1;
    }
    let all_starts = n.div_ceil(s);
    match mode {
        WindowMode::Exhaustive => all_starts,
        WindowMode::Covering => all_starts.min(n.saturating_sub(w).div_ceil(s) + 1),
    }
}

/// Windows at offsets 0, s, 2s, ... while the offset is inside the list.
pub fn column_windows(non_conn: &[String], w: usize, s: usize) -> Vec<Vec<String>> {
    column_windows_with(non_conn, w, s, WindowMode::Exhaustive)
}

pub fn column_windows_with(non_conn: &[String], w: usize, s: usize, mode: WindowMode) -> Vec<Vec<String>> {
    assert!(w >= 1 && s >= 1, "window and stride must be positive");
    if non_conn.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < non_conn.len() {
        let end = (i + w).min(non_conn.len());
        out.push(non_conn[i..end].to_vec());
        if mode == WindowMode::Covering && i + w >= non_conn.len() {
            break;
        }
        i += s;
    }
    out
}

fn build_graph(schema: &DatabaseSchema, rule: JoinabilityRule) -> JoinGraph {
    match rule {
        JoinabilityRule::SharedKey => schema.shared_key_graph(),
        JoinabilityRule::InducedFk | JoinabilityRule::AnyPath => schema.joinable_graph(),
    }
}

/// Connected table sets over the declared foreign-key graph.
pub fn gen_table_level(schema: &DatabaseSchema, tc: &[usize]) -> Vec<TableLevelSubSchema> {
    gen_table_level_with(schema, tc, JoinabilityRule::InducedFk)
}

pub fn gen_table_level_with(schema: &DatabaseSchema, tc: &[usize], rule: JoinabilityRule) -> Vec<TableLevelSubSchema> {
    let graph = build_graph(schema, rule);
    let components = graph.components();
    let n = schema.tables.len();
    let mut sizes: Vec<usize> = tc.iter().copied().filter(|&k| k >= 1 && k <= n).collect();
    sizes.sort_unstable();
    sizes.dedup();

    let mut out = Vec::new();
    for k in sizes {
        for combo in Combinations::new(n, k) {
            let ok = match rule {
                JoinabilityRule::AnyPath => combo.iter().all(|&i| components[i] == components[combo[0]]),
                _ => graph.is_connected_subset(&combo),
            };
            if ok {
                let mut tables: Vec<String> = combo.iter().map(|&i| schema.tables[i].name.clone()).collect();
                tables.sort_by_key(|t| t.to_lowercase());
                out.push(TableLevelSubSchema { tables });
            }
        }
    }
    out.sort_by(|a, b| {
        let ka: Vec<String> = a.tables.iter().map(|t| t.to_lowercase()).collect();
        let kb: Vec<String> = b.tables.iter().map(|t| t.to_lowercase()).collect();
        ka.cmp(&kb).then(a.tables.len().cmp(&b.tables.len()))
    });
    out
}

/// Lexicographic k-combinations of 0..n.
struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            idx: (0..k).collect(),
            done: k > n || k == 0,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let current = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(current)
    }
}

fn name_hash(name: &str) -> u64 {
    fnv1a(name.to_lowercase().as_bytes())
}

/// Per-table column windows, each already prefixed with the connection columns.
fn table_partitions(
    schema: &DatabaseSchema,
    table: &str,
    tlss_index: usize,
    config: &SubSchemaConfig,
) -> Result<Vec<Vec<String>>, SubSchemaError> {
    let t = schema
        .table(table)
        .ok_or_else(|| SchemaError::UnknownTable(table.to_string()))?;
    let conn = schema.connection_columns(table)?;
    let mut non_conn: Vec<String> = t
        .column_names()
        .filter(|c| !conn.iter().any(|k| k.eq_ignore_ascii_case(c)))
        .map(str::to_string)
        .collect();
    let seed = config.shuffle_seed ^ SplitMix64::mix(tlss_index as u64) ^ name_hash(&t.name);
    SplitMix64::new(seed).shuffle(&mut non_conn);
    Ok(column_windows_with(&non_conn, config.window_w, config.stride_s, config.window_mode)
        .into_iter()
        .map(|window| conn.iter().cloned().chain(window).collect())
        .collect())
}

/// Expands each table set into column-level sub-schemas. Output order follows
/// `tlss` order, then the Cartesian product in table order.
pub fn gen_column_level(
    tlss: &[TableLevelSubSchema],
    schema: &DatabaseSchema,
    config: &SubSchemaConfig,
) -> Result<Vec<SubSchema>, SubSchemaError> {
    let per_set: Vec<Result<Vec<SubSchema>, SubSchemaError>> = tlss
        .par_iter()
        .enumerate()
        .map(|(ti, set)| {
            let parts = set
                .tables
                .iter()
                .map(|t| table_partitions(schema, t, ti, config))
                .collect::<Result<Vec<_>, _>>()?;
            let mut out = Vec::new();
            let mut counter = vec![0usize; parts.len()];
            let mut combo = 0usize;
            loop {
                let per_table_columns = set
                    .tables
                    .iter()
                    .zip(&parts)
                    .zip(&counter)
                    .map(|((t, p), &i)| (t.clone(), p[i].clone()))
                    .collect();
                out.push(SubSchema {
                    id: format!("ss{ti:05}-{combo:06}"),
                    per_table_columns,
                    parent_tables: set.clone(),
                });
                combo += 1;
                // odometer increment, last table fastest
                let mut pos = parts.len();
                loop {
                    if pos == 0 {
                        return Ok(out);
                    }
                    pos -= 1;
                    counter[pos] += 1;
                    if counter[pos] < parts[pos].len() {
                        break;
                    }
                    counter[pos] = 0;
                }
            }
        })
        .collect();
    let mut all = Vec::new();
    for r in per_set {
        all.extend(r?);
    }
    Ok(all)
}

pub fn construct_sub_schemas(schema: &DatabaseSchema, config: &SubSchemaConfig) -> Result<Vec<SubSchema>, SubSchemaError> {
    config.validate(schema)?;
    let tlss = gen_table_level_with(schema, &config.table_counts_tc, config.joinability);
    gen_column_level(&tlss, schema, config)
}

/// Closed-form sub-schema count: sum over table sets of the product of window counts.
pub fn count_sub_schemas(schema: &DatabaseSchema, config: &SubSchemaConfig) -> Result<usize, SubSchemaError> {
    config.validate(schema)?;
    let tlss = gen_table_level_with(schema, &config.table_counts_tc, config.joinability);
    let mut total = 0usize;
    for set in &tlss {
        let mut product = 1usize;
        for t in &set.tables {
            let n = schema.table(t).map(|d| d.columns.len()).unwrap_or(0) - schema.connection_columns(t)?.len();
            product *= window_count(n, config.window_w, config.stride_s, config.window_mode);
        }
        total += product;
    }
    Ok(total)
}
