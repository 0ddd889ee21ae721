//! Sub-schema invariants over randomly generated schemas.

use std::collections::{BTreeSet, HashSet};

use proptest::prelude::*;
use t2s_core::schema::{ColumnDef, DatabaseSchema, ForeignKey, TableDef};
use t2s_core::subschema::{
    construct_sub_schemas, count_sub_schemas, gen_table_level_with, JoinabilityRule, SubSchemaConfig, WindowMode,
};

/// Tables `t0..` with an `id` primary key, `extra[i]` plain columns and
/// foreign keys `ti.ref_j -> tj.id` for each `(i, j)` edge.
fn build_schema(extra: &[usize], edges: &[(usize, usize)]) -> DatabaseSchema {
    let m = extra.len();
    let edges: BTreeSet<(usize, usize)> = edges.iter().map(|&(a, b)| (a % m, b % m)).filter(|(a, b)| a != b).collect();
    let tables = (0..m)
        .map(|i| {
            let mut columns = vec![ColumnDef::new("id", "INTEGER")];
            columns.extend((0..extra[i]).map(|c| ColumnDef::new(format!("c{c}"), "TEXT")));
            columns.extend(edges.iter().filter(|e| e.0 == i).map(|e| ColumnDef::new(format!("ref_{}", e.1), "INTEGER")));
            TableDef { name: format!("t{i}"), columns, primary_key: vec!["id".into()] }
        })
        .collect();
    let foreign_keys = edges
        .iter()
        .map(|&(a, b)| ForeignKey {
            from_table: format!("t{a}"),
            from_column: format!("ref_{b}"),
            to_table: format!("t{b}"),
            to_column: "id".into(),
        })
        .collect();
    DatabaseSchema { db_id: "random".into(), tables, foreign_keys }
}

fn connection_oracle(schema: &DatabaseSchema, table: &str) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = schema.table(table).unwrap().primary_key.iter().cloned().collect();
    for fk in &schema.foreign_keys {
        if fk.from_table == table {
            out.insert(fk.from_column.clone());
        }
        if fk.to_table == table {
            out.insert(fk.to_column.clone());
        }
    }
    out
}

fn component_of(schema: &DatabaseSchema, start: &str) -> HashSet<String> {
    let mut seen = HashSet::from([start.to_string()]);
    let mut stack = vec![start.to_string()];
    while let Some(t) = stack.pop() {
        for fk in &schema.foreign_keys {
            for (a, b) in [(&fk.from_table, &fk.to_table), (&fk.to_table, &fk.from_table)] {
                if *a == t && seen.insert(b.clone()) {
                    stack.push(b.clone());
                }
            }
        }
    }
    seen
}

fn schema_strategy() -> impl Strategy<Value = DatabaseSchema> {
    (1usize..=5)
        .prop_flat_map(|m| (prop::collection::vec(0usize..=8, m), prop::collection::vec((0usize..5, 0usize..5), 0..6)))
        .prop_map(|(extra, edges)| build_schema(&extra, &edges))
}

fn config_strategy() -> impl Strategy<Value = SubSchemaConfig> {
    (1usize..=4, 1usize..=4, any::<u64>(), prop::bool::ANY).prop_map(|(w, s, seed, covering)| SubSchemaConfig {
        window_w: w,
        stride_s: s,
        table_counts_tc: vec![1],
        shuffle_seed: seed,
        window_mode: if covering { WindowMode::Covering } else { WindowMode::Exhaustive },
        joinability: JoinabilityRule::SharedKey,
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, ..ProptestConfig::default() })]

    #[test]
    fn subschemas_keep_connections_and_cover_columns(schema in schema_strategy(), mut config in config_strategy(), tc in prop::collection::btree_set(1usize..=3, 1..=3)) {
        config.table_counts_tc = tc.into_iter().filter(|&k| k <= schema.tables.len()).collect();
        prop_assume!(!config.table_counts_tc.is_empty());
        let subs = construct_sub_schemas(&schema, &config).unwrap();
        prop_assert_eq!(subs.len(), count_sub_schemas(&schema, &config).unwrap());
        let ids: HashSet<&str> = subs.iter().map(|s| s.id.as_str()).collect();
        prop_assert_eq!(ids.len(), subs.len());

        let mut seen_cols: BTreeSet<(String, String)> = BTreeSet::new();
        for sub in &subs {
            prop_assert!(config.table_counts_tc.contains(&sub.parent_tables.tables.len()));
            for (table, cols) in &sub.per_table_columns {
                let conn = connection_oracle(&schema, table);
                let cols_set: BTreeSet<String> = cols.iter().cloned().collect();
                prop_assert_eq!(cols_set.len(), cols.len(), "duplicate column");
                prop_assert!(conn.is_subset(&cols_set), "{} lacks connection columns", table);
                prop_assert!(cols.len() - conn.len() <= config.window_w);
                seen_cols.extend(cols.iter().map(|c| (table.clone(), c.clone())));
            }
        }
        // With stride at most the window, every column of every table in some set is shown.
        prop_assume!(config.stride_s <= config.window_w);
        let tables: BTreeSet<&String> = subs.iter().flat_map(|s| s.per_table_columns.keys()).collect();
        for t in tables {
            for c in schema.table(t).unwrap().column_names() {
                prop_assert!(seen_cols.contains(&(t.clone(), c.to_string())), "{}.{} never shown", t, c);
            }
        }
    }

    #[test]
    fn any_path_sets_are_connected_subsets(schema in schema_strategy(), k in 1usize..=3) {
        prop_assume!(k <= schema.tables.len());
        let sets = gen_table_level_with(&schema, &[k], JoinabilityRule::AnyPath);
        let names: Vec<String> = schema.tables.iter().map(|t| t.name.clone()).collect();
        let mut expected = 0usize;
        for mask in 0u32..(1 << names.len()) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let members: Vec<&String> = names.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, n)| n).collect();
            let comp = component_of(&schema, members[0]);
            if members.iter().all(|m| comp.contains(*m)) {
                expected += 1;
            }
        }
        prop_assert_eq!(sets.len(), expected);
        let unique: HashSet<_> = sets.iter().collect();
        prop_assert_eq!(unique.len(), sets.len());
    }

    #[test]
    fn construction_is_deterministic(schema in schema_strategy(), config in config_strategy()) {
        prop_assert_eq!(construct_sub_schemas(&schema, &config).unwrap(), construct_sub_schemas(&schema, &config).unwrap());
    }
}
