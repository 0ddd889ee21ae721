//! Sub-schema driven text-to-SQL data synthesis and evaluation.
//!
//! The crate covers schema introspection, sub-schema construction, SQL analysis
//! and execution, LLM access with record/replay, the synthesis pipeline, schema
//! linking, evaluation metrics, and dataset I/O.

pub mod rng;
pub mod schema;
pub mod subschema;
pub mod sql;
pub mod llm;
pub mod synthesis;
pub mod evaluation;
pub mod linking;
pub mod dataset;
