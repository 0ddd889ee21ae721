//! Schema linking: keyword extraction, keyword-pair retrieval over a synthetic
//! corpus, LSH value matching, LLM column filtering and filtered-schema assembly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evaluation::LinkedSchema;
use crate::llm::parse::{parse_json_object, parse_string_list, string_list, JsonKind};
use crate::llm::template::{self, bindings};
use crate::llm::{Gateway, LlmError, LlmRequest, Purpose};
use crate::rng::{fnv1a, SplitMix64};
use crate::schema::{self, ColumnRef, DatabaseSchema, SchemaError};
use crate::sql;
use crate::subschema::render_table;
use crate::synthesis::T2SExample;

#[derive(Debug, Error)]
pub enum LinkingError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("index file: {0}")]
    IndexFile(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Lowercase alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "being",
    "between", "both", "but", "by", "can", "could", "did", "do", "does", "each", "find", "for", "from", "give",
    "had", "has", "have", "how", "i", "if", "in", "into", "is", "it", "its", "list", "many", "me", "much", "name",
    "not", "of", "on", "or", "other", "please", "provide", "show", "state", "tell", "than", "that", "the", "their",
    "them", "then", "there", "these", "they", "this", "those", "to", "was", "were", "what", "when", "where",
    "which", "who", "whom", "whose", "why", "will", "with", "would", "you", "your",
];

/// Stopword-filtered content words of the question, then the hint, first occurrence kept.
pub fn fallback_keywords(question: &str, hint: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    tokenize(question)
        .into_iter()
        .chain(tokenize(hint))
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub keywords: Vec<String>,
    pub pairs: Vec<(String, String)>,
}

impl KeywordSet {
    /// Deduplicates keywords case-insensitively and forms every unordered pair,
    /// each stored as (smaller, larger) and sorted; a lone keyword pairs with itself.
    pub fn from_keywords(raw: impl IntoIterator<Item = String>) -> Self {
        let mut seen = BTreeSet::new();
        let keywords: Vec<String> = raw
            .into_iter()
            .map(|k| k.trim().to_string())
            .filter(|k| !k.is_empty() && seen.insert(k.to_lowercase()))
            .collect();
        let mut pairs = Vec::new();
        if keywords.len() == 1 {
            pairs.push((keywords[0].clone(), keywords[0].clone()));
        }
        for i in 0..keywords.len() {
            for j in i + 1..keywords.len() {
                let (a, b) = (&keywords[i], &keywords[j]);
                pairs.push(if a <= b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) });
            }
        }
        pairs.sort();
        Self { keywords, pairs }
    }
}

/// Model-extracted keywords, or the fallback tokenizer without a gateway or on failure.
pub fn extract_keywords(question: &str, hint: &str, gateway: Option<&Gateway>) -> KeywordSet {
    if let Some(gw) = gateway {
        let b = bindings([("QUESTION", question), ("HINT", hint)]);
        let result = LlmRequest::from_template(template::KEYWORDS, &b, Purpose::Keywords)
            .and_then(|req| gw.complete(&req))
            .and_then(|resp| parse_string_list(&resp.text));
        match result {
            Ok(k) if !k.is_empty() => return KeywordSet::from_keywords(k),
            Ok(_) => tracing::warn!("keyword extraction returned nothing; using fallback"),
            Err(e) => tracing::warn!(error = %e, "keyword extraction failed; using fallback"),
        }
    }
    KeywordSet::from_keywords(fallback_keywords(question, hint))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

pub const INDEX_FORMAT_VERSION: u32 = 1;

/// Immutable BM25 index over example documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub version: u32,
    pub corpus_digest: String,
    pub params: Bm25Params,
    ids: Vec<String>,
    lengths: Vec<u32>,
    avgdl: f64,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

fn digest_docs(docs: &[(String, String)]) -> String {
    let mut h = Sha256::new();
    for (id, text) in docs {
        h.update(id.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

/// Document text for an example: question followed by SQL.
pub fn example_document(e: &T2SExample) -> String {
    format!("{} {}", e.question, e.sql)
}

pub fn build_example_index(corpus: &[T2SExample], params: Bm25Params) -> Result<Bm25Index, LinkingError> {
    Bm25Index::build(corpus.iter().map(|e| (e.id.clone(), example_document(e))).collect(), params)
}

impl Bm25Index {
    pub fn build(docs: Vec<(String, String)>, params: Bm25Params) -> Result<Self, LinkingError> {
        if docs.is_empty() {
            return Err(LinkingError::EmptyCorpus);
        }
        let corpus_digest = digest_docs(&docs);
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut ids = Vec::with_capacity(docs.len());
        let mut lengths = Vec::with_capacity(docs.len());
        for (i, (id, text)) in docs.into_iter().enumerate() {
            let tokens = tokenize(&text);
            lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((i as u32, n));
            }
            ids.push(id);
        }
        let avgdl = lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / ids.len() as f64;
        Ok(Self { version: INDEX_FORMAT_VERSION, corpus_digest, params, ids, lengths, avgdl, postings })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Scores of documents sharing at least one distinct query term.
    fn scores(&self, query: &str) -> HashMap<u32, f64> {
        let Bm25Params { k1, b } = self.params;
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for t in terms {
            let Some(list) = self.postings.get(&t) else { continue };
            let idf = self.idf(&t);
            for &(doc, tf) in list {
                let tf = f64::from(tf);
                let norm = 1.0 - b + b * f64::from(self.lengths[doc as usize]) / self.avgdl;
                *scores.entry(doc).or_insert(0.0) += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
        }
        scores
    }

    /// Matching documents by descending score, ties by id.
    pub fn search(&self, query: &str, top_n: usize) -> Vec<(String, f64)> {
        let mut ranked: Vec<(String, f64)> =
            self.scores(query).into_iter().map(|(d, s)| (self.ids[d as usize].clone(), s)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(top_n);
        ranked
    }

    pub fn save(&self, path: &Path) -> Result<(), LinkingError> {
        fs::write(path, serde_json::to_vec(self).map_err(|e| LinkingError::IndexFile(e.to_string()))?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LinkingError> {
        let idx: Self = serde_json::from_slice(&fs::read(path)?).map_err(|e| LinkingError::IndexFile(e.to_string()))?;
        if idx.version != INDEX_FORMAT_VERSION {
            return Err(LinkingError::IndexFile(format!("unsupported version {}", idx.version)));
        }
        Ok(idx)
    }
}

/// A ranking backend over the example corpus.
pub trait Retriever: Sync {
    /// Candidates for `query` by descending relevance, ties by id; non-matching documents are omitted.
    fn rank(&self, query: &str, top_n: usize) -> Vec<(String, f64)>;
    /// Scores for the given candidate ids; non-matching candidates score zero.
    fn score_candidates(&self, query: &str, candidates: &[String]) -> Vec<(String, f64)>;
}

impl Retriever for Bm25Index {
    fn rank(&self, query: &str, top_n: usize) -> Vec<(String, f64)> {
        self.search(query, top_n)
    }

    fn score_candidates(&self, query: &str, candidates: &[String]) -> Vec<(String, f64)> {
        let scores = self.scores(query);
        let pos: HashMap<&str, u32> = self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i as u32)).collect();
        candidates
            .iter()
            .filter_map(|c| pos.get(c.as_str()).map(|&d| (c.clone(), scores.get(&d).copied().unwrap_or(0.0))))
            .collect()
    }
}

/// Top-1 document for each pair (pairs processed in sorted order), deduplicated.
pub fn retrieve_per_pair(index: &dyn Retriever, pairs: &[(String, String)]) -> Vec<String> {
    let mut sorted: Vec<&(String, String)> = pairs.iter().collect();
    sorted.sort();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (a, b) in sorted {
        let query = if a == b { a.clone() } else { format!("{a} {b}") };
        if let Some((id, _)) = index.rank(&query, 1).into_iter().next() {
            if seen.insert(id.clone()) {
                out.push(id);
            }
        }
    }
    out
}

/// Re-scores candidates against the whole question and keeps the best `k`, ties by id.
pub fn select_topk(question: &str, candidates: &[String], index: &dyn Retriever, k: usize) -> Vec<String> {
    let mut scored = index.score_candidates(question, candidates);
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.dedup_by(|a, b| a.0 == b.0);
    scored.into_iter().take(k).map(|(id, _)| id).collect()
}

/// Feature-hashing bag-of-words embedder; deterministic and dependency free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

impl HashingEmbedder {
    /// L2-normalized signed token counts; all zeros for text without tokens.
    pub fn embed(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        for t in tokenize(text) {
            let h = fnv1a(t.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

/// Dense retriever using cosine similarity over embedded documents.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    embedder: HashingEmbedder,
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
}

impl VectorIndex {
    pub fn build(docs: Vec<(String, String)>, embedder: HashingEmbedder) -> Result<Self, LinkingError> {
        if docs.is_empty() {
            return Err(LinkingError::EmptyCorpus);
        }
        let vectors = docs.par_iter().map(|(_, t)| embedder.embed(t)).collect();
        Ok(Self { embedder, ids: docs.into_iter().map(|(id, _)| id).collect(), vectors })
    }

    pub fn from_examples(corpus: &[T2SExample], embedder: HashingEmbedder) -> Result<Self, LinkingError> {
        Self::build(corpus.iter().map(|e| (e.id.clone(), example_document(e))).collect(), embedder)
    }

    fn similarity(&self, q: &[f32], doc: usize) -> f64 {
        f64::from(q.iter().zip(&self.vectors[doc]).map(|(a, b)| a * b).sum::<f32>())
    }
}

impl Retriever for VectorIndex {
    fn rank(&self, query: &str, top_n: usize) -> Vec<(String, f64)> {
        let q = self.embedder.embed(query);
        let mut ranked: Vec<(String, f64)> = (0..self.ids.len())
            .map(|d| (self.ids[d].clone(), self.similarity(&q, d)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(top_n);
        ranked
    }

    fn score_candidates(&self, query: &str, candidates: &[String]) -> Vec<(String, f64)> {
        let q = self.embedder.embed(query);
        let pos: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        candidates
            .iter()
            .filter_map(|c| pos.get(c.as_str()).map(|&d| (c.clone(), self.similarity(&q, d).max(0.0))))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LshConfig {
    pub num_perm: usize,
    pub bands: usize,
    pub rows: usize,
    pub threshold: f64,
    /// Longer values are not indexed.
    pub max_value_len: usize,
    pub seed: u64,
}

impl Default for LshConfig {
    fn default() -> Self {
        Self { num_perm: 128, bands: 32, rows: 4, threshold: 0.4, max_value_len: 100, seed: 7 }
    }
}

impl LshConfig {
    pub fn validate(&self) -> Result<(), LinkingError> {
        if self.bands * self.rows != self.num_perm || self.num_perm == 0 {
            return Err(LinkingError::Config("bands x rows must equal num_perm".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(LinkingError::Config("threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Character 3-grams of the lowercased string; shorter strings form one shingle.
pub fn shingles(s: &str) -> BTreeSet<String> {
    let chars: Vec<char> = s.to_lowercase().chars().collect();
    if chars.is_empty() {
        return BTreeSet::new();
    }
    if chars.len() < 3 {
        return [chars.iter().collect()].into();
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn minhash(shingles: &BTreeSet<String>, config: &LshConfig) -> Vec<u64> {
    let hashes: Vec<u64> = shingles.iter().map(|s| fnv1a(s.as_bytes())).collect();
    (0..config.num_perm)
        .map(|i| {
            let salt = SplitMix64::mix(config.seed ^ SplitMix64::mix(i as u64));
            hashes.iter().map(|&h| SplitMix64::mix(h ^ salt)).min().unwrap_or(u64::MAX)
        })
        .collect()
}

fn estimate(a: &[u64], b: &[u64]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ValueEntry {
    pub table: String,
    pub column: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityHit {
    pub table: String,
    pub column: String,
    pub value: String,
    pub score: f64,
}

/// MinHash LSH over distinct text cell values.
#[derive(Debug, Clone)]
pub struct ValueIndex {
    config: LshConfig,
    entries: Vec<ValueEntry>,
    signatures: Vec<Vec<u64>>,
    buckets: Vec<HashMap<u64, Vec<u32>>>,
}

impl ValueIndex {
    pub fn from_entries(entries: Vec<ValueEntry>, config: LshConfig) -> Result<Self, LinkingError> {
        config.validate()?;
        let mut entries = entries;
        entries.sort();
        entries.dedup();
        let signatures: Vec<Vec<u64>> = entries.par_iter().map(|e| minhash(&shingles(&e.value), &config)).collect();
        let mut buckets = vec![HashMap::new(); config.bands];
        for (i, sig) in signatures.iter().enumerate() {
            for (band, bucket) in buckets.iter_mut().enumerate() {
                bucket.entry(band_hash(sig, band, config.rows)).or_insert_with(Vec::new).push(i as u32);
            }
        }
        Ok(Self { config, entries, signatures, buckets })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ValueEntry] {
        &self.entries
    }

    /// Values whose estimated Jaccard similarity with `keyword` reaches the threshold,
    /// best first, ties by (table, column, value).
    pub fn query(&self, keyword: &str) -> Vec<EntityHit> {
        let sh = shingles(keyword);
        if sh.is_empty() {
            return Vec::new();
        }
        let sig = minhash(&sh, &self.config);
        let mut candidates = BTreeSet::new();
        for (band, bucket) in self.buckets.iter().enumerate() {
            if let Some(list) = bucket.get(&band_hash(&sig, band, self.config.rows)) {
                candidates.extend(list.iter().copied());
            }
        }
        let mut hits: Vec<EntityHit> = candidates
            .into_iter()
            .filter_map(|i| {
                let score = estimate(&sig, &self.signatures[i as usize]);
                let e = &self.entries[i as usize];
                (score >= self.config.threshold).then(|| EntityHit {
                    table: e.table.clone(),
                    column: e.column.clone(),
                    value: e.value.clone(),
                    score,
                })
            })
            .collect();
        sort_hits(&mut hits);
        hits
    }
}

fn band_hash(sig: &[u64], band: usize, rows: usize) -> u64 {
    sig[band * rows..(band + 1) * rows].iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &x| SplitMix64::mix(h ^ x))
}

fn sort_hits(hits: &mut [EntityHit]) {
    hits.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| (&a.table, &a.column, &a.value).cmp(&(&b.table, &b.column, &b.value)))
    });
}

/// Indexes the distinct text values of every column in the database.
pub fn build_value_index(db_path: &Path, db_schema: &DatabaseSchema, config: LshConfig) -> Result<ValueIndex, LinkingError> {
    let conn = schema::open_read_only(db_path)?;
    let mut entries = Vec::new();
    for t in &db_schema.tables {
        for c in &t.columns {
            let q = format!(
                "SELECT DISTINCT {col} FROM {tab} WHERE typeof({col}) = 'text' AND length({col}) <= {max}",
                col = schema::quote_ident(&c.name),
                tab = schema::quote_ident(&t.name),
                max = config.max_value_len
            );
            let mut stmt = conn.prepare(&q).map_err(SchemaError::from)?;
            let rows = stmt.query_map([], |r| r.get::<_, String>(0)).map_err(SchemaError::from)?;
            for v in rows {
                let value = v.map_err(SchemaError::from)?;
                if !value.trim().is_empty() {
                    entries.push(ValueEntry { table: t.name.clone(), column: c.name.clone(), value });
                }
            }
        }
    }
    ValueIndex::from_entries(entries, config)
}

/// Best hit per (table, column, value) over all keywords.
pub fn match_entities(index: &ValueIndex, keywords: &[String]) -> Vec<EntityHit> {
    let mut best: BTreeMap<(String, String, String), f64> = BTreeMap::new();
    for k in keywords {
        for h in index.query(k) {
            let slot = best.entry((h.table, h.column, h.value)).or_insert(0.0);
            *slot = slot.max(h.score);
        }
    }
    let mut hits: Vec<EntityHit> =
        best.into_iter().map(|((table, column, value), score)| EntityHit { table, column, value, score }).collect();
    sort_hits(&mut hits);
    hits
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSelection {
    pub columns: Vec<String>,
    pub diagnostics: Vec<String>,
}

/// Few-shot block for the column filter and candidate generation prompts.
pub fn format_examples(examples: &[&T2SExample]) -> String {
    if examples.is_empty() {
        return "### Examples\n(none)".to_string();
    }
    let mut s = String::from("### Examples");
    for (i, e) in examples.iter().enumerate() {
        s.push_str(&format!("\nExample {}:\nQuestion: {}\nSQL: {}\n", i + 1, e.question.trim(), e.sql.trim()));
    }
    s
}

/// Strips quoting and an optional `table.` prefix from a model-returned column name.
fn clean_column_name<'a>(raw: &'a str, table: &str) -> &'a str {
    let s = raw.trim().trim_matches(|c| c == '`' || c == '"' || c == '\'' || c == '[' || c == ']');
    match s.split_once('.') {
        Some((t, c)) if t.trim_matches(|c| c == '`' || c == '"').eq_ignore_ascii_case(table) => {
            c.trim_matches(|c| c == '`' || c == '"')
        }
        _ => s,
    }
}

/// Asks the model which columns of `table` the question needs.
pub fn filter_columns_llm(
    db_schema: &DatabaseSchema,
    table: &str,
    question_and_hint: &str,
    examples: &[&T2SExample],
    gateway: &Gateway,
) -> Result<ColumnSelection, LinkingError> {
    let t = db_schema.table(table).ok_or_else(|| SchemaError::UnknownTable(table.to_string()))?;
    let visible: Vec<String> = db_schema.tables.iter().map(|t| t.name.clone()).collect();
    let all: Vec<String> = t.column_names().map(str::to_string).collect();
    let table_schema = render_table(db_schema, &t.name, &all, &visible);
    let examples_text = format_examples(examples);
    let b = bindings([
        ("TABLE_SCHEMA", table_schema.as_str()),
        ("EXAMPLES", examples_text.as_str()),
        ("QUESTION_AND_HINT", question_and_hint),
    ]);
    let req = LlmRequest::from_template(template::COLUMN_FILTER, &b, Purpose::ColumnFilter)?;
    let resp = gateway.complete(&req)?;
    let mut sel = ColumnSelection::default();
    let obj = match parse_json_object(&resp.text, &[("selected_columns", JsonKind::StringList)]) {
        Ok(o) => o,
        Err(e) => {
            sel.diagnostics.push(format!("{}: unparseable selection: {e}", t.name));
            return Ok(sel);
        }
    };
    for raw in string_list(&obj, "selected_columns") {
        match t.column(clean_column_name(&raw, &t.name)) {
            Some(c) if !sel.columns.contains(&c.name) => sel.columns.push(c.name.clone()),
            Some(_) => {}
            None => sel.diagnostics.push(format!("{}: no column `{raw}`", t.name)),
        }
    }
    Ok(sel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Connection,
    Retrieval,
    Entity,
    Llm,
}

/// Every table of the database with the columns kept for one question.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredSchema {
    pub db_id: String,
    /// Table name to column name to the stages that added it.
    pub tables: BTreeMap<String, BTreeMap<String, BTreeSet<Provenance>>>,
}

impl FilteredSchema {
    pub fn column_refs(&self) -> BTreeSet<ColumnRef> {
        self.tables
            .iter()
            .flat_map(|(t, cols)| cols.keys().map(move |c| ColumnRef::new(t, c)))
            .collect()
    }

    pub fn to_linked(&self) -> LinkedSchema {
        LinkedSchema { tables: self.tables.keys().cloned().collect(), columns: self.column_refs() }
    }

    /// CREATE TABLE blocks restricted to the kept columns, in schema column order.
    pub fn render(&self, db_schema: &DatabaseSchema) -> String {
        let visible: Vec<String> = self.tables.keys().cloned().collect();
        let mut out = String::new();
        for t in &db_schema.tables {
            let Some(kept) = self.tables.get(&t.name) else { continue };
            let cols: Vec<String> = t.columns.iter().filter(|c| kept.contains_key(&c.name)).map(|c| c.name.clone()).collect();
            out.push_str(&render_table(db_schema, &t.name, &cols, &visible));
            out.push('\n');
        }
        out
    }
}

/// Union of connection columns, model selections, entity-hit columns and columns
/// used by retrieved examples, over all tables.
pub fn assemble_filtered_schema(
    db_schema: &DatabaseSchema,
    llm_selections: &BTreeMap<String, Vec<String>>,
    entity_hits: &[EntityHit],
    retrieved_columns: &BTreeSet<ColumnRef>,
) -> Result<FilteredSchema, LinkingError> {
    let mut fs = FilteredSchema { db_id: db_schema.db_id.clone(), tables: BTreeMap::new() };
    for t in &db_schema.tables {
        let entry = fs.tables.entry(t.name.clone()).or_default();
        for c in db_schema.connection_columns(&t.name)? {
            entry.entry(c).or_default().insert(Provenance::Connection);
        }
    }
    let mut add = |table: &str, column: &str, p: Provenance| -> Result<(), LinkingError> {
        let r = db_schema
            .resolve_column(table, column)
            .ok_or_else(|| SchemaError::UnknownColumn { table: table.to_string(), column: column.to_string() })?;
        fs.tables.entry(r.table).or_default().entry(r.column).or_default().insert(p);
        Ok(())
    };
    for (table, cols) in llm_selections {
        for c in cols {
            add(table, c, Provenance::Llm)?;
        }
    }
    for h in entity_hits {
        add(&h.table, &h.column, Provenance::Entity)?;
    }
    for c in retrieved_columns {
        add(&c.table, &c.column, Provenance::Retrieval)?;
    }
    Ok(fs)
}

/// Retrieval configurations: backend, candidate restriction and whether the model filters columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkingMode {
    #[serde(rename = "bm25-top6")]
    Bm25Top6,
    #[serde(rename = "bm25-all")]
    Bm25All,
    #[serde(rename = "bm25-top6+llm")]
    Bm25Top6Llm,
    #[serde(rename = "vec-top6")]
    VecTop6,
    #[serde(rename = "vec-all")]
    VecAll,
    #[serde(rename = "vec-top6+llm")]
    VecTop6Llm,
}

impl LinkingMode {
    pub const ALL: [LinkingMode; 6] = [
        LinkingMode::Bm25Top6,
        LinkingMode::Bm25All,
        LinkingMode::Bm25Top6Llm,
        LinkingMode::VecTop6,
        LinkingMode::VecAll,
        LinkingMode::VecTop6Llm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LinkingMode::Bm25Top6 => "bm25-top6",
            LinkingMode::Bm25All => "bm25-all",
            LinkingMode::Bm25Top6Llm => "bm25-top6+llm",
            LinkingMode::VecTop6 => "vec-top6",
            LinkingMode::VecAll => "vec-all",
            LinkingMode::VecTop6Llm => "vec-top6+llm",
        }
    }

    pub fn uses_vectors(self) -> bool {
        matches!(self, LinkingMode::VecTop6 | LinkingMode::VecAll | LinkingMode::VecTop6Llm)
    }

    pub fn uses_llm(self) -> bool {
        matches!(self, LinkingMode::Bm25Top6Llm | LinkingMode::VecTop6Llm)
    }

    pub fn keeps_all(self) -> bool {
        matches!(self, LinkingMode::Bm25All | LinkingMode::VecAll)
    }
}

impl std::str::FromStr for LinkingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LinkingMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown linking mode `{s}`"))
    }
}

pub const TOP_K: usize = 6;

/// Per-database linking resources.
pub struct LinkContext<'a> {
    pub schema: &'a DatabaseSchema,
    pub corpus: &'a [T2SExample],
    pub bm25: &'a Bm25Index,
    pub vectors: Option<&'a VectorIndex>,
    pub values: Option<&'a ValueIndex>,
    pub gateway: Option<&'a Gateway>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkOutcome {
    pub mode: LinkingMode,
    pub keywords: KeywordSet,
    pub retrieved: Vec<String>,
    pub few_shots: Vec<String>,
    pub entity_hits: Vec<EntityHit>,
    pub filtered: FilteredSchema,
    pub diagnostics: Vec<String>,
}

/// Links one question under `mode`. Without a gateway the +LLM modes fall back
/// to their retrieval-only counterpart and say so in the diagnostics.
pub fn link_question(ctx: &LinkContext<'_>, question: &str, hint: &str, mode: LinkingMode) -> Result<LinkOutcome, LinkingError> {
    let mut diagnostics = Vec::new();
    let keywords = extract_keywords(question, hint, ctx.gateway);
    let retriever: &dyn Retriever = match (mode.uses_vectors(), ctx.vectors) {
        (true, Some(v)) => v,
        (true, None) => {
            diagnostics.push("no vector index; using BM25".into());
            ctx.bm25
        }
        (false, _) => ctx.bm25,
    };
    let retrieved = retrieve_per_pair(retriever, &keywords.pairs);
    let query = if hint.trim().is_empty() { question.to_string() } else { format!("{question} {hint}") };
    let few_shots = select_topk(&query, &retrieved, retriever, TOP_K);
    let entity_hits = ctx.values.map(|v| match_entities(v, &keywords.keywords)).unwrap_or_default();

    let by_id: HashMap<&str, &T2SExample> = ctx.corpus.iter().map(|e| (e.id.as_str(), e)).collect();
    let shots: Vec<&T2SExample> = few_shots.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect();

    let mut llm_selections = BTreeMap::new();
    let mut retrieved_columns = BTreeSet::new();
    let llm = if mode.uses_llm() { ctx.gateway } else { None };
    if let Some(gw) = llm {
        let qh = if hint.trim().is_empty() { question.to_string() } else { format!("{question}\nHint: {hint}") };
        let results: Vec<(String, Result<ColumnSelection, LinkingError>)> = ctx
            .schema
            .tables
            .par_iter()
            .map(|t| (t.name.clone(), filter_columns_llm(ctx.schema, &t.name, &qh, &shots, gw)))
            .collect();
        for (table, r) in results {
            match r {
                Ok(sel) => {
                    diagnostics.extend(sel.diagnostics);
                    llm_selections.insert(table, sel.columns);
                }
                Err(e) => diagnostics.push(format!("{table}: column filter failed: {e}")),
            }
        }
    } else {
        if mode.uses_llm() {
            diagnostics.push("no gateway; column filter skipped".into());
        }
        let source: Vec<&T2SExample> = if mode.keeps_all() {
            retrieved.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect()
        } else {
            shots.clone()
        };
        for e in source {
            match sql::extract_schema_elements(&e.sql, ctx.schema) {
                Ok(p) => retrieved_columns.extend(p.referenced),
                Err(err) => diagnostics.push(format!("{}: {err}", e.id)),
            }
        }
    }
    let filtered = assemble_filtered_schema(ctx.schema, &llm_selections, &entity_hits, &retrieved_columns)?;
    Ok(LinkOutcome { mode, keywords, retrieved, few_shots, entity_hits, filtered, diagnostics })
}

/// Candidate-generation request over a filtered schema with few-shot examples.
pub fn candidate_request(
    db_schema: &DatabaseSchema,
    question: &str,
    hint: &str,
    filtered: &FilteredSchema,
    few_shots: &[&T2SExample],
) -> Result<LlmRequest, LlmError> {
    let mut augmentation = format!("### Database schema\n{}", filtered.render(db_schema));
    augmentation.push('\n');
    augmentation.push_str(&format_examples(few_shots));
    let q = if hint.trim().is_empty() { question.to_string() } else { format!("{question}\nHint: {hint}") };
    let b = bindings([("DB_ID", db_schema.db_id.as_str()), ("AUGMENTATION", augmentation.as_str()), ("QUESTION", q.as_str())]);
    LlmRequest::from_template(template::SQL_GENERATION, &b, Purpose::TranslateCandidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::{Level, Round};

    fn ex(id: &str, q: &str, s: &str) -> T2SExample {
        T2SExample {
            id: id.into(),
            db_id: "d".into(),
            subschema_id: "s".into(),
            sql: s.into(),
            question: q.into(),
            difficulty: Level::Simple,
            reasoning: None,
            judge_verdict: true,
            executable: true,
            repaired: false,
            round: Round::Initial,
            extra: Default::default(),
        }
    }

    #[test]
    fn fallback_tokenizer_example() {
        let k = extract_keywords("Show FRPM rate for charter schools", "", None);
        assert_eq!(k.keywords, vec!["frpm", "rate", "charter", "schools"]);
        assert_eq!(k.pairs.len(), 6);
        assert!(k.pairs.iter().all(|(a, b)| a < b && k.keywords.contains(a) && k.keywords.contains(b)));
    }

    #[test]
    fn single_keyword_pairs_with_itself() {
        let k = KeywordSet::from_keywords(["Fresno".to_string(), "fresno".to_string()]);
        assert_eq!(k.pairs, vec![("Fresno".to_string(), "Fresno".to_string())]);
        assert!(KeywordSet::from_keywords(Vec::new()).pairs.is_empty());
    }

    /// Textbook BM25 written out term by term.
    fn oracle(docs: &[&str], query: &str, doc: usize) -> f64 {
        let toks: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d)).collect();
        let n = docs.len() as f64;
        let avg = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let mut s = 0.0;
        for t in &terms {
            let df = toks.iter().filter(|d| d.contains(t)).count() as f64;
            let tf = toks[doc].iter().filter(|x| *x == t).count() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            s += idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * toks[doc].len() as f64 / avg));
        }
        s
    }

    #[test]
    fn bm25_matches_hand_computation() {
        let docs = ["schools in fresno county", "charter schools with zebra funding", "average scores of schools"];
        let idx = Bm25Index::build(docs.iter().enumerate().map(|(i, d)| (format!("d{i}"), d.to_string())).collect(), Bm25Params::default()).unwrap();
        let hits = idx.search("zebra schools", 10);
        assert_eq!(hits[0].0, "d1");
        for (id, score) in &hits {
            let i: usize = id[1..].parse().unwrap();
            assert!((score - oracle(&docs, "zebra schools", i)).abs() < 1e-9);
        }
        assert!(idx.search("quokka", 10).is_empty());
    }

    #[test]
    fn bm25_ties_by_id() {
        let idx = Bm25Index::build(vec![("b".into(), "same text".into()), ("a".into(), "same text".into())], Bm25Params::default()).unwrap();
        let hits = idx.search("text", 10);
        assert_eq!(hits[0].0, "a");
        assert_eq!(hits[0].1, hits[1].1);
        assert!(matches!(Bm25Index::build(vec![], Bm25Params::default()), Err(LinkingError::EmptyCorpus)));
    }

    #[test]
    fn per_pair_retrieval_and_topk() {
        let corpus = vec![ex("e1", "alpha beta", "SELECT 1"), ex("e2", "gamma delta", "SELECT 2"), ex("e3", "other", "SELECT 3")];
        let idx = build_example_index(&corpus, Bm25Params::default()).unwrap();
        let pairs = vec![("gamma".to_string(), "delta".to_string()), ("alpha".to_string(), "beta".to_string())];
        assert_eq!(retrieve_per_pair(&idx, &pairs), vec!["e1", "e2"]);
        let same = vec![("alpha".to_string(), "beta".to_string()); 6];
        assert_eq!(retrieve_per_pair(&idx, &same), vec!["e1"]);
        assert!(retrieve_per_pair(&idx, &[]).is_empty());
        let cands: Vec<String> = vec!["e3".into(), "e1".into(), "e2".into()];
        assert_eq!(select_topk("gamma", &cands, &idx, 2), vec!["e2", "e1"]);
        assert_eq!(select_topk("gamma", &cands, &idx, 10).len(), 3);
    }

    #[test]
    fn vector_retriever_ranks_overlap_first() {
        let corpus = vec![ex("e1", "alpha beta", "SELECT a"), ex("e2", "gamma delta", "SELECT g")];
        let idx = VectorIndex::from_examples(&corpus, HashingEmbedder::default()).unwrap();
        assert_eq!(idx.rank("gamma", 1)[0].0, "e2");
        assert!(idx.rank("", 5).is_empty());
    }

    #[test]
    fn lsh_identical_and_typo() {
        let entries = vec![
            ValueEntry { table: "schools".into(), column: "City".into(), value: "Los Angeles".into() },
            ValueEntry { table: "schools".into(), column: "City".into(), value: "Fresno".into() },
        ];
        let idx = ValueIndex::from_entries(entries, LshConfig::default()).unwrap();
        let hits = idx.query("Los Angeles");
        assert_eq!(hits[0].value, "Los Angeles");
        assert_eq!(hits[0].score, 1.0);
        let exact = jaccard(&shingles("los angles"), &shingles("Los Angeles"));
        assert!((exact - 6.0 / 11.0).abs() < 1e-12);
        let typo = idx.query("los angles");
        assert_eq!(typo.len(), 1);
        assert!((typo[0].score - exact).abs() < 0.15, "estimate {} vs {exact}", typo[0].score);
        assert!(idx.query("zzzzqqqq").is_empty());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in LinkingMode::ALL {
            assert_eq!(m.name().parse::<LinkingMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
    }

    #[test]
    fn clean_names() {
        assert_eq!(clean_column_name("`County`", "schools"), "County");
        assert_eq!(clean_column_name("schools.County", "schools"), "County");
        assert_eq!(clean_column_name("\"Free Meal Count\"", "frpm"), "Free Meal Count");
    }
}
