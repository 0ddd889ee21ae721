//! Prompt templates and placeholder rendering.
//!
//! Placeholders are `{NAME}` with an upper-case name; `{{` and `}}` render as
//! literal braces. Binding values are inserted verbatim.

use std::collections::BTreeMap;

use super::LlmError;

pub const COLUMN_FILTER: &str = "column_filter";
pub const SQL_GENERATION: &str = "sql_generation";
pub const GENERATE_SQL: &str = "generate_sql";
pub const GENERATE_SQL_FOCUS: &str = "generate_sql_focus";
pub const SQL_TO_TEXT: &str = "sql_to_text";
pub const JUDGE: &str = "judge";
pub const REPAIR: &str = "repair";
pub const REASONING: &str = "reasoning";
pub const KEYWORDS: &str = "keywords";

const TEMPLATES: &[(&str, &str)] = &[
    (COLUMN_FILTER, include_str!("../../templates/column_filter.txt")),
    (SQL_GENERATION, include_str!("../../templates/sql_generation.txt")),
    (GENERATE_SQL, include_str!("../../templates/generate_sql.txt")),
    (GENERATE_SQL_FOCUS, include_str!("../../templates/generate_sql_focus.txt")),
    (SQL_TO_TEXT, include_str!("../../templates/sql_to_text.txt")),
    (JUDGE, include_str!("../../templates/judge.txt")),
    (REPAIR, include_str!("../../templates/repair.txt")),
    (REASONING, include_str!("../../templates/reasoning.txt")),
    (KEYWORDS, include_str!("../../templates/keywords.txt")),
];

pub fn template_text(id: &str) -> Option<&'static str> {
    TEMPLATES.iter().find(|(k, _)| *k == id).map(|(_, t)| *t)
}

pub fn template_ids() -> impl Iterator<Item = &'static str> {
    TEMPLATES.iter().map(|(k, _)| *k)
}

enum Piece<'a> {
    Text(&'a str),
    Brace(char),
    Slot(&'a str),
}

fn pieces(template: &str) -> Vec<Piece<'_>> {
    let bytes = template.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let two = bytes.get(i + 1).copied();
        match (bytes[i], two) {
            (b'{', Some(b'{')) | (b'}', Some(b'}')) => {
                out.push(Piece::Text(&template[start..i]));
                out.push(Piece::Brace(bytes[i] as char));
                i += 2;
                start = i;
            }
            (b'{', Some(c)) if c.is_ascii_uppercase() => {
                let end = bytes[i + 1..]
                    .iter()
                    .position(|b| !(b.is_ascii_uppercase() || b.is_ascii_digit() || *b == b'_'))
                    .map(|p| i + 1 + p);
                match end {
                    Some(e) if bytes[e] == b'}' => {
                        out.push(Piece::Text(&template[start..i]));
                        out.push(Piece::Slot(&template[i + 1..e]));
                        i = e + 1;
                        start = i;
                    }
                    _ => i += 1,
                }
            }
            _ => i += 1,
        }
    }
    out.push(Piece::Text(&template[start..]));
    out
}

/// Placeholder names of a template, in first-occurrence order.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for p in pieces(template) {
        if let Piece::Slot(name) = p {
            if !out.iter().any(|n| n == name) {
                out.push(name.to_string());
            }
        }
    }
    out
}

pub fn render_text(template: &str, bindings: &BTreeMap<String, String>) -> Result<String, LlmError> {
    let mut out = String::with_capacity(template.len());
    for p in pieces(template) {
        match p {
            Piece::Text(t) => out.push_str(t),
            Piece::Brace(c) => out.push(c),
            Piece::Slot(name) => match bindings.get(name) {
                Some(v) => out.push_str(v),
                None => return Err(LlmError::MissingBinding(name.to_string())),
            },
        }
    }
    Ok(out)
}

pub fn render_prompt(template_id: &str, bindings: &BTreeMap<String, String>) -> Result<String, LlmError> {
    let template = template_text(template_id).ok_or_else(|| LlmError::UnknownTemplate(template_id.to_string()))?;
    render_text(template, bindings)
}

/// Builds a binding map from string pairs.
pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sql_generation_template_mentions_database() {
        let out = render_prompt(
            SQL_GENERATION,
            &bindings([("DB_ID", "california_schools"), ("AUGMENTATION", ""), ("QUESTION", "q?")]),
        )
        .unwrap();
        assert!(out.contains("considering *only* the california_schools database"));
        assert!(!out.contains("{DB_ID}"));
    }

    #[test]
    fn placeholder_free_template_renders_verbatim() {
        let t = "plain text with {lower} and } stray";
        assert_eq!(render_text(t, &BTreeMap::new()).unwrap(), t);
    }

    #[test]
    fn missing_binding_names_placeholder() {
        let err = render_prompt(SQL_GENERATION, &bindings([("DB_ID", "x"), ("AUGMENTATION", "")])).unwrap_err();
        assert!(matches!(&err, LlmError::MissingBinding(n) if n == "QUESTION"), "{err}");
        assert!(err.to_string().contains("QUESTION"));
    }

    #[test]
    fn unknown_template_is_an_error() {
        assert!(matches!(render_prompt("nope", &BTreeMap::new()), Err(LlmError::UnknownTemplate(_))));
    }

    #[test]
    fn doubled_braces_render_single() {
        let out = render_prompt(
            COLUMN_FILTER,
            &bindings([("TABLE_SCHEMA", "S"), ("EXAMPLES", "E"), ("QUESTION_AND_HINT", "Q")]),
        )
        .unwrap();
        assert!(out.contains("\n{\n    \"reasoning\""));
        assert!(out.trim_end().ends_with('}'));
        assert!(!out.contains("{{"));
    }

    #[test]
    fn bindings_are_not_rescanned() {
        let out = render_text("a {X} b", &bindings([("X", "{Y} {{")])).unwrap();
        assert_eq!(out, "a {Y} {{ b");
    }

    #[test]
    fn every_template_declares_known_placeholders() {
        for id in template_ids() {
            let names = placeholders(template_text(id).unwrap());
            assert!(!names.is_empty(), "{id}");
        }
        assert_eq!(
            placeholders(template_text(COLUMN_FILTER).unwrap()),
            vec!["TABLE_SCHEMA", "EXAMPLES", "QUESTION_AND_HINT"]
        );
        assert_eq!(
            placeholders(template_text(SQL_GENERATION).unwrap()),
            vec!["DB_ID", "AUGMENTATION", "QUESTION"]
        );
    }
}
