//! Structured-output parsing: `<reasoning>`/`<answer>` tags and embedded JSON.

use serde_json::{Map, Value};

use super::LlmError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tagged {
    pub reasoning: String,
    pub answer: String,
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let end = text[start..].find(close)? + start;
    Some(&text[start..end])
}

/// Removes a surrounding Markdown code fence, with or without a language tag.
pub fn strip_code_fences(s: &str) -> String {
    let t = s.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let body = match rest.find('\n') {
            Some(nl) => &rest[nl + 1..],
            None => rest,
        };
        let body = body.trim_end();
        let body = body.strip_suffix("```").unwrap_or(body);
        return body.trim().to_string();
    }
    t.to_string()
}

/// Extracts the first reasoning and answer sections. A missing reasoning section
/// yields an empty string; a missing answer is an error.
pub fn parse_tagged(text: &str) -> Result<Tagged, LlmError> {
    let answer = between(text, "<answer>", "</answer>").ok_or(LlmError::MissingAnswer)?;
    let reasoning = match between(text, "<reasoning>", "</reasoning>") {
        Some(r) => r.trim().to_string(),
        None => {
            tracing::debug!("response has an answer but no reasoning section");
            String::new()
        }
    };
    Ok(Tagged {
        reasoning,
        answer: strip_code_fences(answer),
    })
}

pub fn format_tagged(reasoning: &str, answer: &str) -> String {
    format!("<reasoning>\n{reasoning}\n</reasoning>\n<answer>\n{answer}\n</answer>")
}

/// Expected JSON type of a required key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JsonKind {
    Any,
    String,
    StringList,
}

fn first_json<T>(text: &str, opener: char, accept: impl Fn(&Value) -> Option<T>) -> Option<T> {
    for (i, _) in text.match_indices(opener) {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            if let Some(t) = accept(&v) {
                return Some(t);
            }
        }
    }
    None
}

/// Finds the first JSON object in `text`, tolerating surrounding prose and code
/// fences, and checks the required keys and their types.
pub fn parse_json_object(text: &str, required: &[(&str, JsonKind)]) -> Result<Map<String, Value>, LlmError> {
    let obj = first_json(text, '{', |v| v.as_object().cloned()).ok_or(LlmError::NoJson)?;
    for (key, kind) in required {
        let value = obj.get(*key).ok_or_else(|| LlmError::MissingKey((*key).to_string()))?;
        let ok = match kind {
            JsonKind::Any => true,
            JsonKind::String => value.is_string(),
            JsonKind::StringList => value.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
        };
        if !ok {
            return Err(LlmError::WrongType {
                key: (*key).to_string(),
                expected: match kind {
                    JsonKind::String => "string",
                    JsonKind::StringList => "list of strings",
                    JsonKind::Any => "any",
                },
            });
        }
    }
    Ok(obj)
}

/// Finds the first JSON array of strings in `text`.
pub fn parse_string_list(text: &str) -> Result<Vec<String>, LlmError> {
    first_json(text, '[', |v| {
        v.as_array()
            .and_then(|a| a.iter().map(|x| x.as_str().map(str::to_string)).collect::<Option<Vec<_>>>())
    })
    .ok_or(LlmError::NoJson)
}

pub fn string_list(obj: &Map<String, Value>, key: &str) -> Vec<String> {
    obj.get(key)
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tagged_basic() {
        let t = parse_tagged("<reasoning>r</reasoning><answer>SELECT 1</answer>").unwrap();
        assert_eq!(t, Tagged { reasoning: "r".into(), answer: "SELECT 1".into() });
    }

    #[test]
    fn tagged_strips_fences() {
        let t = parse_tagged("<answer>\n```sql\nSELECT x\nFROM t\n```\n</answer>").unwrap();
        assert_eq!(t.answer, "SELECT x\nFROM t");
    }

    #[test]
    fn tagged_lenient_without_reasoning() {
        let t = parse_tagged("<answer>SELECT 1</answer>").unwrap();
        assert_eq!(t.reasoning, "");
        assert!(matches!(parse_tagged("<reasoning>r</reasoning>"), Err(LlmError::MissingAnswer)));
    }

    #[test]
    fn json_object_plain_and_fenced() {
        let req = [("reasoning", JsonKind::String), ("selected_columns", JsonKind::StringList)];
        let m = parse_json_object(r#"{"reasoning":"...","selected_columns":["a","b"]}"#, &req).unwrap();
        assert_eq!(string_list(&m, "selected_columns"), vec!["a", "b"]);
        let text = "Here you go:\n```json\n{\"reasoning\": \"x\", \"selected_columns\": []}\n```\nHope it helps {not json}";
        let m = parse_json_object(text, &req).unwrap();
        assert!(string_list(&m, "selected_columns").is_empty());
    }

    #[test]
    fn json_object_type_errors() {
        let req = [("selected_columns", JsonKind::StringList)];
        let err = parse_json_object(r#"{"selected_columns":"a"}"#, &req).unwrap_err();
        assert!(matches!(err, LlmError::WrongType { .. }));
        assert!(matches!(parse_json_object("{}", &req), Err(LlmError::MissingKey(_))));
        assert!(matches!(parse_json_object("no json here", &req), Err(LlmError::NoJson)));
    }

    #[test]
    fn string_list_skips_prose() {
        assert_eq!(parse_string_list("keywords: [\"a\", \"b c\"]").unwrap(), vec!["a", "b c"]);
        assert!(parse_string_list("[1, 2]").is_err());
    }

    proptest! {
        #[test]
        fn tagged_round_trip(r in "[A-Za-z0-9 ,.;()=*]{0,40}", a in "[A-Za-z0-9 ,.;()=*]{1,40}") {
            let (r, a) = (r.trim().to_string(), a.trim().to_string());
            prop_assume!(!a.is_empty());
            let parsed = parse_tagged(&format_tagged(&r, &a)).unwrap();
            prop_assert_eq!(parsed, Tagged { reasoning: r, answer: a });
        }
    }
}
