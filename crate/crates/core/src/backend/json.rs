//! Extraction of JSON payloads from free-form model replies.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum JsonExtractError {
    #[error("no JSON object found in reply")]
    NoJsonFound,
    #[error("JSON syntax error at byte {position}: {message} (near {snippet:?})")]
    JsonSyntax {
        position: usize,
        message: String,
        snippet: String,
    },
}

/// Parse the first balanced top-level JSON object in `text`, tolerating
/// surrounding prose and Markdown code fences.
///
/// Candidates are tried left to right; a brace blob that fails to parse is
/// skipped in favor of later candidates, and its error is reported only when
/// nothing parses at all.
pub fn extract_json(text: &str) -> Result<serde_json::Value, JsonExtractError> {
    let bytes = text.as_bytes();
    let mut offset = 0;
    let mut first_failure: Option<JsonExtractError> = None;

    while let Some(rel) = text[offset..].find('{') {
        let start = offset + rel;
        let candidate = match balanced_object(bytes, start) {
            Some(end) => &text[start..end],
            None => &text[start..],
        };
        match serde_json::from_str::<serde_json::Value>(candidate) {
            Ok(value) if value.is_object() => return Ok(value),
            Ok(_) => {}
            Err(e) => {
                if first_failure.is_none() {
                    first_failure = Some(JsonExtractError::JsonSyntax {
                        position: start,
                        message: e.to_string(),
                        snippet: snippet_at(text, start),
                    });
                }
            }
        }
        offset = start + 1;
    }

    Err(first_failure.unwrap_or(JsonExtractError::NoJsonFound))
}

// Byte offset one past the matching close brace, tracking JSON string and
// escape state. None when the object never closes.
fn balanced_object(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn snippet_at(text: &str, position: usize) -> String {
    let end = (position + 40).min(text.len());
    let mut end = end;
    while !text.is_char_boundary(end) {
        end += 1;
    }
    text[position..end].to_owned()
}

/// Strip one outer Markdown code fence (with optional language tag) when the
/// whole trimmed text is fenced; otherwise return the trimmed text.
pub fn strip_code_fences(text: &str) -> &str {
    let trimmed = text.trim();
    if !trimmed.starts_with("```") {
        return trimmed;
    }
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let Some(body_start) = rest.find('\n') else {
        return trimmed;
    };
    let body = &rest[body_start + 1..];
    match body.rfind("```") {
        Some(close) => body[..close].trim_matches('\n'),
        None => trimmed,
    }
}
