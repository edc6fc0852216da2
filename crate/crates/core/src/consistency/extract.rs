//! Final-answer extraction and canonicalization.
//!
//! Every extractor scans for the *last* matching site in a response, since
//! chain-of-thought text restates intermediate values before the final one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// How a final answer is located in a response and normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ExtractorKind {
    /// Last line of the form `#### <number>`.
    #[default]
    #[serde(rename = "hash-number")]
    HashNumber,
    /// Last `\boxed{...}` group, braces balanced.
    #[serde(rename = "boxed")]
    Boxed,
    /// Final non-empty line.
    #[serde(rename = "last-line")]
    LastLine,
    /// `solution` value of the last well-formed JSON object that has one.
    #[serde(rename = "json-solution")]
    JsonSolution,
}

impl ExtractorKind {
    pub const ALL: [ExtractorKind; 4] = [
        ExtractorKind::HashNumber,
        ExtractorKind::Boxed,
        ExtractorKind::LastLine,
        ExtractorKind::JsonSolution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExtractorKind::HashNumber => "hash-number",
            ExtractorKind::Boxed => "boxed",
            ExtractorKind::LastLine => "last-line",
            ExtractorKind::JsonSolution => "json-solution",
        }
    }
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hash-number" => Ok(ExtractorKind::HashNumber),
            "boxed" | "boxed-expression" => Ok(ExtractorKind::Boxed),
            "last-line" => Ok(ExtractorKind::LastLine),
            "json-solution" => Ok(ExtractorKind::JsonSolution),
            other => Err(Error::UnknownExtractor(other.to_string())),
        }
    }
}

fn malformed(raw: &str, kind: ExtractorKind) -> Error {
    Error::MalformedAnswer {
        raw: raw.to_string(),
        kind: kind.name().to_string(),
    }
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn canonical_number(raw: &str) -> Option<String> {
    let mut s: String = raw
        .chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .collect();
    if let Some(rest) = s.strip_prefix('+') {
        s = rest.to_string();
    }
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.as_str()),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    if int_part.is_empty() && frac_part.is_none_or(str::is_empty) {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let frac = match frac_part {
        Some(f) if !f.bytes().all(|b| b.is_ascii_digit()) => return None,
        Some(f) => f.trim_end_matches('0'),
        None => "",
    };
    let int_part = if int_part.is_empty() { "0" } else { int_part };
    let mut out = String::new();
    let is_zero = int_part.bytes().all(|b| b == b'0') && frac.is_empty();
    if negative && !is_zero {
        out.push('-');
    }
    out.push_str(int_part);
    if !frac.is_empty() {
        out.push('.');
        out.push_str(frac);
    }
    Some(out)
}

/// Peel `$` delimiters and whole-string `\boxed{...}` wrappers until none remain.
fn strip_boxed(s: &str) -> &str {
    let mut t = s;
    loop {
        let trimmed = t.trim().trim_matches('$').trim();
        let unwrapped = trimmed.strip_prefix("\\boxed{").and_then(|inner| {
            let end = matching_brace(inner)?;
            inner[end + 1..].trim().is_empty().then(|| &inner[..end])
        });
        match unwrapped {
            Some(inner) => t = inner,
            None if trimmed.len() == t.len() => return t,
            None => t = trimmed,
        }
    }
}

/// Byte offset of the `}` that closes an already-opened brace at the start of `s`.
fn matching_brace(s: &str) -> Option<usize> {
    let mut depth = 1usize;
    for (i, c) in s.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Normalize a raw answer so that equality of canonical strings is the
/// answer-equality used for voting.
pub fn canonicalize(raw: &str, kind: ExtractorKind) -> Result<String> {
    if raw.trim().is_empty() {
        return Err(malformed(raw, kind));
    }
    match kind {
        ExtractorKind::HashNumber => canonical_number(raw).ok_or_else(|| malformed(raw, kind)),
        ExtractorKind::Boxed => {
            let inner = collapse_whitespace(strip_boxed(raw));
            if inner.is_empty() {
                Err(malformed(raw, kind))
            } else {
                Ok(inner)
            }
        }
        ExtractorKind::LastLine => Ok(collapse_whitespace(raw)),
        ExtractorKind::JsonSolution => {
            // serde_json's default map is a BTreeMap, so re-serializing sorts keys.
            let value: Value = serde_json::from_str(raw.trim()).map_err(|_| malformed(raw, kind))?;
            Ok(value.to_string())
        }
    }
}

fn extract_hash_number(text: &str) -> Option<String> {
    text.lines().rev().find_map(|line| {
        let rest = line.trim().strip_prefix("####")?;
        let token: String = rest
            .trim()
            .chars()
            .take_while(|c| c.is_ascii_digit() || matches!(c, ',' | '.' | '+' | '-' | ' '))
            .collect();
        let token = token.trim().trim_end_matches('.');
        canonicalize(token, ExtractorKind::HashNumber).ok()
    })
}

fn extract_boxed(text: &str) -> Option<String> {
    const MARKER: &str = "\\boxed{";
    let mut search_end = text.len();
    while let Some(start) = text[..search_end].rfind(MARKER) {
        let body = &text[start + MARKER.len()..];
        if let Some(end) = matching_brace(body) {
            if let Ok(answer) = canonicalize(&body[..end], ExtractorKind::Boxed) {
                return Some(answer);
            }
        }
        search_end = start;
    }
    None
}

fn extract_last_line(text: &str) -> Option<String> {
    text.lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .and_then(|l| canonicalize(l, ExtractorKind::LastLine).ok())
}

fn extract_json_solution(text: &str) -> Option<String> {
    let mut last = None;
    let mut i = 0;
    while let Some(offset) = text[i..].find('{') {
        let start = i + offset;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => {
                if let Some(solution) = map.get("solution") {
                    last = Some(solution.to_string());
                }
                i = start + stream.byte_offset();
            }
            _ => i = start + 1,
        }
    }
    last
}

/// Extract the canonical final answer from a response, or `None` when the
/// response has no parsable answer under `kind`. Never fails.
pub fn extract_answer(text: &str, kind: ExtractorKind) -> Option<String> {
    match kind {
        ExtractorKind::HashNumber => extract_hash_number(text),
        ExtractorKind::Boxed => extract_boxed(text),
        ExtractorKind::LastLine => extract_last_line(text),
        ExtractorKind::JsonSolution => extract_json_solution(text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn numeric_normalization() {
        assert_eq!(canonicalize("1,234.0", ExtractorKind::HashNumber).unwrap(), "1234");
        assert_eq!(canonicalize("42", ExtractorKind::HashNumber).unwrap(), "42");
        assert_eq!(canonicalize(" +7 ", ExtractorKind::HashNumber).unwrap(), "7");
        assert_eq!(canonicalize("-3.50", ExtractorKind::HashNumber).unwrap(), "-3.5");
        assert_eq!(canonicalize("-0.0", ExtractorKind::HashNumber).unwrap(), "0");
        assert_eq!(canonicalize("12.", ExtractorKind::HashNumber).unwrap(), "12");
    }

    #[test]
    fn numeric_without_digits_is_malformed() {
        for raw in ["abc", "-", ".", "1.2.3", "12x"] {
            let err = canonicalize(raw, ExtractorKind::HashNumber).unwrap_err();
            assert!(matches!(err, Error::MalformedAnswer { .. }), "{raw}");
        }
        assert!(canonicalize("   ", ExtractorKind::LastLine).is_err());
    }

    #[test]
    fn boxed_expression_is_unwrapped_and_idempotent() {
        let once = canonicalize("  \\boxed{ 7/2 } ", ExtractorKind::Boxed).unwrap();
        assert_eq!(once, "7/2");
        assert_eq!(canonicalize(&once, ExtractorKind::Boxed).unwrap(), once);
        assert_eq!(
            canonicalize("$\\boxed{\\frac{1}{2}}$", ExtractorKind::Boxed).unwrap(),
            "\\frac{1}{2}"
        );
    }

    #[test]
    fn string_kinds_collapse_whitespace() {
        assert_eq!(
            canonicalize("  The   answer\tis  x ", ExtractorKind::LastLine).unwrap(),
            "The answer is x"
        );
    }

    #[test]
    fn json_solution_ignores_key_order_and_spacing() {
        let a = canonicalize(r#"{"b": 1, "a": {"y": 2, "x": 3}}"#, ExtractorKind::JsonSolution).unwrap();
        let b = canonicalize(r#"{"a":{"x":3,"y":2},"b":1}"#, ExtractorKind::JsonSolution).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, r#"{"a":{"x":3,"y":2},"b":1}"#);
    }

    #[test]
    fn hash_number_takes_last_marker() {
        let text = "step one gives 3\n#### 3\nwait, recheck\n#### 42";
        assert_eq!(extract_answer(text, ExtractorKind::HashNumber).as_deref(), Some("42"));
        assert_eq!(extract_answer("...steps...\n#### 42", ExtractorKind::HashNumber).as_deref(), Some("42"));
        assert_eq!(extract_answer("#### 1,000 dollars", ExtractorKind::HashNumber).as_deref(), Some("1000"));
        assert_eq!(extract_answer("no answer marker here", ExtractorKind::HashNumber), None);
        assert_eq!(extract_answer("#### none", ExtractorKind::HashNumber), None);
    }

    /// Independent reference: split on the marker and keep the last segment
    /// whose braces balance.
    fn reference_last_boxed(text: &str) -> Option<String> {
        let parts: Vec<&str> = text.split("\\boxed{").collect();
        for part in parts.iter().skip(1).rev() {
            let mut depth = 1i32;
            let mut content = String::new();
            let mut closed = false;
            for c in part.chars() {
                if c == '{' {
                    depth += 1;
                } else if c == '}' {
                    depth -= 1;
                    if depth == 0 {
                        closed = true;
                        break;
                    }
                }
                content.push(c);
            }
            if closed && !content.trim().is_empty() {
                return Some(content.split_whitespace().collect::<Vec<_>>().join(" "));
            }
        }
        None
    }

    #[test]
    fn boxed_takes_last_group() {
        let text = "The final answer is $\\boxed{3}$... later $\\boxed{5}$";
        assert_eq!(extract_answer(text, ExtractorKind::Boxed).as_deref(), Some("5"));
        assert_eq!(reference_last_boxed(text).as_deref(), Some("5"));
        let nested = "try \\boxed{\\frac{1}{2}} then \\boxed{ {a}+{b} } and \\boxed{unclosed";
        assert_eq!(extract_answer(nested, ExtractorKind::Boxed), reference_last_boxed(nested));
        assert_eq!(extract_answer(nested, ExtractorKind::Boxed).as_deref(), Some("{a}+{b}"));
    }

    #[test]
    fn last_line_and_json() {
        assert_eq!(extract_answer("a\nb  c\n\n  \n", ExtractorKind::LastLine).as_deref(), Some("b c"));
        assert_eq!(extract_answer("", ExtractorKind::LastLine), None);
        let text = r#"Reasoning first. {"reasoning": "x", "solution": {"House 2": {"Name": "Peter"}, "House 1": {"Name": "Arnold"}}} trailing {"solution": 1"#;
        assert_eq!(
            extract_answer(text, ExtractorKind::JsonSolution).as_deref(),
            Some(r#"{"House 1":{"Name":"Arnold"},"House 2":{"Name":"Peter"}}"#)
        );
        let two = r#"{"solution": "a"} then {"solution": "b"}"#;
        assert_eq!(extract_answer(two, ExtractorKind::JsonSolution).as_deref(), Some("\"b\""));
        assert_eq!(extract_answer("{not json}", ExtractorKind::JsonSolution), None);
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ExtractorKind::ALL {
            assert_eq!(kind.name().parse::<ExtractorKind>().unwrap(), kind);
        }
        assert!("regex".parse::<ExtractorKind>().is_err());
    }

    proptest! {
        #[test]
        fn canonicalize_is_idempotent(raw in "[ +\\-0-9,.a-z{}\\\\]{1,24}", k in 0usize..4) {
            let kind = ExtractorKind::ALL[k];
            if let Ok(once) = canonicalize(&raw, kind) {
                prop_assert_eq!(canonicalize(&once, kind).unwrap(), once);
            }
        }

        #[test]
        fn numeric_canonical_form_is_idempotent(int in -100000i64..100000, frac in 0u32..1000, zeros in 0usize..3) {
            let raw = format!("{int}.{frac}{}", "0".repeat(zeros));
            let once = canonicalize(&raw, ExtractorKind::HashNumber).unwrap();
            prop_assert_eq!(canonicalize(&once, ExtractorKind::HashNumber).unwrap(), once);
        }

        #[test]
        fn extraction_never_panics(text in "\\PC{0,200}", k in 0usize..4) {
            let _ = extract_answer(&text, ExtractorKind::ALL[k]);
        }
    }
}
