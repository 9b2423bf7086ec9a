//! Recovering label maps from model output.
//!
//! [`extract_object`] finds the first balanced `{...}` span in free text and
//! reads it as a flat literal map: single- or double-quoted keys, integer
//! values, integers wrapped in quotes (coerced and noted), optional trailing
//! comma. [`validate`] then aligns the map with a taxonomy, filling missing
//! findings with `-1` and flagging codes the taxonomy does not allow.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{FinishReason, RawAnswer};
use crate::corpus::{normalize_finding, Code, Labels, MentionClass, TaxonomySpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("no braced object in text")]
    NoObject,
    #[error("unbalanced braces")]
    Unbalanced,
    #[error("nested structure at offset {0}")]
    Nested(usize),
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unparseable value for `{key}`: {value}")]
    BadValue { key: String, value: String },
}

/// A flat key → integer map as read from text, before taxonomy alignment.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawObject {
    pub entries: IndexMap<String, i64>,
    /// Keys whose value was a quoted integer.
    pub coerced: Vec<String>,
    /// The braced span the entries came from.
    pub source: String,
}

impl RawObject {
    pub fn from_pairs<K: Into<String>>(pairs: impl IntoIterator<Item = (K, i64)>) -> Self {
        RawObject {
            entries: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            ..RawObject::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Repair {
    MissingKeyFilled { finding: String },
    UnknownKeyDropped { finding: String },
    StringValueCoerced { finding: String },
    ValueOutOfRange { finding: String, value: i64 },
}

/// A full prediction vector for one report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub labels: Labels,
    pub valid: bool,
    pub repairs: Vec<Repair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(skip)]
    pub raw: String,
}

impl ParsedPrediction {
    /// All findings not mentioned, marked invalid.
    pub fn invalid(taxonomy: &TaxonomySpec, raw: &str, failure: impl Into<String>) -> Self {
        ParsedPrediction {
            labels: taxonomy.default_labels(),
            valid: false,
            repairs: Vec::new(),
            failure: Some(failure.into()),
            raw: raw.to_string(),
        }
    }
}

/// Byte range of the first balanced `{...}` span, quotes respected.
fn find_span(text: &str) -> Result<(usize, usize), ExtractError> {
    let start = text.find('{').ok_or(ExtractError::NoObject)?;
    let bytes = text.as_bytes();
    let mut quote: Option<u8> = None;
    let mut escaped = false;
    for (off, &b) in bytes[start + 1..].iter().enumerate() {
        let pos = start + 1 + off;
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == q {
                quote = None;
            }
            continue;
        }
        match b {
            b'"' | b'\'' => quote = Some(b),
            b'{' | b'[' => return Err(ExtractError::Nested(pos)),
            b'}' => return Ok((start, pos + 1)),
            _ => {}
        }
    }
    Err(ExtractError::Unbalanced)
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    base: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn syntax(&self, message: impl Into<String>) -> ExtractError {
        ExtractError::Syntax {
            offset: self.base + self.pos,
            message: message.into(),
        }
    }

    fn quoted(&mut self) -> Result<String, ExtractError> {
        let q = self.bump().ok_or_else(|| self.syntax("expected string"))?;
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.syntax("unterminated string")),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some(c) => out.push(c),
                    None => return Err(self.syntax("unterminated escape")),
                },
                Some(c) if c == q => return Ok(out),
                Some(c) => out.push(c),
            }
        }
    }

    fn bare(&mut self) -> String {
        let start = self.pos;
        while self.peek().is_some_and(|c| !c.is_whitespace() && c != ',' && c != ':') {
            self.bump();
        }
        self.src[start..self.pos].to_string()
    }
}

fn parse_int(s: &str) -> Option<i64> {
    let s = s.trim();
    match s.strip_prefix('+') {
        Some(rest) if rest.bytes().all(|b| b.is_ascii_digit()) => rest.parse().ok(),
        Some(_) => None,
        None => s.parse().ok(),
    }
}

/// Locates and reads the first flat object in `text`.
pub fn extract_object(text: &str) -> Result<RawObject, ExtractError> {
    let (start, end) = find_span(text)?;
    let inner = &text[start + 1..end - 1];
    let mut cur = Cursor {
        src: inner,
        pos: 0,
        base: start + 1,
    };
    let mut out = RawObject {
        source: text[start..end].to_string(),
        ..RawObject::default()
    };
    loop {
        cur.skip_ws();
        match cur.peek() {
            None => break,
            Some('"') | Some('\'') => {}
            Some(_) => return Err(cur.syntax("expected quoted key")),
        }
        let key = cur.quoted()?;
        cur.skip_ws();
        if cur.bump() != Some(':') {
            return Err(cur.syntax("expected `:`"));
        }
        cur.skip_ws();
        let (value, coerced) = match cur.peek() {
            Some('"') | Some('\'') => {
                let s = cur.quoted()?;
                let v = parse_int(&s).ok_or_else(|| ExtractError::BadValue {
                    key: key.clone(),
                    value: s.clone(),
                })?;
                (v, true)
            }
            Some(_) => {
                let s = cur.bare();
                let v = parse_int(&s).ok_or_else(|| ExtractError::BadValue {
                    key: key.clone(),
                    value: s.clone(),
                })?;
                (v, false)
            }
            None => return Err(cur.syntax("missing value")),
        };
        if coerced {
            out.coerced.push(key.clone());
        }
        out.entries.insert(key, value);
        cur.skip_ws();
        match cur.bump() {
            None => break,
            Some(',') => continue,
            Some(c) => return Err(cur.syntax(format!("unexpected `{c}`"))),
        }
    }
    Ok(out)
}

/// Aligns `raw` with `taxonomy`. Never fails: unknown keys are dropped,
/// missing findings become `-1`, disallowed codes become `-1` and make the
/// prediction invalid.
pub fn validate(raw: &RawObject, taxonomy: &TaxonomySpec) -> ParsedPrediction {
    let mut labels = taxonomy.default_labels();
    let mut seen = vec![false; taxonomy.len()];
    let mut repairs = Vec::new();
    let mut valid = true;

    for key in &raw.coerced {
        repairs.push(Repair::StringValueCoerced {
            finding: normalize_finding(key),
        });
    }
    for (key, &value) in &raw.entries {
        let finding = normalize_finding(key);
        let Some(idx) = taxonomy.position(&finding) else {
            repairs.push(Repair::UnknownKeyDropped { finding });
            continue;
        };
        seen[idx] = true;
        match Code::try_from(value).ok().filter(|&c| taxonomy.is_allowed(c)) {
            Some(code) => labels[idx] = code,
            None => {
                valid = false;
                labels[idx] = MentionClass::NotMentioned.code();
                repairs.push(Repair::ValueOutOfRange { finding, value });
            }
        }
    }
    for (idx, finding) in taxonomy.findings().iter().enumerate() {
        if !seen[idx] {
            repairs.push(Repair::MissingKeyFilled {
                finding: finding.clone(),
            });
        }
    }
    ParsedPrediction {
        labels,
        valid,
        repairs,
        failure: None,
        raw: raw.source.clone(),
    }
}

/// Turns a model answer into a prediction. Errors, truncated generations and
/// unextractable text yield all `-1` labels marked invalid.
pub fn parse_answer(raw: &RawAnswer, taxonomy: &TaxonomySpec) -> ParsedPrediction {
    match raw.finished_by {
        FinishReason::Error => {
            let why = raw.error.as_deref().unwrap_or("backend error");
            return ParsedPrediction::invalid(taxonomy, &raw.text, format!("backend: {why}"));
        }
        FinishReason::Length => {
            return ParsedPrediction::invalid(taxonomy, &raw.text, "truncated by length");
        }
        FinishReason::Stop => {}
    }
    parse_text(&raw.text, taxonomy)
}

/// [`extract_object`] then [`validate`], with extraction failures made invalid.
pub fn parse_text(text: &str, taxonomy: &TaxonomySpec) -> ParsedPrediction {
    match extract_object(text) {
        Ok(obj) => {
            let mut p = validate(&obj, taxonomy);
            p.raw = text.to_string();
            p
        }
        Err(e) => ParsedPrediction::invalid(taxonomy, text, format!("extraction: {e}")),
    }
}
