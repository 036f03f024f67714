//! Text payloads. A payload is UTF-8 lines joined by `\n`. Lines starting
//! with `@` are directives (`@req=<seq>`, `@tick=<tick>`, `@stale=<name>`);
//! the rest is the body. Tag assignments are `name=TYPE:value` with TYPE one
//! of `B` (`0|1`), `I` (decimal i32), `F` (decimal containing `.`) or `S`
//! (percent-encoded UTF-8).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use thiserror::Error;

use crate::value::{TagType, TagValue, MAX_STRING_LEN};

/// Everything except unreserved URI characters gets escaped.
const STRING_ESCAPES: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'_')
    .remove(b'.')
    .remove(b'~');

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("payload is not UTF-8")]
    NotUtf8,
    #[error("line {0}: malformed assignment")]
    Malformed(usize),
    #[error("line {0}: invalid tag name")]
    BadName(usize),
    #[error("line {0}: invalid value")]
    BadValue(usize),
    #[error("duplicate tag `{0}`")]
    Duplicate(String),
    #[error("line {0}: malformed directive")]
    BadDirective(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagAssignment {
    pub name: String,
    pub value: TagValue,
}

impl TagAssignment {
    pub fn new(name: impl Into<String>, value: TagValue) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }
}

/// Tag names: 1..=255 bytes of `[A-Za-z0-9_./-]`.
pub fn is_valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 255
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'/' | b'-'))
}

pub fn format_value(value: &TagValue) -> String {
    match value {
        TagValue::Bool(b) => format!("B:{}", u8::from(*b)),
        TagValue::Int(i) => format!("I:{i}"),
        TagValue::Float(f) => {
            let mut s = format!("F:{f}");
            if !s.contains('.') {
                s.push_str(".0");
            }
            s
        }
        TagValue::Str(s) => format!("S:{}", utf8_percent_encode(s, STRING_ESCAPES)),
    }
}

pub fn parse_value(text: &str) -> Option<TagValue> {
    let (code, raw) = text.split_once(':')?;
    let value = match TagType::from_code(code)? {
        TagType::Bool => match raw {
            "0" => TagValue::Bool(false),
            "1" => TagValue::Bool(true),
            _ => return None,
        },
        TagType::Int => {
            let digits = raw.strip_prefix('-').unwrap_or(raw);
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            TagValue::Int(raw.parse().ok()?)
        }
        TagType::Float => {
            let body = raw.strip_prefix('-').unwrap_or(raw);
            let (int, frac) = body.split_once('.')?;
            let digits_ok = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
            if int.is_empty() || frac.is_empty() || !digits_ok(int) || !digits_ok(frac) {
                return None;
            }
            let f: f64 = raw.parse().ok()?;
            if !f.is_finite() {
                return None;
            }
            TagValue::Float(f)
        }
        TagType::Str => {
            if raw.contains(['\n', '\r']) {
                return None;
            }
            let s = percent_decode_str(raw).decode_utf8().ok()?.into_owned();
            if s.len() > MAX_STRING_LEN {
                return None;
            }
            TagValue::Str(s)
        }
    };
    Some(value)
}

pub fn format_assignment(a: &TagAssignment) -> String {
    format!("{}={}", a.name, format_value(&a.value))
}

pub fn serialize_assignments(assignments: &[TagAssignment]) -> String {
    let mut out = String::new();
    for (i, a) in assignments.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(out, "{}", format_assignment(a));
    }
    out
}

/// Parses assignment lines. Empty lines are skipped; a tag may appear once.
pub fn parse_assignments(text: &str) -> Result<Vec<TagAssignment>, PayloadError> {
    parse_assignment_lines(text.split('\n').enumerate().map(|(i, l)| (i + 1, l)))
}

fn parse_assignment_lines<'a>(
    lines: impl Iterator<Item = (usize, &'a str)>,
) -> Result<Vec<TagAssignment>, PayloadError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line_no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let (name, value) = line.split_once('=').ok_or(PayloadError::Malformed(line_no))?;
        if !is_valid_name(name) {
            return Err(PayloadError::BadName(line_no));
        }
        let value = parse_value(value).ok_or(PayloadError::BadValue(line_no))?;
        if !seen.insert(name.to_string()) {
            return Err(PayloadError::Duplicate(name.to_string()));
        }
        out.push(TagAssignment {
            name: name.to_string(),
            value,
        });
    }
    Ok(out)
}

/// A payload split into directives and body lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Payload {
    pub req: Option<u32>,
    pub tick: Option<u64>,
    pub stale: Vec<String>,
    pub body: Vec<String>,
}

impl Payload {
    pub fn parse_bytes(bytes: &[u8]) -> Result<Self, PayloadError> {
        let text = std::str::from_utf8(bytes).map_err(|_| PayloadError::NotUtf8)?;
        Self::parse(text)
    }

    pub fn parse(text: &str) -> Result<Self, PayloadError> {
        let mut p = Payload::default();
        for (idx, line) in text.split('\n').enumerate() {
            if let Some(directive) = line.strip_prefix('@') {
                let (key, value) = directive
                    .split_once('=')
                    .ok_or(PayloadError::BadDirective(idx + 1))?;
                match key {
                    "req" => {
                        p.req = Some(value.parse().map_err(|_| PayloadError::BadDirective(idx + 1))?)
                    }
                    "tick" => {
                        p.tick = Some(value.parse().map_err(|_| PayloadError::BadDirective(idx + 1))?)
                    }
                    "stale" => p.stale.push(value.to_string()),
                    _ => return Err(PayloadError::BadDirective(idx + 1)),
                }
            } else if !line.is_empty() {
                p.body.push(line.to_string());
            }
        }
        Ok(p)
    }

    pub fn assignments(&self) -> Result<Vec<TagAssignment>, PayloadError> {
        parse_assignment_lines(self.body.iter().enumerate().map(|(i, l)| (i + 1, l.as_str())))
    }

    /// Body lines read as `key=value` fields.
    pub fn fields(&self) -> BTreeMap<String, String> {
        self.body
            .iter()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    pub fn field(&self, key: &str) -> Option<&str> {
        self.body
            .iter()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }

    pub fn render(&self) -> String {
        let mut lines = Vec::new();
        if let Some(r) = self.req {
            lines.push(format!("@req={r}"));
        }
        if let Some(t) = self.tick {
            lines.push(format!("@tick={t}"));
        }
        lines.extend(self.stale.iter().map(|s| format!("@stale={s}")));
        lines.extend(self.body.iter().cloned());
        lines.join("\n")
    }
}

/// `name` or `prefix*`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NameFilter {
    Exact(String),
    Prefix(String),
}

impl NameFilter {
    pub fn parse(text: &str) -> Option<Self> {
        match text.strip_suffix('*') {
            Some(prefix) if prefix.is_empty() || is_valid_name(prefix) => {
                Some(NameFilter::Prefix(prefix.to_string()))
            }
            Some(_) => None,
            None => is_valid_name(text).then(|| NameFilter::Exact(text.to_string())),
        }
    }

    pub fn matches(&self, name: &str) -> bool {
        match self {
            NameFilter::Exact(n) => n == name,
            NameFilter::Prefix(p) => name.starts_with(p.as_str()),
        }
    }

    pub fn render(&self) -> String {
        match self {
            NameFilter::Exact(n) => n.clone(),
            NameFilter::Prefix(p) => format!("{p}*"),
        }
    }
}
