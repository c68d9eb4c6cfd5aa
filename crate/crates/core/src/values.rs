//! Canonical data model for program inputs and outputs.
//!
//! Every value a program under test consumes or produces, including a thrown
//! error, is a [`Value`]. Values have one deterministic, tag-prefixed text
//! encoding (see `docs/canonical-format.md`) which is what the compressors
//! see and what the subprocess protocol reuses.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValueError {
    #[error("non-finite real {0} is not a valid value")]
    NonFinite(f64),
    #[error("duplicate record field `{0}`")]
    DuplicateField(String),
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

/// A finite `f64`. Negative zero is folded into positive zero.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Real(f64);

impl Real {
    pub fn new(x: f64) -> Result<Self, ValueError> {
        if !x.is_finite() {
            return Err(ValueError::NonFinite(x));
        }
        Ok(Real(if x == 0.0 { 0.0 } else { x }))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Real {
    // Rust's float Display is the shortest decimal that round-trips.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(Real),
    Integer(i64),
    Text(String),
    Bytes(Vec<u8>),
    Seq(Vec<Value>),
    Record(BTreeMap<String, Value>),
    /// An error produced by the program under test. This is ordinary output
    /// data, compared like any other value.
    Error {
        kind: String,
        message: String,
    },
}

impl Value {
    pub fn real(x: f64) -> Result<Self, ValueError> {
        Real::new(x).map(Value::Real)
    }

    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn error(kind: impl Into<String>, message: impl Into<String>) -> Self {
        Value::Error {
            kind: kind.into(),
            message: message.into(),
        }
    }

    pub fn record<K: Into<String>>(
        fields: impl IntoIterator<Item = (K, Value)>,
    ) -> Result<Self, ValueError> {
        let mut map = BTreeMap::new();
        for (k, v) in fields {
            let k = k.into();
            if map.contains_key(&k) {
                return Err(ValueError::DuplicateField(k));
            }
            map.insert(k, v);
        }
        Ok(Value::Record(map))
    }

    /// Sequence of reals; fails on any non-finite component.
    pub fn reals(xs: &[f64]) -> Result<Self, ValueError> {
        xs.iter()
            .map(|&x| Value::real(x))
            .collect::<Result<Vec<_>, _>>()
            .map(Value::Seq)
    }

    pub fn is_error(&self) -> bool {
        matches!(self, Value::Error { .. })
    }

    /// Numeric view of a scalar.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Real(r) => Some(r.get()),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    /// Numeric coordinates of a scalar or a sequence of scalars.
    pub fn coords(&self) -> Option<Vec<f64>> {
        match self {
            Value::Seq(items) => items.iter().map(Value::as_f64).collect(),
            v => v.as_f64().map(|x| vec![x]),
        }
    }

    /// The canonical, tag-prefixed encoding.
    pub fn canonical_string(&self) -> String {
        let mut out = String::new();
        self.write_canonical(&mut out);
        out
    }

    fn write_canonical(&self, out: &mut String) {
        match self {
            Value::Real(r) => {
                let _ = write!(out, "R:{r}");
            }
            Value::Integer(i) => {
                let _ = write!(out, "I:{i}");
            }
            Value::Text(s) => {
                out.push('T');
                write_quoted(out, s);
            }
            Value::Bytes(b) => {
                out.push_str("B:");
                for byte in b {
                    let _ = write!(out, "{byte:02x}");
                }
                out.push(';');
            }
            Value::Seq(items) => {
                out.push_str("S[");
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    item.write_canonical(out);
                }
                out.push(']');
            }
            Value::Record(fields) => {
                out.push_str("M{");
                for (i, (k, v)) in fields.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write_quoted(out, k);
                    out.push('=');
                    v.write_canonical(out);
                }
                out.push('}');
            }
            Value::Error { kind, message } => {
                out.push_str("E(");
                write_quoted(out, kind);
                out.push(',');
                write_quoted(out, message);
                out.push(')');
            }
        }
    }

    /// Rendering used on the subprocess wire: scalars are bare decimals,
    /// everything else uses the canonical encoding.
    pub fn wire_string(&self) -> String {
        match self {
            Value::Real(r) => r.to_string(),
            Value::Integer(i) => i.to_string(),
            v => v.canonical_string(),
        }
    }

    /// Parses the canonical encoding back into a value.
    pub fn parse_canonical(s: &str) -> Result<Value, ValueError> {
        let mut p = Parser { src: s, pos: 0 };
        let v = p.value()?;
        if p.pos != s.len() {
            return Err(p.err("trailing input"));
        }
        Ok(v)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_string())
    }
}

fn write_quoted(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{{{:x}}}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Encoded form of a value together with the value it came from.
#[derive(Debug, Clone)]
pub struct CanonicalBytes<'a> {
    pub bytes: Vec<u8>,
    pub source: &'a Value,
}

pub fn canonicalize(v: &Value) -> CanonicalBytes<'_> {
    CanonicalBytes {
        bytes: v.canonical_string().into_bytes(),
        source: v,
    }
}

/// Exact equality of canonical encodings.
pub fn values_equal(a: &Value, b: &Value) -> bool {
    canonicalize(a).bytes == canonicalize(b).bytes
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> ValueError {
        ValueError::Parse {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn eat(&mut self, prefix: &str) -> Result<(), ValueError> {
        if self.rest().starts_with(prefix) {
            self.pos += prefix.len();
            Ok(())
        } else {
            Err(self.err(&format!("expected `{prefix}`")))
        }
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> &'a str {
        let rest = self.rest();
        let end = rest.find(|c| !f(c)).unwrap_or(rest.len());
        self.pos += end;
        &rest[..end]
    }

    fn value(&mut self) -> Result<Value, ValueError> {
        match self.peek() {
            Some('R') => {
                self.eat("R:")?;
                let num = self.take_while(|c| c.is_ascii_digit() || matches!(c, '-' | '.'));
                let x: f64 = num.parse().map_err(|_| self.err("bad real"))?;
                Value::real(x)
            }
            Some('I') => {
                self.eat("I:")?;
                let num = self.take_while(|c| c.is_ascii_digit() || c == '-');
                num.parse()
                    .map(Value::Integer)
                    .map_err(|_| self.err("bad integer"))
            }
            Some('T') => {
                self.eat("T")?;
                self.quoted().map(Value::Text)
            }
            Some('B') => {
                self.eat("B:")?;
                let hex = self.take_while(|c| c.is_ascii_hexdigit());
                self.eat(";")?;
                if !hex.len().is_multiple_of(2) {
                    return Err(self.err("odd hex length"));
                }
                (0..hex.len())
                    .step_by(2)
                    .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
                    .collect::<Result<Vec<_>, _>>()
                    .map(Value::Bytes)
                    .map_err(|_| self.err("bad hex"))
            }
            Some('S') => {
                self.eat("S[")?;
                let mut items = Vec::new();
                if self.peek() != Some(']') {
                    loop {
                        items.push(self.value()?);
                        if self.peek() == Some(',') {
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                }
                self.eat("]")?;
                Ok(Value::Seq(items))
            }
            Some('M') => {
                self.eat("M{")?;
                let mut fields = Vec::new();
                if self.peek() != Some('}') {
                    loop {
                        let k = self.quoted()?;
                        self.eat("=")?;
                        fields.push((k, self.value()?));
                        if self.peek() == Some(',') {
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                }
                self.eat("}")?;
                Value::record(fields)
            }
            Some('E') => {
                self.eat("E(")?;
                let kind = self.quoted()?;
                self.eat(",")?;
                let message = self.quoted()?;
                self.eat(")")?;
                Ok(Value::Error { kind, message })
            }
            _ => Err(self.err("unknown tag")),
        }
    }

    fn quoted(&mut self) -> Result<String, ValueError> {
        self.eat("\"")?;
        let mut out = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, '"')) => out.push('"'),
                    Some((_, '\\')) => out.push('\\'),
                    Some((_, 'n')) => out.push('\n'),
                    Some((_, 'r')) => out.push('\r'),
                    Some((_, 't')) => out.push('\t'),
                    Some((j, 'u')) => {
                        let tail = &self.rest()[j + 1..];
                        let close = tail
                            .find('}')
                            .filter(|_| tail.starts_with('{'))
                            .ok_or_else(|| self.err("bad unicode escape"))?;
                        let code = u32::from_str_radix(&tail[1..close], 16)
                            .ok()
                            .and_then(char::from_u32)
                            .ok_or_else(|| self.err("bad unicode escape"))?;
                        out.push(code);
                        // skip `{...}`
                        for _ in 0..=close {
                            chars.next();
                        }
                    }
                    _ => return Err(self.err("bad escape")),
                },
                c => out.push(c),
            }
        }
        Err(self.err("unterminated string"))
    }
}
