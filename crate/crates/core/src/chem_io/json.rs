//! A small JSON reader that keeps byte offsets on every value, plus the
//! canonical writer used by all structured formats. Offsets let semantic
//! errors (unknown element, dangling index) point at the offending token.

use super::error::{LineIndex, ParseError, ParseErrorKind};

const MAX_DEPTH: usize = 64;

#[derive(Clone, Debug)]
pub(crate) enum Value {
    Null,
    Bool(#[allow(dead_code)] bool),
    Number(f64),
    Str(String),
    Array(Vec<Node>),
    Object(Vec<(String, Node)>),
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) offset: usize,
    pub(crate) value: Value,
}

pub(crate) fn parse(text: &str, index: &LineIndex<'_>) -> Result<Node, ParseError> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
        index,
    };
    p.skip_ws();
    let node = p.value(0)?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(p.err("trailing characters after document"));
    }
    Ok(node)
}

struct Parser<'a, 'b> {
    bytes: &'a [u8],
    pos: usize,
    index: &'b LineIndex<'a>,
}

impl<'a, 'b> Parser<'a, 'b> {
    fn err(&self, message: &str) -> ParseError {
        self.index.error(self.pos, ParseErrorKind::Syntax, message)
    }

    fn skip_ws(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if matches!(b, b' ' | b'\t' | b'\n' | b'\r') {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn value(&mut self, depth: usize) -> Result<Node, ParseError> {
        if depth > MAX_DEPTH {
            return Err(self.err("nesting too deep"));
        }
        let offset = self.pos;
        let value = match self.bytes.get(self.pos) {
            None => return Err(self.err("unexpected end of input")),
            Some(b'{') => self.object(depth)?,
            Some(b'[') => self.array(depth)?,
            Some(b'"') => Value::Str(self.string()?),
            Some(b't') => self.keyword("true", Value::Bool(true))?,
            Some(b'f') => self.keyword("false", Value::Bool(false))?,
            Some(b'n') => self.keyword("null", Value::Null)?,
            Some(b'-' | b'0'..=b'9') => Value::Number(self.number()?),
            Some(_) => return Err(self.err("unexpected character")),
        };
        Ok(Node { offset, value })
    }

    fn keyword(&mut self, word: &str, v: Value) -> Result<Value, ParseError> {
        if self.bytes[self.pos..].starts_with(word.as_bytes()) {
            self.pos += word.len();
            Ok(v)
        } else {
            Err(self.err("invalid literal"))
        }
    }

    fn object(&mut self, depth: usize) -> Result<Value, ParseError> {
        self.pos += 1;
        let mut members: Vec<(String, Node)> = Vec::new();
        self.skip_ws();
        if self.bytes.get(self.pos) == Some(&b'}') {
            self.pos += 1;
            return Ok(Value::Object(members));
        }
        loop {
            self.skip_ws();
            if self.bytes.get(self.pos) != Some(&b'"') {
                return Err(self.err("expected object key"));
            }
            let key_offset = self.pos;
            let key = self.string()?;
            if members.iter().any(|(k, _)| *k == key) {
                return Err(self.index.error(key_offset, ParseErrorKind::Syntax, format!("duplicate key `{key}`")));
            }
            self.skip_ws();
            if self.bytes.get(self.pos) != Some(&b':') {
                return Err(self.err("expected `:`"));
            }
            self.pos += 1;
            self.skip_ws();
            let v = self.value(depth + 1)?;
            members.push((key, v));
            self.skip_ws();
            match self.bytes.get(self.pos) {
                Some(b',') => self.pos += 1,
                Some(b'}') => {
                    self.pos += 1;
                    return Ok(Value::Object(members));
                }
                _ => return Err(self.err("expected `,` or `}`")),
            }
        }
    }

    fn array(&mut self, depth: usize) -> Result<Value, ParseError> {
        self.pos += 1;
        let mut items = Vec::new();
        self.skip_ws();
        if self.bytes.get(self.pos) == Some(&b']') {
            self.pos += 1;
            return Ok(Value::Array(items));
        }
        loop {
            self.skip_ws();
            items.push(self.value(depth + 1)?);
            self.skip_ws();
            match self.bytes.get(self.pos) {
                Some(b',') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    return Ok(Value::Array(items));
                }
                _ => return Err(self.err("expected `,` or `]`")),
            }
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        self.pos += 1;
        let mut out = String::new();
        loop {
            let start = self.pos;
            while let Some(&b) = self.bytes.get(self.pos) {
                if b == b'"' || b == b'\\' || b < 0x20 {
                    break;
                }
                self.pos += 1;
            }
            // the input is a &str and we only stop on ASCII bytes, so this slice is valid UTF-8
            out.push_str(std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| self.err("invalid UTF-8"))?);
            match self.bytes.get(self.pos) {
                None => return Err(self.err("unterminated string")),
                Some(b'"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some(b'\\') => {
                    self.pos += 1;
                    let c = match self.bytes.get(self.pos) {
                        Some(b'"') => '"',
                        Some(b'\\') => '\\',
                        Some(b'/') => '/',
                        Some(b'n') => '\n',
                        Some(b't') => '\t',
                        Some(b'r') => '\r',
                        Some(b'b') => '\u{8}',
                        Some(b'f') => '\u{c}',
                        Some(b'u') => {
                            let hex = self
                                .bytes
                                .get(self.pos + 1..self.pos + 5)
                                .and_then(|h| std::str::from_utf8(h).ok())
                                .and_then(|h| u32::from_str_radix(h, 16).ok())
                                .ok_or_else(|| self.err("invalid unicode escape"))?;
                            self.pos += 4;
                            char::from_u32(hex).ok_or_else(|| self.err("unsupported unicode escape"))?
                        }
                        _ => return Err(self.err("invalid escape")),
                    };
                    self.pos += 1;
                    out.push(c);
                }
                Some(_) => return Err(self.err("control character in string")),
            }
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        if self.bytes.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        let digits = |p: &mut Self| {
            let s = p.pos;
            while matches!(p.bytes.get(p.pos), Some(b'0'..=b'9')) {
                p.pos += 1;
            }
            p.pos - s
        };
        match self.bytes.get(self.pos) {
            Some(b'0') => self.pos += 1,
            Some(b'1'..=b'9') => {
                digits(self);
            }
            _ => return Err(self.err("malformed number")),
        }
        if self.bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            if digits(self) == 0 {
                return Err(self.err("malformed number"));
            }
        }
        if matches!(self.bytes.get(self.pos), Some(b'e' | b'E')) {
            self.pos += 1;
            if matches!(self.bytes.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                return Err(self.err("malformed number"));
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii");
        let v: f64 = text.parse().map_err(|_| self.index.error(start, ParseErrorKind::Syntax, "malformed number"))?;
        if !v.is_finite() {
            return Err(self.index.error(start, ParseErrorKind::Range, "number out of range"));
        }
        Ok(v)
    }
}

/// Typed accessors that turn shape mismatches into located errors.
pub(crate) struct Reader<'a, 'b> {
    pub(crate) index: &'b LineIndex<'a>,
}

impl<'a, 'b> Reader<'a, 'b> {
    pub(crate) fn syntax(&self, node: &Node, msg: impl Into<String>) -> ParseError {
        self.index.error(node.offset, ParseErrorKind::Syntax, msg)
    }

    pub(crate) fn object<'n>(&self, node: &'n Node, what: &str) -> Result<&'n [(String, Node)], ParseError> {
        match &node.value {
            Value::Object(m) => Ok(m),
            _ => Err(self.syntax(node, format!("{what} must be an object"))),
        }
    }

    pub(crate) fn array<'n>(&self, node: &'n Node, what: &str) -> Result<&'n [Node], ParseError> {
        match &node.value {
            Value::Array(a) => Ok(a),
            _ => Err(self.syntax(node, format!("{what} must be an array"))),
        }
    }

    pub(crate) fn field<'n>(&self, obj: &'n Node, key: &str) -> Result<&'n Node, ParseError> {
        self.optional(obj, key)?
            .ok_or_else(|| self.syntax(obj, format!("missing key `{key}`")))
    }

    pub(crate) fn optional<'n>(&self, obj: &'n Node, key: &str) -> Result<Option<&'n Node>, ParseError> {
        let members = self.object(obj, "value")?;
        Ok(members.iter().find(|(k, _)| k == key).map(|(_, v)| v))
    }

    pub(crate) fn number(&self, node: &Node, what: &str) -> Result<f64, ParseError> {
        match node.value {
            Value::Number(v) => Ok(v),
            _ => Err(self.syntax(node, format!("{what} must be a number"))),
        }
    }

    pub(crate) fn num_field(&self, obj: &Node, key: &str) -> Result<f64, ParseError> {
        let n = self.field(obj, key)?;
        self.number(n, key)
    }

    pub(crate) fn integer(&self, node: &Node, what: &str) -> Result<i64, ParseError> {
        let v = self.number(node, what)?;
        if v.fract() != 0.0 || v.abs() > 9.0e15 {
            return Err(self.syntax(node, format!("{what} must be an integer")));
        }
        Ok(v as i64)
    }

    pub(crate) fn index_field(&self, obj: &Node, key: &str) -> Result<(usize, usize), ParseError> {
        let n = self.field(obj, key)?;
        let v = self.integer(n, key)?;
        if v < 0 {
            return Err(self.index.error(n.offset, ParseErrorKind::Reference, format!("{key} must be non-negative")));
        }
        Ok((v as usize, n.offset))
    }

    pub(crate) fn string<'n>(&self, node: &'n Node, what: &str) -> Result<&'n str, ParseError> {
        match &node.value {
            Value::Str(s) => Ok(s),
            _ => Err(self.syntax(node, format!("{what} must be a string"))),
        }
    }

    /// Elements of an optional top-level array; absence yields an empty slice.
    pub(crate) fn optional_array<'n>(&self, obj: &'n Node, key: &str) -> Result<&'n [Node], ParseError> {
        match self.optional(obj, key)? {
            None => Ok(&[]),
            Some(n) => self.array(n, key),
        }
    }
}

/// Canonical float text: rounded to nine significant digits, then printed in
/// the shortest form that reads back to the rounded value.
pub fn format_f64(x: f64) -> String {
    assert!(x.is_finite(), "cannot serialize non-finite value {x}");
    if x == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    let a = rounded.abs();
    if (1e-6..1e15).contains(&a) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

/// Round a value onto the nine-significant-digit grid used by all writers.
pub fn canonical_f64(x: f64) -> f64 {
    format_f64(x).parse().expect("canonical float parses")
}

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Writes `"key": [\n    item,\n    item\n  ]` with one item per line.
pub(crate) fn write_array(out: &mut String, key: &str, items: &[String], last: bool) {
    out.push_str("  ");
    out.push_str(&quote(key));
    out.push_str(": [");
    if items.is_empty() {
        out.push(']');
    } else {
        out.push('\n');
        for (i, item) in items.iter().enumerate() {
            out.push_str("    ");
            out.push_str(item);
            if i + 1 < items.len() {
                out.push(',');
            }
            out.push('\n');
        }
        out.push_str("  ]");
    }
    if !last {
        out.push(',');
    }
    out.push('\n');
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(s: &str) -> Result<Node, ParseError> {
        let idx = LineIndex::new(s);
        parse(s, &idx)
    }

    #[test]
    fn parses_nested_document() {
        let n = parse_str(r#"{"a": [1, -2.5e1, true, null], "b": "x\"y"}"#).unwrap();
        let Value::Object(m) = n.value else { panic!() };
        assert_eq!(m.len(), 2);
        let Value::Array(a) = &m[0].1.value else { panic!() };
        assert!(matches!(a[1].value, Value::Number(v) if v == -25.0));
        assert!(matches!(&m[1].1.value, Value::Str(s) if s == "x\"y"));
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse_str("{\n  \"a\": 01\n}").unwrap_err();
        assert_eq!(e.line, 2);
        let e = parse_str("[1, 2").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Syntax);
        let e = parse_str("{\"a\":1,\"a\":2}").unwrap_err();
        assert!(e.message.contains("duplicate"));
        assert!(parse_str("").is_err());
        assert!(parse_str("[1e999]").is_err());
    }

    #[test]
    fn float_formatting_is_canonical() {
        assert_eq!(format_f64(0.0), "0");
        assert_eq!(format_f64(-0.0), "0");
        assert_eq!(format_f64(1.0), "1");
        assert_eq!(format_f64(0.1 + 0.2), "0.3");
        assert_eq!(format_f64(1.23456789012), "1.23456789");
        assert_eq!(format_f64(-2.5e-9), "-2.5e-9");
        assert_eq!(format_f64(99.5), "99.5");
        let x = 1.0 / 3.0;
        assert_eq!(format_f64(canonical_f64(x)), format_f64(x));
    }
}
