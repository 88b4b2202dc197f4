use std::fmt;

/// Classification of a parse failure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    Range,
    Reference,
    Checksum,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseErrorKind::Syntax => "syntax",
            ParseErrorKind::Range => "range",
            ParseErrorKind::Reference => "reference",
            ParseErrorKind::Checksum => "checksum",
        })
    }
}

/// A located parse failure. `line` and `column` are 1-based and always point
/// inside the input (an empty input reports 1:1).
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: {kind}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
    pub message: String,
}

/// A range violation downgraded to a diagnostic in lenient mode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: warning: {}", self.line, self.column, self.message)
    }
}

/// How range violations in label files are treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Validation {
    #[default]
    Strict,
    Lenient,
}

/// Maps byte offsets to (line, column) pairs.
pub(crate) struct LineIndex<'a> {
    text: &'a str,
    starts: Vec<usize>,
}

impl<'a> LineIndex<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        let mut starts = vec![0];
        for (i, b) in text.bytes().enumerate() {
            if b == b'\n' {
                starts.push(i + 1);
            }
        }
        LineIndex { text, starts }
    }

    /// Position of `offset`, clamped to the last character of the input.
    pub(crate) fn locate(&self, offset: usize) -> (usize, usize) {
        if self.text.is_empty() {
            return (1, 1);
        }
        let mut offset = offset.min(self.text.len() - 1);
        while !self.text.is_char_boundary(offset) {
            offset -= 1;
        }
        let line = match self.starts.binary_search(&offset) {
            Ok(l) => l,
            Err(l) => l - 1,
        };
        let column = self.text[self.starts[line]..offset].chars().count() + 1;
        (line + 1, column)
    }

    pub(crate) fn error(&self, offset: usize, kind: ParseErrorKind, message: impl Into<String>) -> ParseError {
        let (line, column) = self.locate(offset);
        ParseError {
            line,
            column,
            kind,
            message: message.into(),
        }
    }

    pub(crate) fn warning(&self, offset: usize, message: impl Into<String>) -> ParseWarning {
        let (line, column) = self.locate(offset);
        ParseWarning {
            line,
            column,
            message: message.into(),
        }
    }
}

/// Decode raw bytes, reporting the first invalid UTF-8 sequence as a syntax error.
pub(crate) fn decode_utf8(bytes: &[u8]) -> Result<&str, ParseError> {
    std::str::from_utf8(bytes).map_err(|e| {
        let valid = std::str::from_utf8(&bytes[..e.valid_up_to()]).unwrap_or("");
        let line = valid.matches('\n').count() + 1;
        let column = valid.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        ParseError {
            line,
            column,
            kind: ParseErrorKind::Syntax,
            message: "input is not valid UTF-8".into(),
        }
    })
}

/// Collects range diagnostics according to the validation mode.
pub(crate) struct RangeCheck<'a, 'b> {
    pub(crate) index: &'b LineIndex<'a>,
    pub(crate) mode: Validation,
    pub(crate) warnings: Vec<ParseWarning>,
}

impl<'a, 'b> RangeCheck<'a, 'b> {
    pub(crate) fn new(index: &'b LineIndex<'a>, mode: Validation) -> Self {
        RangeCheck {
            index,
            mode,
            warnings: Vec::new(),
        }
    }

    pub(crate) fn check(&mut self, ok: bool, offset: usize, message: impl FnOnce() -> String) -> Result<(), ParseError> {
        if ok {
            return Ok(());
        }
        match self.mode {
            Validation::Strict => Err(self.index.error(offset, ParseErrorKind::Range, message())),
            Validation::Lenient => {
                self.warnings.push(self.index.warning(offset, message()));
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locate_lines_and_columns() {
        let idx = LineIndex::new("ab\ncd\n");
        assert_eq!(idx.locate(0), (1, 1));
        assert_eq!(idx.locate(1), (1, 2));
        assert_eq!(idx.locate(3), (2, 1));
        assert_eq!(idx.locate(4), (2, 2));
        // past the end clamps to the final newline
        assert_eq!(idx.locate(100), (2, 3));
        assert_eq!(LineIndex::new("").locate(5), (1, 1));
    }

    #[test]
    fn utf8_error_is_located() {
        let err = decode_utf8(b"ok\nx\xff").unwrap_err();
        assert_eq!((err.line, err.column), (2, 2));
        assert_eq!(err.kind, ParseErrorKind::Syntax);
    }
}
