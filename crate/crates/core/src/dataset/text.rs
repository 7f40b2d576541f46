//! Whitespace-delimited tables with a header line.

use std::str::FromStr;

use crate::error::{Error, Result};

/// One data row: 1-based line number and its fields.
pub(crate) struct Row<'a> {
    pub line: usize,
    pub fields: Vec<&'a str>,
}

impl Row<'_> {
    pub fn parse<T: FromStr>(&self, source: &str, column: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.fields[column].parse().map_err(|e: T::Err| {
            Error::parse(
                source,
                format!("line {}", self.line),
                format!("field {}: {e}", column + 1),
            )
        })
    }

    pub fn float(&self, source: &str, column: usize) -> Result<f64> {
        let v: f64 = self.parse(source, column)?;
        if !v.is_finite() {
            return Err(Error::parse(
                source,
                format!("line {}", self.line),
                format!("field {} is not finite", column + 1),
            ));
        }
        Ok(v)
    }
}

/// Splits `text` into rows after checking the header. Blank lines are not allowed,
/// and the file must end with a newline so truncation is detected.
pub(crate) fn read_table<'a>(text: &'a str, source: &str, header: &[&str]) -> Result<Vec<Row<'a>>> {
    if !text.ends_with('\n') {
        return Err(Error::parse(
            source,
            "end of file",
            "missing final newline (truncated file?)",
        ));
    }
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split_whitespace().eq(header.iter().copied()) => {}
        Some((_, h)) => {
            return Err(Error::parse(
                source,
                "line 1",
                format!("expected header '{}', found '{h}'", header.join(" ")),
            ))
        }
        None => return Err(Error::parse(source, "line 1", "missing header")),
    }
    lines
        .map(|(i, l)| {
            let fields: Vec<&str> = l.split_whitespace().collect();
            if fields.len() != header.len() {
                return Err(Error::parse(
                    source,
                    format!("line {}", i + 1),
                    format!("expected {} fields, found {}", header.len(), fields.len()),
                ));
            }
            Ok(Row { line: i + 1, fields })
        })
        .collect()
}

/// Header line followed by one line per row.
pub(crate) fn write_table<I>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = String>,
{
    let mut out = header.join(" ");
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}
