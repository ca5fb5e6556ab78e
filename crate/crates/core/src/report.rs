//! Result emission: CSV tables (RFC 4180, LF line endings), pretty JSON
//! with sorted keys, and atomic file writes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// A cell of an output table.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            // 17 significant digits: round-trips every f64 exactly.
            Cell::Float(v) => fmt_float(*v),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }
}

/// Formats a double with enough digits to round-trip exactly.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// A rectangular table with a header row.
#[derive(Debug, Clone)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: Vec<S>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::domain("table needs at least one column"));
        }
        Ok(Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        })
    }

    pub fn push_row(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::domain(format!(
                "row width {} does not match {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Serializes to CSV; empty tables are rejected rather than silently
    /// emitting a header-only file.
    pub fn to_csv(&self) -> Result<String> {
        if self.rows.is_empty() {
            return Err(Error::domain("refusing to emit an empty table"));
        }
        let mut out = String::new();
        out.push_str(&join_csv_line(&self.columns));
        for row in &self.rows {
            let rendered: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&join_csv_line(&rendered));
        }
        Ok(out)
    }
}

fn join_csv_line(fields: &[String]) -> String {
    let mut line = fields
        .iter()
        .map(|f| quote_csv(f))
        .collect::<Vec<_>>()
        .join(",");
    line.push('\n');
    line
}

/// RFC 4180 quoting: wrap fields containing commas, quotes, or line
/// breaks in double quotes, doubling embedded quotes.
fn quote_csv(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Writes bytes atomically: a temp file in the same directory is renamed
/// over the destination, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut tmp: PathBuf = path.to_path_buf();
    let name = path
        .file_name()
        .ok_or_else(|| Error::domain("output path has no file name"))?;
    tmp.set_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Writes a table as CSV.
pub fn write_csv(path: &Path, table: &Table) -> Result<()> {
    write_atomic(path, table.to_csv()?.as_bytes())
}

/// Writes pretty-printed JSON. `serde_json::Value` objects keep their
/// keys in sorted order, so output is canonical.
pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_renders_header_and_rows() {
        let mut t = Table::new(vec!["a", "b"]).unwrap();
        t.push_row(vec![Cell::Int(1), Cell::Text("x".into())]).unwrap();
        assert_eq!(t.to_csv().unwrap(), "a,b\n1,x\n");
    }

    #[test]
    fn csv_quotes_special_fields() {
        let mut t = Table::new(vec!["a"]).unwrap();
        t.push_row(vec![Cell::Text("he said \"hi\", twice".into())])
            .unwrap();
        t.push_row(vec![Cell::Text("two\nlines".into())]).unwrap();
        assert_eq!(
            t.to_csv().unwrap(),
            "a\n\"he said \"\"hi\"\", twice\"\n\"two\nlines\"\n"
        );
    }

    #[test]
    fn empty_table_rejected() {
        let t = Table::new(vec!["a"]).unwrap();
        assert!(t.to_csv().is_err());
        assert!(Table::new(Vec::<String>::new()).is_err());
        let mut t = Table::new(vec!["a"]).unwrap();
        assert!(t.push_row(vec![Cell::Int(1), Cell::Int(2)]).is_err());
    }

    #[test]
    fn float_format_round_trips() {
        let cases = [
            0.1,
            1.0 / 3.0,
            std::f64::consts::PI,
            1e-300,
            -2.2250738585072014e-308,
            9007199254740993.0,
            f64::MAX,
        ];
        for v in cases {
            let s = fmt_float(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} -> {s}");
        }
    }

    #[test]
    fn atomic_write_replaces_and_cleans_up() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("file.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        let leftovers: Vec<_> = fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(leftovers.len(), 1);
    }
}
