//! Rendering of command reports as aligned tables, CSV or JSON.
//!
//! JSON documents have the shape
//! `{"schema": "dcf-netcalc.<kind>.v1", "meta": {..}, "records": [..]}` and
//! CSV carries the records only, with the same column names.

use std::fmt::Write as _;

use anyhow::Result;
use clap::ValueEnum;
use serde_json::{Map, Value};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Csv,
    Json,
}

/// A command's result: summary fields plus uniform records.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub kind: &'static str,
    pub meta: Map<String, Value>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// Printed to stderr, never part of the data.
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(kind: &'static str, columns: &[&str]) -> Self {
        Self {
            kind,
            meta: Map::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn schema(&self) -> String {
        format!("dcf-netcalc.{}.v{SCHEMA_VERSION}", self.kind)
    }

    pub fn meta(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Table => Ok(self.render_table()),
            Format::Csv => self.render_csv(),
            Format::Json => self.render_json(),
        }
    }

    fn render_table(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "{k}: {}", human(v));
        }
        if self.columns.is_empty() {
            return out;
        }
        if !self.meta.is_empty() {
            out.push('\n');
        }
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(human).collect()).collect();
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| cells.iter().map(|r| r[i].len()).chain([c.len()]).max().unwrap_or(0))
            .collect();
        let line = |fields: Vec<&str>| -> String {
            fields
                .iter()
                .zip(&widths)
                .map(|(f, w)| format!("{f:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let _ = writeln!(out, "{}", line(self.columns.iter().map(String::as_str).collect()));
        for r in &cells {
            let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
        }
        out
    }

    fn render_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(csv_cell))?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    fn render_json(&self) -> Result<String> {
        let records: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Object(self.columns.iter().cloned().zip(r.iter().cloned()).collect()))
            .collect();
        let mut doc = Map::new();
        doc.insert("schema".into(), self.schema().into());
        doc.insert("meta".into(), Value::Object(self.meta.clone()));
        doc.insert("records".into(), records.into());
        let mut s = serde_json::to_string_pretty(&Value::Object(doc))?;
        s.push('\n');
        Ok(s)
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn human(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        Value::Number(n) if n.is_f64() => {
            let f = n.as_f64().unwrap_or(f64::NAN);
            if f != 0.0 && (f.abs() < 1e-3 || f.abs() >= 1e6) {
                format!("{f:.4e}")
            } else {
                format!("{f:.6}")
            }
        }
        other => other.to_string(),
    }
}

/// Reads CSV written by [`Report::render`] back into columns and records.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((headers, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Report {
        let mut r = Report::new("demo", &["p", "bound1", "note"]);
        r.meta("lambda", 0.04);
        r.push(vec![json!(0.9), json!(24), json!("a,b")]);
        r.push(vec![json!(0.05), Value::Null, json!("")]);
        r
    }

    #[test]
    fn json_round_trip() {
        let r = sample();
        let v: Value = serde_json::from_str(&r.render(Format::Json).unwrap()).unwrap();
        assert_eq!(v["schema"], "dcf-netcalc.demo.v1");
        assert_eq!(v["meta"]["lambda"], 0.04);
        assert_eq!(v["records"][0]["bound1"], 24);
        assert_eq!(v["records"][1]["bound1"], Value::Null);
        // column order is kept
        let keys: Vec<_> = v["records"][0].as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["p", "bound1", "note"]);
    }

    #[test]
    fn csv_round_trip() {
        let r = sample();
        let (h, rows) = parse_csv(&r.render(Format::Csv).unwrap()).unwrap();
        assert_eq!(h, ["p", "bound1", "note"]);
        assert_eq!(rows[0], ["0.9", "24", "a,b"]);
        assert_eq!(rows[1], ["0.05", "", ""]);
    }

    #[test]
    fn table_is_aligned() {
        let t = sample().render(Format::Table).unwrap();
        assert!(t.starts_with("lambda: 0.040000\n"));
        let lines: Vec<&str> = t.lines().skip(2).collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
    }
}
