//! Deterministic text output: 17 significant digits, no locale, sorted JSON
//! keys.

use std::io::Write;
use std::str::FromStr;

use serde_json::{Map, Number, Value};

use crate::error::Result;

/// Fixed scientific formatting with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        // Explicit exponent sign so CSV and JSON render identically.
        let s = format!("{x:.16e}");
        match s.split_once('e') {
            Some((m, e)) if !e.starts_with('-') => format!("{m}e+{e}"),
            _ => s,
        }
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// JSON number carrying the fixed formatting verbatim; non-finite values map
/// to `null`.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(Number::from_str(&fmt_f64(x)).expect("formatted float is valid JSON"))
    } else {
        Value::Null
    }
}

pub fn int(x: usize) -> Value {
    Value::Number(Number::from(x as u64))
}

pub fn text(s: impl Into<String>) -> Value {
    Value::String(s.into())
}

/// Small builder for sorted-key JSON objects.
#[derive(Debug, Default, Clone)]
pub struct Obj(Map<String, Value>);

impl Obj {
    pub fn new() -> Self {
        Self(Map::new())
    }

    pub fn set(mut self, key: &str, value: Value) -> Self {
        self.0.insert(key.to_string(), value);
        self
    }

    pub fn insert(&mut self, key: &str, value: Value) {
        self.0.insert(key.to_string(), value);
    }

    pub fn build(self) -> Value {
        Value::Object(self.0)
    }
}

pub fn write_json<W: Write>(mut w: W, value: &Value) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    writeln!(w)?;
    Ok(())
}

/// Plain CSV writer with an optional leading `#` comment line.
pub struct CsvWriter<W: Write> {
    inner: W,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut inner: W, comment: Option<&str>, columns: &[&str]) -> Result<Self> {
        if let Some(c) = comment {
            writeln!(inner, "# {c}")?;
        }
        writeln!(inner, "{}", columns.join(","))?;
        Ok(Self { inner })
    }

    pub fn row(&mut self, values: &[f64]) -> Result<()> {
        let line: Vec<String> = values.iter().map(|&x| fmt_f64(x)).collect();
        writeln!(self.inner, "{}", line.join(","))?;
        Ok(())
    }

    pub fn raw_row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.inner, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}
