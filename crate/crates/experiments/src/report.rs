use std::fmt::Write as _;

use serde::Serialize;

/// One CSV cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Int(u64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as u64)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

/// Floats with 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            Value::Float(f) => fmt_float(*f),
            Value::Text(s) => s.clone(),
            Value::Bool(b) => b.to_string(),
        }
    }
}

/// Named pass/fail criterion of a study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance rule, e.g. `<= 1e-8`.
    pub rule: String,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, rule: impl Into<String>, passed: bool) -> Self {
        Self {
            name: name.into(),
            value,
            rule: rule.into(),
            passed,
        }
    }

    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::new(name, value, format!("<= {bound:e}"), value <= bound)
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::new(name, value, format!(">= {bound:e}"), value >= bound)
    }
}

/// Random stream used by a study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StreamRecord {
    pub seed: u64,
    pub stream: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyReport {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub checks: Vec<Check>,
    pub streams: Vec<StreamRecord>,
    pub notes: Vec<String>,
    pub runtime_secs: f64,
}

impl StudyReport {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            checks: Vec::new(),
            streams: Vec::new(),
            notes: Vec::new(),
            runtime_secs: 0.0,
        }
    }

    pub fn push_row(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn stream(&mut self, seed: u64, stream: impl Into<String>) {
        self.streams.push(StreamRecord {
            seed,
            stream: stream.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// CSV body. Contains no timings, so reruns compare byte for byte.
    pub fn csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Value::render).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// One line per check, `PASS`/`FAIL` first.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} {}/{}: {} (rule {})",
                if c.passed { "PASS" } else { "FAIL" },
                self.name,
                c.name,
                fmt_float(c.value),
                c.rule
            );
        }
        s
    }
}
