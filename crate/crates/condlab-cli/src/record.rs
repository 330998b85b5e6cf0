//! Flat experiment records: parameters and results keyed by name, with a
//! deterministic column order for emission.

use std::collections::BTreeMap;
use std::fmt;

/// A single cell value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Int(v) => serde_json::Value::from(*v),
            Value::Float(v) => serde_json::Number::from_f64(*v)
                .map(serde_json::Value::Number)
                .unwrap_or_else(|| serde_json::Value::String(v.to_string())),
            Value::Text(v) => serde_json::Value::String(v.clone()),
            Value::Bool(v) => serde_json::Value::Bool(*v),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v}"),
            Value::Text(v) => write!(f, "{v}"),
            Value::Bool(v) => write!(f, "{v}"),
        }
    }
}

/// One row of a result table. Every numeric estimate carries its analytic
/// reference in a sibling column or the explicit marker `empirical-only`.
#[derive(Debug, Clone)]
pub struct ExperimentRecord {
    pub suite: String,
    pub seed: u64,
    pub params: BTreeMap<String, Value>,
    pub results: BTreeMap<String, Value>,
}

impl ExperimentRecord {
    pub fn new(suite: &str, seed: u64) -> Self {
        Self {
            suite: suite.to_string(),
            seed,
            params: BTreeMap::new(),
            results: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: &str, value: Value) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn result(mut self, key: &str, value: Value) -> Self {
        self.results.insert(key.to_string(), value);
        self
    }

    pub fn passed(self, passed: bool) -> Self {
        self.result("passed", Value::Bool(passed))
    }

    pub fn is_passed(&self) -> bool {
        !matches!(self.results.get("passed"), Some(Value::Bool(false)))
    }
}

pub fn all_passed(records: &[ExperimentRecord]) -> bool {
    records.iter().all(ExperimentRecord::is_passed)
}
