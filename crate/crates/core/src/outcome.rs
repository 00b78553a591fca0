use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Scalar configuration value recorded alongside a test result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(u64),
    Real(f64),
    Text(String),
}

impl From<usize> for ParamValue {
    fn from(v: usize) -> Self {
        ParamValue::Int(v as u64)
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Real(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_string())
    }
}

impl From<String> for ParamValue {
    fn from(v: String) -> Self {
        ParamValue::Text(v)
    }
}

impl std::fmt::Display for ParamValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Real(v) => write!(f, "{v}"),
            ParamValue::Text(v) => f.write_str(v),
        }
    }
}

/// Wall-clock seconds spent in each phase of a test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total: f64,
    pub statistic: f64,
    pub null: f64,
}

/// Result of one independence test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub m: usize,
    pub params: BTreeMap<String, ParamValue>,
    pub seed: u64,
    pub seconds: Timings,
}

/// Small helper that accumulates phase timings.
pub(crate) struct Stopwatch {
    start: Instant,
    statistic: Duration,
    null: Duration,
}

impl Stopwatch {
    pub(crate) fn start() -> Self {
        Self {
            start: Instant::now(),
            statistic: Duration::ZERO,
            null: Duration::ZERO,
        }
    }

    pub(crate) fn statistic<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.statistic += t.elapsed();
        out
    }

    pub(crate) fn null<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.null += t.elapsed();
        out
    }

    pub(crate) fn finish(&self) -> Timings {
        Timings {
            total: self.start.elapsed().as_secs_f64(),
            statistic: self.statistic.as_secs_f64(),
            null: self.null.as_secs_f64(),
        }
    }
}
