//! Output records and their CSV / JSON encodings.
//!
//! Floats are written in shortest round-trip form, so parsing an output file
//! recovers every value exactly.

use std::collections::BTreeMap;

use hsic::experiments::PowerReport;
use hsic::{ParamValue, TestOutcome, Timings};
use serde::{Deserialize, Serialize};

use crate::config::MethodConfig;
use crate::error::{CliError, CliResult};

/// Integer, then real, then text.
fn typed(v: String) -> ParamValue {
    if let Ok(i) = v.parse::<u64>() {
        ParamValue::Int(i)
    } else if let Ok(x) = v.parse::<f64>() {
        ParamValue::Real(x)
    } else {
        ParamValue::Text(v)
    }
}

/// JSON form of one test. `seconds` is null when timings are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub m: usize,
    pub params: BTreeMap<String, ParamValue>,
    pub seed: u64,
    pub seconds: Option<Timings>,
}

impl TestRecord {
    /// Merges the effective configuration into the library's parameters;
    /// library entries (e.g. resolved kernels) take precedence.
    pub fn new(
        outcome: TestOutcome,
        cfg: &MethodConfig,
        extra: &[(&str, String)],
        timings: bool,
    ) -> Self {
        let mut params = outcome.params;
        for (k, v) in MethodConfig::COLUMNS.iter().zip(cfg.values()).skip(1) {
            if !v.is_empty()
                && *k != "kernel_x"
                && *k != "kernel_y"
                && *k != "seed"
                && *k != "alpha"
            {
                params.entry((*k).to_string()).or_insert_with(|| typed(v));
            }
        }
        params.insert("kernel_family_x".into(), cfg.kernel_x.clone().into());
        params.insert("kernel_family_y".into(), cfg.kernel_y.clone().into());
        for (k, v) in extra {
            params.insert((*k).to_string(), v.clone().into());
        }
        Self {
            method: outcome.method,
            statistic: outcome.statistic,
            p_value: outcome.p_value,
            reject: outcome.reject,
            alpha: outcome.alpha,
            m: outcome.m,
            params,
            seed: outcome.seed,
            seconds: timings.then_some(outcome.seconds),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes") + "\n"
    }

    /// Header plus one row; parameters become trailing columns in key order.
    pub fn to_csv(&self) -> String {
        let mut header: Vec<String> = [
            "method",
            "statistic",
            "p_value",
            "reject",
            "alpha",
            "m",
            "seed",
            "seconds_total",
            "seconds_statistic",
            "seconds_null",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let t = |f: fn(&Timings) -> f64| {
            self.seconds
                .as_ref()
                .map(|s| f(s).to_string())
                .unwrap_or_default()
        };
        let mut row = vec![
            self.method.clone(),
            self.statistic.to_string(),
            self.p_value.to_string(),
            self.reject.to_string(),
            self.alpha.to_string(),
            self.m.to_string(),
            self.seed.to_string(),
            t(|s| s.total),
            t(|s| s.statistic),
            t(|s| s.null),
        ];
        for (k, v) in &self.params {
            header.push(k.clone());
            row.push(v.to_string());
        }
        csv_text(&header, &[row])
    }
}

fn csv_text(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// One (method, m) row of a power or bench table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub m: usize,
    pub power: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean seconds per test; `None` when timings are omitted.
    pub seconds: Option<f64>,
    pub trials: usize,
    pub rejections: usize,
    pub generator: String,
    pub dim: usize,
    /// `data` or `generator` for Nystrom, empty otherwise.
    pub landmark_source: String,
    pub config: MethodConfig,
    pub descriptor: String,
}

const LEAD: [&str; 11] = [
    "method",
    "m",
    "power",
    "ci_low",
    "ci_high",
    "seconds",
    "trials",
    "rejections",
    "generator",
    "dim",
    "landmark_source",
];

impl SweepRow {
    pub fn new(
        report: &PowerReport,
        cfg: &MethodConfig,
        generator: &str,
        dim: usize,
        landmark_source: &str,
        timings: bool,
    ) -> Self {
        Self {
            method: report.method.clone(),
            m: report.m,
            power: report.power,
            ci_low: report.ci_low,
            ci_high: report.ci_high,
            seconds: timings.then_some(report.mean_test_seconds),
            trials: report.trials,
            rejections: report.rejections,
            generator: generator.into(),
            dim,
            landmark_source: landmark_source.into(),
            config: cfg.clone(),
            descriptor: report.method_descriptor.clone(),
        }
    }

    /// Column names; the timing column is `mean_test_seconds` in bench tables.
    pub fn header(bench: bool) -> Vec<String> {
        let mut h: Vec<String> = LEAD.iter().map(|s| s.to_string()).collect();
        if bench {
            h[5] = "mean_test_seconds".into();
        }
        h.extend(MethodConfig::COLUMNS[1..].iter().map(|s| s.to_string()));
        h.push("descriptor".into());
        h
    }

    fn values(&self) -> Vec<String> {
        let mut v = vec![
            self.method.clone(),
            self.m.to_string(),
            self.power.to_string(),
            self.ci_low.to_string(),
            self.ci_high.to_string(),
            self.seconds.map(|s| s.to_string()).unwrap_or_default(),
            self.trials.to_string(),
            self.rejections.to_string(),
            self.generator.clone(),
            self.dim.to_string(),
            self.landmark_source.clone(),
        ];
        v.extend(self.config.values().into_iter().skip(1));
        v.push(self.descriptor.clone());
        v
    }

    fn from_values(v: &[&str]) -> Result<Self, String> {
        let n = LEAD.len();
        if v.len() != n + MethodConfig::COLUMNS.len() {
            return Err(format!(
                "expected {} fields, got {}",
                n + MethodConfig::COLUMNS.len(),
                v.len()
            ));
        }
        fn num<T: std::str::FromStr>(s: &str, name: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("invalid {name} '{s}'"))
        }
        let mut cfg_fields = vec![v[0]];
        cfg_fields.extend(&v[n..v.len() - 1]);
        Ok(Self {
            method: v[0].into(),
            m: num(v[1], "m")?,
            power: num(v[2], "power")?,
            ci_low: num(v[3], "ci_low")?,
            ci_high: num(v[4], "ci_high")?,
            seconds: if v[5].is_empty() {
                None
            } else {
                Some(num(v[5], "seconds")?)
            },
            trials: num(v[6], "trials")?,
            rejections: num(v[7], "rejections")?,
            generator: v[8].into(),
            dim: num(v[9], "dim")?,
            landmark_source: v[10].into(),
            config: MethodConfig::from_values(&cfg_fields)?,
            descriptor: v[v.len() - 1].into(),
        })
    }
}

pub fn sweep_csv(rows: &[SweepRow], bench: bool) -> String {
    let values: Vec<Vec<String>> = rows.iter().map(SweepRow::values).collect();
    csv_text(&SweepRow::header(bench), &values)
}

pub fn sweep_json(rows: &[SweepRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize") + "\n"
}

/// Parses a table written by [`sweep_csv`].
pub fn parse_sweep_csv(text: &str) -> CliResult<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Parse(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let fields: Vec<&str> = rec.iter().collect();
        rows.push(
            SweepRow::from_values(&fields)
                .map_err(|e| CliError::Parse(format!("line {line}: {e}")))?,
        );
    }
    Ok(rows)
}

pub fn parse_sweep_json(text: &str) -> CliResult<Vec<SweepRow>> {
    serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
}
