//! Check records, JSON-lines output and the text summary.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One verified quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub check: String,
    pub params: Value,
    /// `null` when the quantity could not be computed; `params.error` says why.
    pub residual: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
    pub seconds: f64,
}

impl Record {
    /// Passes when the residual is finite and at most `tolerance`.
    pub fn new(check: &str, params: Value, residual: f64, tolerance: f64, seconds: f64) -> Self {
        let pass = residual.is_finite() && residual <= tolerance;
        Self { check: check.into(), params, residual: residual.is_finite().then_some(residual), tolerance, pass, seconds }
    }

    /// Passes when the value lies in [lo, hi]; the upper end is the reported tolerance.
    pub fn within(check: &str, mut params: Value, value: f64, lo: f64, hi: f64, seconds: f64) -> Self {
        params["range"] = serde_json::json!([lo, hi]);
        let pass = value.is_finite() && (lo..=hi).contains(&value);
        Self { check: check.into(), params, residual: value.is_finite().then_some(value), tolerance: hi, pass, seconds }
    }

    pub fn failed(check: &str, mut params: Value, error: impl ToString, tolerance: f64, seconds: f64) -> Self {
        params["error"] = Value::String(error.to_string());
        Self { check: check.into(), params, residual: None, tolerance, pass: false, seconds }
    }

    /// Compact single-line JSON.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

/// Runs `f`, returning its value and the elapsed seconds.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

pub fn to_jsonl(records: &[Record]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

fn suite_of(check: &str) -> &str {
    check.split('.').next().unwrap_or(check)
}

/// Per-suite pass counts and worst residual/tolerance, then every failure.
pub fn summary(records: &[Record]) -> String {
    let mut out = String::new();
    let mut suites: Vec<&str> = Vec::new();
    for r in records {
        let s = suite_of(&r.check);
        if !suites.contains(&s) {
            suites.push(s);
        }
    }
    let _ = writeln!(out, "{:<18} {:>6} {:>6} {:>12} {:>9}", "suite", "pass", "total", "worst r/tol", "seconds");
    for s in &suites {
        let rs: Vec<&Record> = records.iter().filter(|r| suite_of(&r.check) == *s).collect();
        let pass = rs.iter().filter(|r| r.pass).count();
        let worst = rs
            .iter()
            .filter_map(|r| r.residual.map(|v| if r.tolerance > 0.0 { v / r.tolerance } else if v == 0.0 { 0.0 } else { f64::INFINITY }))
            .fold(0.0, f64::max);
        let secs: f64 = rs.iter().map(|r| r.seconds).sum();
        let _ = writeln!(out, "{s:<18} {pass:>6} {:>6} {worst:>12.3e} {secs:>9.2}", rs.len());
    }
    let failed: Vec<&Record> = records.iter().filter(|r| !r.pass).collect();
    let total = records.len();
    let _ = writeln!(out, "{} of {total} checks passed", total - failed.len());
    for r in failed {
        let res = r.residual.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(out, "FAIL {} {} residual {res} tolerance {:.3e}", r.check, r.params, r.tolerance);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn pass_rules() {
        assert!(Record::new("a", json!({}), 0.0, 0.0, 0.0).pass);
        assert!(!Record::new("a", json!({}), f64::NAN, 1.0, 0.0).pass);
        assert!(!Record::new("a", json!({}), 2.0, 1.0, 0.0).pass);
        let r = Record::within("b", json!({"x": 1}), 2.0, 1.6, 2.6, 0.0);
        assert!(r.pass && r.params["range"][1] == 2.6);
        let f = Record::failed("c", json!({}), "band exhausted", 1e-7, 0.0);
        assert!(!f.pass && f.residual.is_none());
    }

    #[test]
    fn record_line_round_trips() {
        let r = Record::new("roots", json!({"N": 2, "M": 1}), 1.5e-13, 1e-10, 0.25);
        let line = r.to_line();
        assert!(line.starts_with(r#"{"check":"roots","params":{"M":1,"N":2},"residual":1.5e-13"#), "{line}");
        let back: Record = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
        let s = summary(&[r, Record::failed("roots", json!({}), "x", 1e-10, 0.0)]);
        assert!(s.contains("1 of 2 checks passed") && s.contains("FAIL roots"));
    }
}
