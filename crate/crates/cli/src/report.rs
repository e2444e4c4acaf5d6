//! Key/value reports, tolerance checks and CSV helpers.

use std::fmt::Display;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

/// Ordered `key,value` rows, written as `report.csv` and echoed to stdout.
#[derive(Debug, Default, Clone)]
pub struct Report {
    rows: Vec<(String, String)>,
}

impl Report {
    pub fn add(&mut self, key: impl Into<String>, value: impl Display) {
        self.rows.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.rows.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_rows(path, &["key", "value"], self.rows.iter().map(|(k, v)| (k, v)))
    }

    pub fn print(&self) {
        for (k, v) in &self.rows {
            println!("{k:<28} {v}");
        }
    }
}

/// Outcome of one tolerance comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    /// `|value − expected| ≤ tol`.
    pub fn absolute(name: &str, value: f64, expected: f64, tol: f64) -> Self {
        let err = (value - expected).abs();
        Self {
            name: name.into(),
            passed: err <= tol,
            detail: format!("{value:.6} vs {expected:.6} (|err| {err:.3e}, tol {tol:.3e})"),
        }
    }

    /// `|value − expected| ≤ tol · |expected|`.
    pub fn relative(name: &str, value: f64, expected: f64, tol: f64) -> Self {
        let rel = (value - expected).abs() / expected.abs();
        Self {
            name: name.into(),
            passed: rel <= tol,
            detail: format!("{value:.6} vs {expected:.6} (rel {rel:.3e}, tol {tol:.3e})"),
        }
    }

    /// Angular distance on the circle.
    pub fn angle(name: &str, value: f64, expected: f64, tol: f64) -> Self {
        let err = hopfid::wrap_pi(value - expected).abs();
        Self {
            name: name.into(),
            passed: err <= tol,
            detail: format!("{value:.4} vs {expected:.4} rad (|err| {err:.3e}, tol {tol:.3e})"),
        }
    }

    pub fn upper(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            passed: value < bound,
            detail: format!("{value:.6} < {bound:.6}"),
        }
    }

    pub fn line(&self) -> String {
        format!("[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub fn write_checks(path: &Path, checks: &[Check]) -> Result<()> {
    write_rows(
        path,
        &["check", "passed", "detail"],
        checks.iter().map(|c| (&c.name, c.passed, &c.detail)),
    )
}

/// Writes a header and serializable rows.
pub fn write_rows<R: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Empty cell for missing values.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
