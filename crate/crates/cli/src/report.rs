//! PASS/FAIL reports shared by all subcommands.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    /// `value <= limit`, with both numbers in the detail text.
    pub fn at_most(name: impl Into<String>, what: &str, value: f64, limit: f64) -> Self {
        Self::new(name, value <= limit, format!("{what} {value:.6e} <= {limit:.6e}"))
    }

    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub command: String,
    /// Free-form `key: value` lines printed before the checks.
    pub info: Vec<(String, String)>,
    pub checks: Vec<Check>,
    /// CSV payload written to `--out` when present.
    pub csv: Option<String>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            ..Self::default()
        }
    }

    pub fn info(&mut self, key: &str, value: impl Into<String>) {
        self.info.push((key.to_string(), value.into()));
    }

    pub fn check(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn find(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[{}]", self.command);
        for (k, v) in &self.info {
            let _ = writeln!(out, "{k}: {v}");
        }
        for c in &self.checks {
            let _ = writeln!(out, "{}", c.line());
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        let _ = writeln!(out, "summary: {passed}/{} checks passed", self.checks.len());
        out
    }
}
