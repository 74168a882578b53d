use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    /// Stable machine-readable identifier, e.g. `row_sum` or `linear_dependence`.
    pub code: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    pub message: String,
}

/// Collection of findings from a validation pass. Never an `Err`: callers decide
/// whether warnings or errors block their workflow.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        severity: Severity,
        code: &str,
        matrix: Option<usize>,
        row: Option<usize>,
        message: impl Into<String>,
    ) {
        self.issues.push(Issue {
            severity,
            code: code.to_string(),
            matrix,
            row,
            message: message.into(),
        });
    }

    pub fn error(&mut self, code: &str, matrix: Option<usize>, row: Option<usize>, msg: impl Into<String>) {
        self.push(Severity::Error, code, matrix, row, msg);
    }

    pub fn warning(&mut self, code: &str, matrix: Option<usize>, row: Option<usize>, msg: impl Into<String>) {
        self.push(Severity::Warning, code, matrix, row, msg);
    }

    /// True when no issue has error severity.
    pub fn is_ok(&self) -> bool {
        !self.issues.iter().any(|i| i.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Warning)
    }

    pub fn has_code(&self, code: &str) -> bool {
        self.issues.iter().any(|i| i.code == code)
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.issues.extend(other.issues);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "ok");
        }
        for (n, i) in self.issues.iter().enumerate() {
            if n > 0 {
                writeln!(f)?;
            }
            let sev = match i.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            write!(f, "{sev}[{}]", i.code)?;
            if let Some(m) = i.matrix {
                write!(f, " matrix {m}")?;
            }
            if let Some(r) = i.row {
                write!(f, " row {r}")?;
            }
            write!(f, ": {}", i.message)?;
        }
        Ok(())
    }
}
