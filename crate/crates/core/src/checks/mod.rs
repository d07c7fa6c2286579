//! Self-checking property suites run by `roigan check` and the acceptance
//! harness: finite-difference gradients, metric oracles and the parameter
//! sharing invariant.

pub mod grad;
pub mod metrics;
pub mod sharing;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn new(suite: &'static str, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            suite,
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    /// A failed check carrying the error that stopped it.
    pub fn error(suite: &'static str, name: impl Into<String>, e: &Error) -> Self {
        Self::new(suite, name, false, format!("error: {e}"))
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag}  {:<8} {:<40} {}", self.suite, self.name, self.detail)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Grad,
    Metrics,
    Sharing,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grad" => Ok(Self::Grad),
            "metrics" => Ok(Self::Metrics),
            "sharing" => Ok(Self::Sharing),
            "all" => Ok(Self::All),
            _ => Err(Error::Config(format!(
                "unknown suite '{s}' (grad, metrics, sharing, all)"
            ))),
        }
    }
}

/// Results of a suite run with its wall-clock time.
#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub results: Vec<CheckResult>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| !r.passed).count()
    }
}

pub fn run(suite: Suite) -> SuiteReport {
    let start = Instant::now();
    let mut results = Vec::new();
    if matches!(suite, Suite::Grad | Suite::All) {
        results.extend(grad::suite());
    }
    if matches!(suite, Suite::Metrics | Suite::All) {
        results.extend(metrics::suite());
    }
    if matches!(suite, Suite::Sharing | Suite::All) {
        results.extend(sharing::suite());
    }
    SuiteReport {
        results,
        seconds: start.elapsed().as_secs_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        assert_eq!("grad".parse::<Suite>().unwrap(), Suite::Grad);
        assert_eq!("all".parse::<Suite>().unwrap(), Suite::All);
        assert!("gradient".parse::<Suite>().is_err());
    }
}
