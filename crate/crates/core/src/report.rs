//! Verification reports: one entry per check, with the evaluation mode
//! (exhaustive or sampled) recorded so results are never silently weaker
//! than they look.

use serde::{Deserialize, Serialize};

/// How a check was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckMode {
    /// Every instance in the check's space was evaluated.
    Exhaustive,
    /// A uniform sample was evaluated; `samples` records how many.
    Sampled { samples: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub mode: CheckMode,
    /// Counterexample on failure, witness-count statistics on success.
    pub detail: String,
}

impl CheckResult {
    pub fn pass(name: &str, mode: CheckMode, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            pass: true,
            mode,
            detail: detail.into(),
        }
    }

    pub fn fail(name: &str, mode: CheckMode, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            pass: false,
            mode,
            detail: detail.into(),
        }
    }
}

/// Outcome of a multi-check verification. `pass` is true iff every check passed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn from_checks(checks: Vec<CheckResult>) -> Self {
        VerifyReport {
            pass: checks.iter().all(|c| c.pass),
            checks,
        }
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// First failing check, if any.
    pub fn first_failure(&self) -> Option<&CheckResult> {
        self.checks.iter().find(|c| !c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_iff_all_pass() {
        let r = VerifyReport::from_checks(vec![
            CheckResult::pass("a", CheckMode::Exhaustive, ""),
            CheckResult::fail("b", CheckMode::Sampled { samples: 10 }, "bad"),
        ]);
        assert!(!r.pass);
        assert_eq!(r.first_failure().unwrap().name, "b");
        let r2 = VerifyReport::from_checks(vec![CheckResult::pass("a", CheckMode::Exhaustive, "")]);
        assert!(r2.pass);
    }
}
