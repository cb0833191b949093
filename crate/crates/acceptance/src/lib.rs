//! Result bookkeeping for the `acceptance` test target.
//!
//! Each criterion runs to completion and reports `Ok(detail)` or
//! `Err(detail)`; a panic inside a criterion counts as a failure. The
//! target prints one line per criterion and exits non-zero if any failed.

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

pub type Verdict = Result<String, String>;

#[derive(Debug)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "{} {} ({:.1}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            self.detail
        )
    }
}

pub fn run(name: &'static str, check: impl FnOnce() -> Verdict) -> Outcome {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(check));
    let seconds = start.elapsed().as_secs_f64();
    let (passed, detail) = match result {
        Ok(Ok(detail)) => (true, detail),
        Ok(Err(detail)) => (false, detail),
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            (false, format!("panicked: {msg}"))
        }
    };
    let outcome = Outcome {
        name,
        passed,
        detail,
        seconds,
    };
    println!("{}", outcome.line());
    outcome
}

/// `Ok(detail)` when `ok`, else `Err(detail)`.
pub fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}
