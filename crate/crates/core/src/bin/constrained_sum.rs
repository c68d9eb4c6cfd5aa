//! The constrained sum programs as a standalone executable.
//!
//! Usage: `constrained-sum one|two`. Reads `x,y` lines from standard input and
//! writes each output in canonical form, one per line.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use bva::sut::{constrained_sum_one, constrained_sum_two};
use bva::values::Value;

fn main() -> ExitCode {
    let program: fn(f64, f64) -> Value = match std::env::args().nth(1).as_deref() {
        Some("one") => constrained_sum_one,
        Some("two") => constrained_sum_two,
        _ => {
            eprintln!("usage: constrained-sum one|two");
            return ExitCode::from(1);
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for line in io::stdin().lock().lines() {
        let Ok(line) = line else {
            return ExitCode::from(1);
        };
        let parsed: Option<Vec<f64>> = line.split(',').map(|t| t.trim().parse().ok()).collect();
        let value = match parsed.as_deref() {
            Some(&[x, y]) => program(x, y),
            _ => Value::error("BadInput", format!("expected x,y but got {line:?}")),
        };
        if writeln!(out, "{}", value.canonical_string()).is_err() {
            return ExitCode::from(1);
        }
    }
    ExitCode::SUCCESS
}
