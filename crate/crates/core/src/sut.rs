//! Programs under test.
//!
//! A [`Sut`] maps an argument tuple to an output [`Value`]. Failures of the
//! program itself are outputs (`Value::Error`); only harness failures such as
//! a failed spawn surface as [`SutError`].

use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::{mpsc, Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::values::{values_equal, Value};

#[derive(Debug, Error)]
pub enum SutError {
    #[error("failed to spawn `{path}`: {source}")]
    Spawn {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o with child process failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("{sut} expects {expected} argument(s), got {got}")]
    Arity {
        sut: String,
        expected: usize,
        got: usize,
    },
    #[error("{0} is not deterministic: the same input produced different outputs")]
    NonDeterministic(String),
    #[error("invalid subprocess spec: {0}")]
    BadSpec(String),
}

/// Declared domain of one input slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SlotDomain {
    Real { lo: f64, hi: f64 },
    Integer { lo: i64, hi: i64 },
    Text,
    Opaque,
}

impl SlotDomain {
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            SlotDomain::Real { lo, hi } => Some((lo, hi)),
            SlotDomain::Integer { lo, hi } => Some((lo as f64, hi as f64)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Concurrency {
    ParallelSafe,
    SerialOnly,
}

pub trait Sut: Send + Sync {
    fn name(&self) -> &str;

    fn domains(&self) -> &[SlotDomain];

    fn concurrency(&self) -> Concurrency {
        Concurrency::ParallelSafe
    }

    /// Runs the program on one argument tuple.
    fn call(&self, args: &[Value]) -> Result<Value, SutError>;

    fn arity(&self) -> usize {
        self.domains().len()
    }
}

impl fmt::Debug for dyn Sut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sut({})", self.name())
    }
}

/// Runs `sut` on an analysis-level input: a scalar for unary programs, a
/// sequence holding the argument tuple otherwise.
pub fn invoke(sut: &dyn Sut, input: &Value) -> Result<Value, SutError> {
    let arity = sut.arity();
    match input {
        Value::Seq(args) if arity != 1 => {
            if args.len() != arity {
                return Err(SutError::Arity {
                    sut: sut.name().to_string(),
                    expected: arity,
                    got: args.len(),
                });
            }
            sut.call(args)
        }
        single if arity == 1 => sut.call(std::slice::from_ref(single)),
        _ => Err(SutError::Arity {
            sut: sut.name().to_string(),
            expected: arity,
            got: 1,
        }),
    }
}

/// Invokes the program twice on `probe`; errors if the outputs differ.
pub fn check_determinism(sut: &dyn Sut, probe: &Value) -> Result<(), SutError> {
    let first = invoke(sut, probe)?;
    let second = invoke(sut, probe)?;
    if values_equal(&first, &second) {
        Ok(())
    } else {
        Err(SutError::NonDeterministic(sut.name().to_string()))
    }
}

/// Builds the analysis-level input from numeric coordinates.
pub fn input_from_coords(domains: &[SlotDomain], coords: &[f64]) -> Value {
    let slot = |d: &SlotDomain, x: f64| match d {
        SlotDomain::Integer { .. } => Value::Integer(x.round() as i64),
        _ => Value::real(x).expect("coordinates are finite"),
    };
    if domains.len() == 1 {
        slot(&domains[0], coords[0])
    } else {
        Value::Seq(
            domains
                .iter()
                .zip(coords)
                .map(|(d, &x)| slot(d, x))
                .collect(),
        )
    }
}

type SutFn = dyn Fn(&[Value]) -> Value + Send + Sync;

/// An in-process program.
pub struct FnSut {
    name: String,
    domains: Vec<SlotDomain>,
    f: Box<SutFn>,
}

impl FnSut {
    pub fn new(
        name: impl Into<String>,
        domains: Vec<SlotDomain>,
        f: impl Fn(&[Value]) -> Value + Send + Sync + 'static,
    ) -> Self {
        FnSut {
            name: name.into(),
            domains,
            f: Box::new(f),
        }
    }
}

impl Sut for FnSut {
    fn name(&self) -> &str {
        &self.name
    }

    fn domains(&self) -> &[SlotDomain] {
        &self.domains
    }

    fn call(&self, args: &[Value]) -> Result<Value, SutError> {
        if args.len() != self.domains.len() {
            return Err(SutError::Arity {
                sut: self.name.clone(),
                expected: self.domains.len(),
                got: args.len(),
            });
        }
        Ok((self.f)(args))
    }
}

// ---------------------------------------------------------------------------
// Constrained sum reference programs
// ---------------------------------------------------------------------------

pub const SUM_DOMAIN: SlotDomain = SlotDomain::Real { lo: -2.0, hi: 8.0 };

fn round_half_up_1dp(x: f64) -> f64 {
    (x * 10.0 + 0.5).floor() / 10.0
}

fn constrained_sum(x: f64, y: f64, limit: f64) -> Value {
    if x < 0.0 || y < 0.0 {
        return Value::error("InvalidInput", "negative input value");
    }
    if x >= 6.0 || y >= 6.0 {
        return Value::error("InvalidInput", "input value >= 6");
    }
    let sum = x + y;
    if sum >= limit {
        return Value::error("InvalidOutput", "sum out of range");
    }
    Value::real(round_half_up_1dp(sum)).expect("finite sum")
}

/// Sum of two non-negative inputs below 6, rejected once the sum reaches 6,
/// rounded half-up to one decimal.
pub fn constrained_sum_one(x: f64, y: f64) -> Value {
    constrained_sum(x, y, 6.0)
}

/// Same as [`constrained_sum_one`] but the sum is only rejected from 7 on.
pub fn constrained_sum_two(x: f64, y: f64) -> Value {
    constrained_sum(x, y, 7.0)
}

fn binary_real(f: fn(f64, f64) -> Value) -> impl Fn(&[Value]) -> Value + Send + Sync {
    move |args| match (args[0].as_f64(), args[1].as_f64()) {
        (Some(x), Some(y)) => f(x, y),
        _ => Value::error("InvalidInput", "non-numeric input"),
    }
}

pub const BUILTIN_NAMES: &[&str] = &["sum1", "sum2", "const"];

/// Looks up an in-process program by name.
pub fn builtin(name: &str) -> Option<Arc<dyn Sut>> {
    let domains = vec![SUM_DOMAIN, SUM_DOMAIN];
    let sut: Arc<dyn Sut> = match name {
        "sum1" => Arc::new(FnSut::new(
            "sum1",
            domains,
            binary_real(constrained_sum_one),
        )),
        "sum2" => Arc::new(FnSut::new(
            "sum2",
            domains,
            binary_real(constrained_sum_two),
        )),
        "const" => Arc::new(FnSut::new("const", domains, |_| Value::Integer(0))),
        _ => return None,
    };
    Some(sut)
}

// ---------------------------------------------------------------------------
// Subprocess adapter
// ---------------------------------------------------------------------------

/// How the child's standard output becomes a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputDecoding {
    /// A finite number becomes `Real`, anything else `Text`.
    #[default]
    Plain,
    /// Standard output holds a canonical value encoding.
    Canonical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubprocessSpec {
    pub executable: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    pub timeout_ms: u64,
    #[serde(default)]
    pub decoding: OutputDecoding,
    pub domains: Vec<SlotDomain>,
    #[serde(default = "default_concurrency")]
    pub concurrency: Concurrency,
    /// Cap on simultaneously running children.
    #[serde(default = "default_max_children")]
    pub max_children: usize,
}

fn default_concurrency() -> Concurrency {
    Concurrency::ParallelSafe
}

fn default_max_children() -> usize {
    8
}

impl SubprocessSpec {
    pub fn new(executable: impl Into<PathBuf>, domains: Vec<SlotDomain>) -> Self {
        SubprocessSpec {
            executable: executable.into(),
            args: Vec::new(),
            timeout_ms: 10_000,
            decoding: OutputDecoding::Plain,
            domains,
            concurrency: Concurrency::ParallelSafe,
            max_children: default_max_children(),
        }
    }

    pub fn validate(&self) -> Result<(), SutError> {
        if self.timeout_ms == 0 {
            return Err(SutError::BadSpec("timeout must be positive".into()));
        }
        if self.max_children == 0 {
            return Err(SutError::BadSpec("max_children must be positive".into()));
        }
        if self.domains.is_empty() {
            return Err(SutError::BadSpec(
                "at least one input slot is required".into(),
            ));
        }
        Ok(())
    }
}

/// The input line written to a child: comma-separated wire renderings plus `\n`.
pub fn encode_input_line(inputs: &[Value]) -> String {
    let mut line = inputs
        .iter()
        .map(Value::wire_string)
        .collect::<Vec<_>>()
        .join(",");
    line.push('\n');
    line
}

fn decode_stdout(raw: &str, decoding: OutputDecoding) -> Value {
    let text = raw.strip_suffix('\n').unwrap_or(raw);
    match decoding {
        OutputDecoding::Plain => match text.parse::<f64>() {
            Ok(x) if x.is_finite() => Value::real(x).expect("finite"),
            _ => Value::text(text),
        },
        OutputDecoding::Canonical => Value::parse_canonical(text)
            .unwrap_or_else(|e| Value::error("DecodeError", format!("{e}: {text}"))),
    }
}

/// Runs one child process for one input tuple.
pub fn run_subprocess(spec: &SubprocessSpec, inputs: &[Value]) -> Result<Value, SutError> {
    let mut cmd = Command::new(&spec.executable);
    cmd.args(&spec.args);
    #[cfg(unix)]
    std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
    let mut child = cmd
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| SutError::Spawn {
            path: spec.executable.display().to_string(),
            source,
        })?;

    let line = encode_input_line(inputs);
    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(line.as_bytes());
    });
    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");
    let out_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stdout.read_to_end(&mut buf);
        buf
    });
    let err_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        buf
    });

    let timeout = Duration::from_millis(spec.timeout_ms);
    let pid = child.id();
    let (tx, rx) = mpsc::channel();
    let waiter = thread::spawn(move || {
        let status = child.wait();
        let _ = tx.send(());
        status
    });
    let timed_out = rx.recv_timeout(timeout).is_err();
    if timed_out {
        #[cfg(unix)]
        unsafe {
            libc::kill(-(pid as libc::pid_t), libc::SIGKILL);
        }
    }
    let status = waiter.join().expect("waiter thread")?;
    let status = (!timed_out).then_some(status);
    let _ = writer.join();
    let out = out_reader.join().unwrap_or_default();
    let err = err_reader.join().unwrap_or_default();

    let Some(status) = status else {
        return Ok(Value::error(
            "Timeout",
            format!("no result within {} ms", spec.timeout_ms),
        ));
    };
    let stderr_text = String::from_utf8_lossy(&err);
    let stderr_text = stderr_text.strip_suffix('\n').unwrap_or(&stderr_text);
    if !status.success() || !err.is_empty() {
        let kind = match status.code() {
            Some(code) => format!("Exit:{code}"),
            None => "Signal".to_string(),
        };
        return Ok(Value::error(kind, stderr_text));
    }
    Ok(decode_stdout(&String::from_utf8_lossy(&out), spec.decoding))
}

/// Counting semaphore bounding concurrent children.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
    }

    fn release(&self) {
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

pub struct SubprocessSut {
    name: String,
    spec: SubprocessSpec,
    slots: Slots,
}

impl SubprocessSut {
    pub fn new(spec: SubprocessSpec) -> Result<Self, SutError> {
        spec.validate()?;
        Ok(SubprocessSut {
            name: format!("exec:{}", spec.executable.display()),
            slots: Slots {
                free: Mutex::new(spec.max_children),
                cv: Condvar::new(),
            },
            spec,
        })
    }

    pub fn spec(&self) -> &SubprocessSpec {
        &self.spec
    }
}

impl Sut for SubprocessSut {
    fn name(&self) -> &str {
        &self.name
    }

    fn domains(&self) -> &[SlotDomain] {
        &self.spec.domains
    }

    fn concurrency(&self) -> Concurrency {
        self.spec.concurrency
    }

    fn call(&self, args: &[Value]) -> Result<Value, SutError> {
        self.slots.acquire();
        let result = run_subprocess(&self.spec, args);
        self.slots.release();
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::time::Instant;

    fn r(x: f64) -> Value {
        Value::real(x).unwrap()
    }

    fn kind(v: &Value) -> &str {
        match v {
            Value::Error { kind, .. } => kind,
            _ => panic!("expected error, got {v}"),
        }
    }

    #[test]
    fn program_one_examples() {
        assert_eq!(constrained_sum_one(2.0, 3.0), r(5.0));
        assert_eq!(kind(&constrained_sum_one(-1.0, 2.0)), "InvalidInput");
        assert_eq!(kind(&constrained_sum_one(3.0, 3.0)), "InvalidOutput");
        assert_eq!(constrained_sum_one(1.23, 1.0), r(2.2));
        assert_eq!(kind(&constrained_sum_one(6.0, -1.0)), "InvalidInput");
        assert_eq!(kind(&constrained_sum_one(6.0, 0.0)), "InvalidInput");
        // half-up
        assert_eq!(constrained_sum_one(0.25, 0.0), r(0.3));
        assert_eq!(constrained_sum_one(2.9, 2.9), r(5.8));
    }

    #[test]
    fn program_two_examples() {
        assert_eq!(constrained_sum_two(3.0, 3.5), r(6.5));
        assert_eq!(kind(&constrained_sum_one(3.0, 3.5)), "InvalidOutput");
        assert_eq!(kind(&constrained_sum_two(3.5, 3.5)), "InvalidOutput");
        assert_eq!(kind(&constrained_sum_two(-0.5, 1.0)), "InvalidInput");
    }

    #[test]
    fn disagreement_region_on_fine_grid() {
        // Steps of 1/64 are exact in binary, so the sum comparisons are exact.
        for i in 0..=640 {
            for j in 0..=640 {
                let x = -2.0 + i as f64 / 64.0;
                let y = -2.0 + j as f64 / 64.0;
                let one = constrained_sum_one(x, y);
                let two = constrained_sum_two(x, y);
                let in_band = (0.0..6.0).contains(&x)
                    && (0.0..6.0).contains(&y)
                    && (6.0..7.0).contains(&(x + y));
                assert_eq!(!values_equal(&one, &two), in_band, "({x}, {y})");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn programs_agree_where_both_are_real(x in -2.0f64..8.0, y in -2.0f64..8.0) {
            let one = constrained_sum_one(x, y);
            let two = constrained_sum_two(x, y);
            if !one.is_error() && !two.is_error() {
                prop_assert!(values_equal(&one, &two));
            }
            if !values_equal(&one, &two) {
                prop_assert!(one.is_error() != two.is_error());
            }
        }
    }

    #[test]
    fn invoke_unpacks_tuples() {
        let sut = builtin("sum1").unwrap();
        let out = invoke(sut.as_ref(), &Value::reals(&[2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(out, r(5.0));
        assert!(matches!(
            invoke(sut.as_ref(), &r(1.0)),
            Err(SutError::Arity {
                expected: 2,
                got: 1,
                ..
            })
        ));
        assert!(builtin("nope").is_none());
        check_determinism(sut.as_ref(), &Value::reals(&[1.0, 1.0]).unwrap()).unwrap();
    }

    #[test]
    fn nondeterminism_detected() {
        use std::sync::atomic::{AtomicI64, Ordering};
        let n = AtomicI64::new(0);
        let sut = FnSut::new("counter", vec![SUM_DOMAIN], move |_| {
            Value::Integer(n.fetch_add(1, Ordering::SeqCst))
        });
        assert!(matches!(
            check_determinism(&sut, &r(0.0)),
            Err(SutError::NonDeterministic(_))
        ));
    }

    #[test]
    fn input_line_format() {
        assert_eq!(encode_input_line(&[r(2.9), r(3.0)]), "2.9,3\n");
        assert_eq!(encode_input_line(&[Value::Integer(5)]), "5\n");
        let v = input_from_coords(&[SlotDomain::Integer { lo: 0, hi: 9 }], &[2.6]);
        assert_eq!(v, Value::Integer(3));
    }

    #[test]
    fn stdout_decoding() {
        assert_eq!(decode_stdout("5\n", OutputDecoding::Plain), r(5.0));
        assert_eq!(
            decode_stdout("abc\n\n", OutputDecoding::Plain),
            Value::text("abc\n")
        );
        assert_eq!(
            decode_stdout("inf", OutputDecoding::Plain),
            Value::text("inf")
        );
        assert_eq!(
            decode_stdout("E(\"A\",\"b\")\n", OutputDecoding::Canonical),
            Value::error("A", "b")
        );
        assert_eq!(
            kind(&decode_stdout("??", OutputDecoding::Canonical)),
            "DecodeError"
        );
    }

    fn sh(script: &str) -> SubprocessSpec {
        let mut spec = SubprocessSpec::new("/bin/sh", vec![SUM_DOMAIN]);
        spec.args = vec!["-c".into(), script.into()];
        spec.timeout_ms = 2_000;
        spec
    }

    #[test]
    fn echo_program() {
        let spec = sh("cat");
        assert_eq!(run_subprocess(&spec, &[Value::Integer(5)]).unwrap(), r(5.0));
        let spec2 = SubprocessSpec {
            domains: vec![SUM_DOMAIN, SUM_DOMAIN],
            ..sh("cat")
        };
        assert_eq!(
            run_subprocess(&spec2, &[r(1.5), r(2.0)]).unwrap(),
            Value::text("1.5,2")
        );
    }

    #[test]
    fn failing_program() {
        let spec = sh("echo bad >&2; exit 1");
        assert_eq!(
            run_subprocess(&spec, &[r(1.0)]).unwrap(),
            Value::error("Exit:1", "bad")
        );
        // stderr alone is enough
        let spec = sh("echo 1; echo warn >&2");
        assert_eq!(
            run_subprocess(&spec, &[r(1.0)]).unwrap(),
            Value::error("Exit:0", "warn")
        );
    }

    #[test]
    fn slow_program_times_out() {
        let mut spec = sh("sleep 5");
        spec.timeout_ms = 100;
        let start = Instant::now();
        let out = run_subprocess(&spec, &[r(1.0)]).unwrap();
        assert_eq!(kind(&out), "Timeout");
        assert!(start.elapsed() < Duration::from_secs(4));
    }

    #[test]
    fn spawn_failure_is_a_harness_error() {
        let spec = SubprocessSpec::new("/definitely/not/here", vec![SUM_DOMAIN]);
        assert!(matches!(
            run_subprocess(&spec, &[r(1.0)]),
            Err(SutError::Spawn { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        let mut spec = sh("cat");
        spec.timeout_ms = 0;
        assert!(SubprocessSut::new(spec).is_err());
    }
}
