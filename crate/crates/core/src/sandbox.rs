//! Child-process execution of candidate programs against unit tests.
//!
//! Each run gets a fresh temporary working directory and its own process
//! group, so a misbehaving program can be killed with all of its children and
//! cannot leave files behind for the next run. Timed repetitions hold
//! [`TIMING_LOCK`] exclusively, so no other run from this process overlaps
//! with a measurement; untimed runs share it.

use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, ExitStatus, Stdio};
use std::sync::RwLock;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::corpus::UnitTest;
use crate::{Error, Result};

pub const INTERPRETER_ENV: &str = "PERFRL_INTERPRETER";
pub const DEFAULT_INTERPRETER: &str = "python3 -I";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);
pub const GRACE: Duration = Duration::from_millis(500);

/// Captured output beyond this many bytes per stream is drained and dropped.
const OUTPUT_CAP: usize = 8 << 20;
const SYNTAX_CHECK_LIMIT: Duration = Duration::from_secs(30);
const SCRIPT_NAME: &str = "main.py";
const CHECK_SCRIPT: &str =
    "import sys\nsrc = open(sys.argv[1], 'rb').read()\ncompile(src, sys.argv[1], 'exec', dont_inherit=True)\n";

/// Written for the whole timed phase of an evaluation, read by every other run.
pub static TIMING_LOCK: RwLock<()> = RwLock::new(());

/// Interpreter command line; the program path is appended as the last argument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interpreter {
    pub program: String,
    pub args: Vec<String>,
}

impl Interpreter {
    pub fn parse(command_line: &str) -> Result<Self> {
        let mut parts = command_line.split_whitespace().map(str::to_owned);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("interpreter command is empty".into()))?;
        Ok(Interpreter {
            program,
            args: parts.collect(),
        })
    }

    /// `PERFRL_INTERPRETER` if set, else [`DEFAULT_INTERPRETER`].
    pub fn from_env() -> Result<Self> {
        match std::env::var(INTERPRETER_ENV) {
            Ok(cmd) => Self::parse(&cmd),
            Err(_) => Self::parse(DEFAULT_INTERPRETER),
        }
    }

    pub fn command_line(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl Default for Interpreter {
    fn default() -> Self {
        Self::parse(DEFAULT_INTERPRETER).expect("default interpreter parses")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Ok,
    RuntimeError,
    Timeout,
    WrongOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub status: CaseStatus,
    pub stdout: String,
    /// Kept for diagnostics only.
    pub stderr: String,
    /// Wall-clock seconds from spawn to exit, interpreter start-up included.
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyntaxCheck {
    Pass,
    SyntaxError(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    SyntaxError,
    Failed,
    Passed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub kind: OutcomeKind,
    /// Mean over timed repeats of the summed per-test runtime. Present iff passed.
    pub mean_runtime: Option<f64>,
    pub case_results: Vec<CaseResult>,
    /// Interpreter message for syntax errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl ExecutionOutcome {
    fn syntax_error(message: String) -> Self {
        ExecutionOutcome {
            kind: OutcomeKind::SyntaxError,
            mean_runtime: None,
            case_results: Vec::new(),
            message: Some(message),
        }
    }

    fn failed(case_results: Vec<CaseResult>) -> Self {
        ExecutionOutcome {
            kind: OutcomeKind::Failed,
            mean_runtime: None,
            case_results,
            message: None,
        }
    }

    pub fn compiled(&self) -> bool {
        self.kind != OutcomeKind::SyntaxError
    }

    pub fn passed(&self) -> bool {
        self.kind == OutcomeKind::Passed
    }
}

/// Strips trailing whitespace from every line, then trailing blank lines.
pub fn normalize_output(text: &str) -> String {
    let mut lines: Vec<&str> = text.split('\n').map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

pub fn outputs_match(actual: &str, expected: &str) -> bool {
    normalize_output(actual) == normalize_output(expected)
}

struct RawRun {
    status: Option<ExitStatus>,
    stdout: Vec<u8>,
    stderr: Vec<u8>,
    elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct Sandbox {
    interpreter: Interpreter,
}

impl Sandbox {
    pub fn new(interpreter: Interpreter) -> Self {
        Sandbox { interpreter }
    }

    pub fn interpreter(&self) -> &Interpreter {
        &self.interpreter
    }

    /// Asks the interpreter to compile `source` without running it.
    pub fn check_syntax(&self, source: &[u8]) -> Result<SyntaxCheck> {
        let _shared = TIMING_LOCK.read().unwrap_or_else(|p| p.into_inner());
        let dir = scratch_dir()?;
        let script = write_script(dir.path(), source)?;
        let args = ["-c", CHECK_SCRIPT, script.to_str().unwrap_or(SCRIPT_NAME)];
        let run = self.spawn(dir.path(), &args, b"", SYNTAX_CHECK_LIMIT)?;
        match run.status {
            None => Err(Error::Environment(format!(
                "syntax check did not finish within {SYNTAX_CHECK_LIMIT:?}"
            ))),
            Some(status) if status.success() => Ok(SyntaxCheck::Pass),
            Some(_) => {
                let stderr = String::from_utf8_lossy(&run.stderr);
                Ok(SyntaxCheck::SyntaxError(last_line(&stderr)))
            }
        }
    }

    /// Runs `source` once with `test.input` on stdin. Program misbehaviour is
    /// reported in the returned status, never as an error.
    pub fn run_case(&self, source: &[u8], test: &UnitTest, timeout: Duration) -> Result<CaseResult> {
        let _shared = TIMING_LOCK.read().unwrap_or_else(|p| p.into_inner());
        self.run_case_unlocked(source, test, timeout)
    }

    fn run_case_unlocked(&self, source: &[u8], test: &UnitTest, timeout: Duration) -> Result<CaseResult> {
        if timeout.is_zero() {
            return Err(Error::Contract("timeout must be positive".into()));
        }
        let dir = scratch_dir()?;
        let script = write_script(dir.path(), source)?;
        let args = [script.to_str().unwrap_or(SCRIPT_NAME)];
        let run = self.spawn(dir.path(), &args, test.input.as_bytes(), timeout)?;
        let stdout = String::from_utf8_lossy(&run.stdout).into_owned();
        let stderr = String::from_utf8_lossy(&run.stderr).into_owned();
        let status = match run.status {
            None => CaseStatus::Timeout,
            Some(s) if !s.success() => CaseStatus::RuntimeError,
            Some(_) if outputs_match(&stdout, &test.expected_output) => CaseStatus::Ok,
            Some(_) => CaseStatus::WrongOutput,
        };
        Ok(CaseResult {
            status,
            stdout,
            stderr,
            elapsed: run.elapsed.as_secs_f64(),
        })
    }

    /// Syntax check plus one untimed pass over the tests, stopping at the
    /// first failing case. A passing outcome carries the summed runtime of
    /// that single pass.
    pub fn check_correctness(
        &self,
        source: &[u8],
        tests: &[UnitTest],
        timeout: Duration,
    ) -> Result<ExecutionOutcome> {
        if tests.is_empty() {
            return Err(Error::Contract("no unit tests to run".into()));
        }
        if let SyntaxCheck::SyntaxError(message) = self.check_syntax(source)? {
            return Ok(ExecutionOutcome::syntax_error(message));
        }
        let mut cases = Vec::with_capacity(tests.len());
        for test in tests {
            let case = self.run_case(source, test, timeout)?;
            let ok = case.status == CaseStatus::Ok;
            cases.push(case);
            if !ok {
                return Ok(ExecutionOutcome::failed(cases));
            }
        }
        let total: f64 = cases.iter().map(|c| c.elapsed).sum();
        Ok(ExecutionOutcome {
            kind: OutcomeKind::Passed,
            mean_runtime: Some(total.max(f64::MIN_POSITIVE)),
            case_results: cases,
            message: None,
        })
    }

    /// Full classification: syntax, one correctness pass, then `repeats` timed
    /// passes over the whole suite. `mean_runtime` is the mean over repeats of
    /// the per-pass total.
    pub fn evaluate_program(
        &self,
        source: &[u8],
        tests: &[UnitTest],
        timeout: Duration,
        repeats: usize,
    ) -> Result<ExecutionOutcome> {
        if repeats == 0 {
            return Err(Error::Contract("repeats must be at least 1".into()));
        }
        let mut outcome = self.check_correctness(source, tests, timeout)?;
        if outcome.kind != OutcomeKind::Passed {
            return Ok(outcome);
        }
        let _exclusive = TIMING_LOCK.write().unwrap_or_else(|p| p.into_inner());
        let mut totals = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let mut total = 0.0;
            for test in tests {
                let case = self.run_case_unlocked(source, test, timeout)?;
                if case.status != CaseStatus::Ok {
                    // deterministic programs never get here; a flaky one is a failure
                    outcome.case_results.push(case);
                    return Ok(ExecutionOutcome::failed(outcome.case_results));
                }
                total += case.elapsed;
            }
            totals.push(total);
        }
        let mean = totals.iter().sum::<f64>() / totals.len() as f64;
        outcome.mean_runtime = Some(mean.max(f64::MIN_POSITIVE));
        Ok(outcome)
    }

    fn spawn(&self, dir: &Path, args: &[&str], stdin: &[u8], timeout: Duration) -> Result<RawRun> {
        let mut cmd = Command::new(&self.interpreter.program);
        cmd.args(&self.interpreter.args)
            .args(args)
            .current_dir(dir)
            .env_clear()
            .env("PATH", std::env::var_os("PATH").unwrap_or_default())
            .env("HOME", dir)
            .env("LANG", "C.UTF-8")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONHASHSEED", "0")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);

        let start = Instant::now();
        let mut child = cmd.spawn().map_err(|e| {
            Error::Environment(format!(
                "cannot start interpreter `{}`: {e}",
                self.interpreter.command_line()
            ))
        })?;
        let pid = child.id() as libc::pid_t;

        let mut child_stdin = child.stdin.take().expect("stdin piped");
        let input = stdin.to_vec();
        let writer = thread::spawn(move || {
            // the program may exit without reading; a broken pipe is fine
            let _ = child_stdin.write_all(&input);
        });
        let out_reader = capped_reader(child.stdout.take().expect("stdout piped"));
        let err_reader = capped_reader(child.stderr.take().expect("stderr piped"));

        let waited = child.wait_timeout(timeout);
        let status = match waited {
            Ok(Some(status)) => Some(status),
            Ok(None) => None,
            Err(e) => {
                kill_group(pid);
                let _ = child.wait();
                return Err(Error::Environment(format!("waiting on child: {e}")));
            }
        };
        let elapsed = start.elapsed();
        kill_group(pid);
        if status.is_none() {
            let _ = child.wait();
        }
        let _ = writer.join();
        let stdout = out_reader.join().unwrap_or_default();
        let stderr = err_reader.join().unwrap_or_default();
        Ok(RawRun {
            status,
            stdout,
            stderr,
            elapsed,
        })
    }
}

impl Default for Sandbox {
    fn default() -> Self {
        Sandbox::new(Interpreter::default())
    }
}

fn kill_group(pid: libc::pid_t) {
    // SAFETY: plain syscall; the group was created for this child alone.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
}

fn capped_reader(mut stream: impl Read + Send + 'static) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match stream.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = OUTPUT_CAP.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        kept
    })
}

fn scratch_dir() -> Result<tempfile::TempDir> {
    tempfile::Builder::new()
        .prefix("perfrl-run-")
        .tempdir()
        .map_err(|e| Error::Environment(format!("cannot create scratch directory: {e}")))
}

fn write_script(dir: &Path, source: &[u8]) -> Result<std::path::PathBuf> {
    let path = dir.join(SCRIPT_NAME);
    std::fs::write(&path, source).map_err(|e| Error::Environment(format!("cannot write program: {e}")))?;
    Ok(path)
}

fn last_line(text: &str) -> String {
    text.lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("syntax error")
        .trim()
        .to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(input: &str, expected: &str) -> UnitTest {
        UnitTest {
            input: input.into(),
            expected_output: expected.into(),
        }
    }

    const SECOND: Duration = Duration::from_secs(1);

    #[test]
    fn normalization_rule() {
        assert_eq!(normalize_output("a  \nb\t\r\n\n\n"), "a\nb");
        assert!(outputs_match("7\n", "7"));
        assert!(!outputs_match("7 8", "7\n8"));
        assert!(!outputs_match("\n7", "7"));
        assert!(outputs_match("", "\n\n"));
    }

    #[test]
    fn syntax_checks() {
        let sb = Sandbox::default();
        assert_eq!(sb.check_syntax(b"print(1)").unwrap(), SyntaxCheck::Pass);
        assert!(matches!(sb.check_syntax(b"def f(:").unwrap(), SyntaxCheck::SyntaxError(_)));
        // compiling must not execute
        assert_eq!(sb.check_syntax(b"raise SystemExit(3)").unwrap(), SyntaxCheck::Pass);
        assert!(matches!(sb.check_syntax(b"\xff\xfe(").unwrap(), SyntaxCheck::SyntaxError(_)));
    }

    #[test]
    fn long_file_with_error_on_last_line_matches_interpreter() {
        let mut src = String::new();
        for i in 0..999 {
            src.push_str(&format!("x{i} = {i}\n"));
        }
        src.push_str("if x1 ==:\n");
        let sb = Sandbox::default();
        assert!(matches!(sb.check_syntax(src.as_bytes()).unwrap(), SyntaxCheck::SyntaxError(_)));
        // oracle: the interpreter's own py_compile
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.py");
        std::fs::write(&path, &src).unwrap();
        let status = Command::new("python3")
            .args(["-m", "py_compile"])
            .arg(&path)
            .stderr(Stdio::null())
            .status()
            .unwrap();
        assert!(!status.success());
    }

    #[test]
    fn missing_interpreter_is_environment_error() {
        let sb = Sandbox::new(Interpreter::parse("/nonexistent/python9").unwrap());
        assert!(matches!(sb.check_syntax(b"print(1)"), Err(Error::Environment(_))));
        assert!(matches!(sb.run_case(b"print(1)", &t("", "1"), SECOND), Err(Error::Environment(_))));
    }

    #[test]
    fn case_statuses() {
        let sb = Sandbox::default();
        let echo = b"print(input())";
        assert_eq!(sb.run_case(echo, &t("7\n", "7"), SECOND).unwrap().status, CaseStatus::Ok);
        assert_eq!(sb.run_case(echo, &t("7\n", "8"), SECOND).unwrap().status, CaseStatus::WrongOutput);
        assert_eq!(sb.run_case(b"print(1/0)", &t("", "1"), SECOND).unwrap().status, CaseStatus::RuntimeError);
    }

    #[test]
    fn busy_loop_times_out_and_is_killed() {
        let sb = Sandbox::default();
        let start = Instant::now();
        let r = sb.run_case(b"while True:\n    pass\n", &t("", ""), SECOND).unwrap();
        assert_eq!(r.status, CaseStatus::Timeout);
        assert!(r.elapsed >= 1.0);
        assert!(start.elapsed() < SECOND + GRACE);
    }

    #[test]
    fn child_processes_die_with_the_run() {
        let sb = Sandbox::default();
        let src = b"import subprocess, sys\nsubprocess.Popen([sys.executable, '-c', 'import time; time.sleep(30)'])\nwhile True: pass\n";
        let start = Instant::now();
        let r = sb.run_case(src, &t("", ""), SECOND).unwrap();
        assert_eq!(r.status, CaseStatus::Timeout);
        assert!(start.elapsed() < SECOND + GRACE);
    }

    #[test]
    fn evaluate_outcomes() {
        let sb = Sandbox::default();
        let out = sb.evaluate_program(b"def f(:", &[t("", "")], SECOND, 3).unwrap();
        assert_eq!(out.kind, OutcomeKind::SyntaxError);
        assert!(out.case_results.is_empty());
        assert!(out.mean_runtime.is_none());

        let tests = [t("1\n", "1"), t("2\n", "3"), t("3\n", "3")];
        let out = sb.evaluate_program(b"print(input())", &tests, SECOND, 3).unwrap();
        assert_eq!(out.kind, OutcomeKind::Failed);
        assert_eq!(out.case_results.last().unwrap().status, CaseStatus::WrongOutput);
        assert_eq!(out.case_results.len(), 2);

        let out = sb.evaluate_program(b"print(int(input())*2)", &[t("2", "4"), t("5", "10")], SECOND, 2).unwrap();
        assert_eq!(out.kind, OutcomeKind::Passed);
        assert!(out.mean_runtime.unwrap() > 0.0);
        assert!(out.case_results.iter().all(|c| c.status == CaseStatus::Ok));
    }

    #[test]
    fn runs_do_not_see_each_others_files() {
        let sb = Sandbox::default();
        let writer = b"open('marker.txt','w').write('x')\nprint('wrote')";
        assert_eq!(sb.run_case(writer, &t("", "wrote"), SECOND).unwrap().status, CaseStatus::Ok);
        let reader = b"import os\nprint('polluted' if os.path.exists('marker.txt') else 'clean')";
        assert_eq!(sb.run_case(reader, &t("", "clean"), SECOND).unwrap().status, CaseStatus::Ok);
    }

    #[test]
    fn evaluation_respects_timeout_bound() {
        let sb = Sandbox::default();
        let tests = [t("", ""), t("", "")];
        let timeout = SECOND;
        let repeats = 1;
        let start = Instant::now();
        let out = sb.evaluate_program(b"while True: pass", &tests, timeout, repeats).unwrap();
        assert_eq!(out.kind, OutcomeKind::Failed);
        let bound = (repeats + 1) as f64 * tests.len() as f64 * (timeout + GRACE).as_secs_f64();
        assert!(start.elapsed().as_secs_f64() <= bound);
    }

    #[test]
    fn classification_is_deterministic() {
        let sb = Sandbox::default();
        let tests = [t("4", "16")];
        for src in [&b"print(int(input())**2)"[..], b"print(int(input())**3)", b"x=", b"import sys; sys.exit(2)"] {
            let first = sb.evaluate_program(src, &tests, SECOND, 1).unwrap().kind;
            for _ in 0..2 {
                assert_eq!(sb.evaluate_program(src, &tests, SECOND, 1).unwrap().kind, first);
            }
        }
    }
}
