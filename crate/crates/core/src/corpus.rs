//! Optimization tasks and prompts.
//!
//! A corpus file holds one JSON record per line:
//!
//! ```json
//! {"id": "t0", "slow_source": "...", "fast_source": "...", "tests": [{"input": "1 2\n", "expected_output": "3"}]}
//! ```
//!
//! `executable` may also appear; it is written after filtering and defaults to `false`.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sandbox::{OutcomeKind, Sandbox};
use crate::{Error, Result};

pub const DEFAULT_INSTRUCTION: &str = "Improve the execution performance of the following program:";

/// One stdin/stdout pair. `expected_output` is required; the empty string is a
/// legitimate expectation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitTest {
    pub input: String,
    pub expected_output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskInstance {
    pub id: String,
    pub slow_source: String,
    pub fast_source: String,
    pub tests: Vec<UnitTest>,
    #[serde(default)]
    pub executable: bool,
}

impl TaskInstance {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.slow_source.is_empty() {
            return Err(format!("task {}: empty slow_source", self.id));
        }
        if self.fast_source.is_empty() {
            return Err(format!("task {}: empty fast_source", self.id));
        }
        if self.tests.is_empty() {
            return Err(format!("task {}: no tests", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub instruction: String,
    pub source: String,
    pub rendered: String,
}

/// `instruction`, a newline, then the slow program.
pub fn build_prompt(task: &TaskInstance, instruction: &str) -> Result<Prompt> {
    if instruction.is_empty() {
        return Err(Error::Contract("instruction must not be empty".into()));
    }
    let rendered = format!("{instruction}\n{}", task.slow_source);
    Ok(Prompt {
        instruction: instruction.to_owned(),
        source: task.slow_source.clone(),
        rendered,
    })
}

/// Parses a corpus from raw bytes. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_tasks(bytes: &[u8]) -> Result<Vec<TaskInstance>> {
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = idx + 1;
        let text = std::str::from_utf8(raw).map_err(|e| Error::Parse {
            line,
            message: format!("invalid UTF-8: {e}"),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let task: TaskInstance = serde_json::from_str(text).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        task.validate().map_err(|message| Error::Parse { line, message })?;
        if !seen.insert(task.id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate task id {:?} at line {line}",
                task.id
            )));
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn load_tasks(path: &Path) -> Result<Vec<TaskInstance>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_tasks(&bytes)
}

pub fn write_tasks(tasks: &[TaskInstance], mut out: impl Write) -> std::io::Result<()> {
    for task in tasks {
        serde_json::to_writer(&mut out, task)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_tasks(tasks: &[TaskInstance], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_tasks(tasks, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Keeps the tasks whose slow program passes all of its tests within `timeout`.
///
/// Correctness only; nothing is timed. Survivors come back in input order with
/// `executable` set.
pub fn filter_executable(
    tasks: &[TaskInstance],
    sandbox: &Sandbox,
    timeout: Duration,
) -> Result<Vec<TaskInstance>> {
    let verdicts: Vec<bool> = tasks
        .par_iter()
        .map(|task| {
            let outcome = sandbox.check_correctness(task.slow_source.as_bytes(), &task.tests, timeout)?;
            Ok(outcome.kind == OutcomeKind::Passed)
        })
        .collect::<Result<_>>()?;
    Ok(tasks
        .iter()
        .zip(verdicts)
        .filter(|(_, ok)| *ok)
        .map(|(task, _)| TaskInstance {
            executable: true,
            ..task.clone()
        })
        .collect())
}
