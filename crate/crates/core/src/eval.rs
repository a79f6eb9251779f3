//! Inference-time evaluation.
//!
//! Per task: beam search with four beams, keep the two best by cumulative
//! log-probability, run both with three timed repeats, and keep only those in
//! the top reward tier. A task is optimized when at least one survives.

use std::fmt;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_prompt, TaskInstance};
use crate::policy::{LanguageModel, Tokenizer};
use crate::reward::{classify, Tier};
use crate::sampling::{beam_search, SamplingConfig};
use crate::sandbox::{OutcomeKind, Sandbox};
use crate::trainer::run::{read_jsonl, write_jsonl};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub beam_width: usize,
    pub keep_top: usize,
    pub repeats: usize,
    pub timeout_secs: f64,
    /// A candidate must be this fraction faster than the input to count.
    pub noise_floor: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            beam_width: 4,
            keep_top: 2,
            repeats: 3,
            timeout_secs: 5.0,
            noise_floor: 0.02,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.keep_top == 0 || self.keep_top > self.beam_width {
            return Err(Error::Config("need 1 <= keep_top <= beam_width".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("eval repeats must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0) || !self.timeout_secs.is_finite() {
            return Err(Error::Config("eval timeout must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.noise_floor) {
            return Err(Error::Config("noise_floor must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// `old / new`.
pub fn speedup(old: f64, new: f64) -> Result<f64> {
    if !(old > 0.0) || !(new > 0.0) {
        return Err(Error::Contract(format!("speedup needs positive runtimes, got ({old}, {new})")));
    }
    Ok(old / new)
}

/// `(old - new) / old * 100`.
pub fn runtime_reduction(old: f64, new: f64) -> Result<f64> {
    if !(old > 0.0) || !(new >= 0.0) {
        return Err(Error::Contract(format!(
            "runtime reduction needs old > 0 and new >= 0, got ({old}, {new})"
        )));
    }
    Ok((old - new) / old * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedCandidate {
    pub program: String,
    pub cumulative_log_prob: f64,
    pub kind: OutcomeKind,
    pub mean_runtime: Option<f64>,
    /// Absent when the input program has no baseline.
    pub tier: Option<Tier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvalResult {
    pub task_id: String,
    pub candidates: Vec<EvaluatedCandidate>,
    pub best_kind: OutcomeKind,
    /// Absent when the input program itself does not pass its tests.
    pub baseline_runtime: Option<f64>,
    pub best_new_runtime: Option<f64>,
    pub optimized: bool,
}

impl TaskEvalResult {
    fn compiled(&self) -> bool {
        self.candidates.iter().any(|c| c.kind != OutcomeKind::SyntaxError)
    }

    fn passed(&self) -> bool {
        self.candidates.iter().any(|c| c.kind == OutcomeKind::Passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_tasks: usize,
    pub n_optimized: usize,
    pub percent_opt: f64,
    /// Mean over optimized tasks; absent when none were optimized.
    pub speedup_mean: Option<f64>,
    pub rtr_mean: Option<f64>,
    pub compilation_rate: f64,
    pub pass_rate: f64,
    pub optimization_rate: f64,
    /// Set when there were no tasks to evaluate.
    pub degenerate: bool,
}

impl MetricsReport {
    /// Pure fold over per-task results.
    pub fn from_results(results: &[TaskEvalResult]) -> Result<Self> {
        let n = results.len();
        let frac = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
        let mut speedups = Vec::new();
        let mut reductions = Vec::new();
        for r in results.iter().filter(|r| r.optimized) {
            let (Some(old), Some(new)) = (r.baseline_runtime, r.best_new_runtime) else {
                return Err(Error::Validation(format!(
                    "task {} optimized without runtimes",
                    r.task_id
                )));
            };
            speedups.push(speedup(old, new)?);
            reductions.push(runtime_reduction(old, new)?);
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let n_optimized = speedups.len();
        Ok(MetricsReport {
            n_tasks: n,
            n_optimized,
            percent_opt: 100.0 * frac(n_optimized),
            speedup_mean: mean(&speedups),
            rtr_mean: mean(&reductions),
            compilation_rate: frac(results.iter().filter(|r| r.compiled()).count()),
            pass_rate: frac(results.iter().filter(|r| r.passed()).count()),
            optimization_rate: frac(n_optimized),
            degenerate: n == 0,
        })
    }

    pub fn rates(&self) -> (f64, f64, f64) {
        (self.compilation_rate, self.pass_rate, self.optimization_rate)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>, prec: usize| match v {
            Some(x) => format!("{x:.prec$}"),
            None => "-".to_owned(),
        };
        writeln!(f, "{:<20} {:>10}", "metric", "value")?;
        writeln!(f, "{:<20} {:>10}", "tasks", self.n_tasks)?;
        writeln!(f, "{:<20} {:>10}", "optimized", self.n_optimized)?;
        writeln!(f, "{:<20} {:>10.2}", "%OPT", self.percent_opt)?;
        writeln!(f, "{:<20} {:>10}", "SP (mean)", opt(self.speedup_mean, 3))?;
        writeln!(f, "{:<20} {:>10}", "RTR (mean, %)", opt(self.rtr_mean, 2))?;
        writeln!(f, "{:<20} {:>10.4}", "compilation rate", self.compilation_rate)?;
        writeln!(f, "{:<20} {:>10.4}", "pass rate", self.pass_rate)?;
        write!(f, "{:<20} {:>10.4}", "optimization rate", self.optimization_rate)?;
        if self.degenerate {
            write!(f, "\n(degenerate: empty test set)")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub results: Vec<TaskEvalResult>,
}

/// Mean runtime of each input program, or `None` when it does not pass.
pub fn measure_baselines(
    tasks: &[TaskInstance],
    sandbox: &Sandbox,
    config: &EvalConfig,
) -> Result<Vec<Option<f64>>> {
    tasks
        .par_iter()
        .map(|t| {
            let out = sandbox.evaluate_program(t.slow_source.as_bytes(), &t.tests, config.timeout(), config.repeats)?;
            Ok(out.mean_runtime.filter(|_| out.passed()))
        })
        .collect()
}

/// Decodes, executes and filters the candidates for one task.
pub fn evaluate_task(
    model: &dyn LanguageModel,
    task: &TaskInstance,
    baseline: Option<f64>,
    sandbox: &Sandbox,
    sampling: &SamplingConfig,
    config: &EvalConfig,
    instruction: &str,
) -> Result<TaskEvalResult> {
    let prompt = Tokenizer.encode_prompt(&build_prompt(task, instruction)?.rendered);
    let beam_config = SamplingConfig {
        beam_width: config.beam_width,
        ..*sampling
    };
    let mut beams = beam_search(model, &prompt, &beam_config)?;
    beams.truncate(config.keep_top);
    let mut candidates = Vec::with_capacity(beams.len());
    for beam in &beams {
        let program = beam.program();
        let outcome = sandbox.evaluate_program(&program, &task.tests, config.timeout(), config.repeats)?;
        let tier = match baseline {
            Some(b) => Some(classify(&outcome, b, config.noise_floor)?),
            None => None,
        };
        candidates.push(EvaluatedCandidate {
            program: String::from_utf8_lossy(&program).into_owned(),
            cumulative_log_prob: beam.cumulative_log_prob,
            kind: outcome.kind,
            mean_runtime: outcome.mean_runtime,
            tier,
        });
    }
    let best_new_runtime = candidates
        .iter()
        .filter(|c| c.tier == Some(Tier::R4))
        .filter_map(|c| c.mean_runtime)
        .min_by(f64::total_cmp);
    let best_kind = candidates
        .iter()
        .map(|c| c.kind)
        .max_by_key(|k| match k {
            OutcomeKind::SyntaxError => 0,
            OutcomeKind::Failed => 1,
            OutcomeKind::Passed => 2,
        })
        .unwrap_or(OutcomeKind::SyntaxError);
    Ok(TaskEvalResult {
        task_id: task.id.clone(),
        candidates,
        best_kind,
        baseline_runtime: baseline,
        best_new_runtime,
        optimized: best_new_runtime.is_some(),
    })
}

/// Evaluates every task against precomputed baselines (one per task).
pub fn evaluate_with_baselines(
    model: &dyn LanguageModel,
    tasks: &[TaskInstance],
    baselines: &[Option<f64>],
    sandbox: &Sandbox,
    sampling: &SamplingConfig,
    config: &EvalConfig,
    instruction: &str,
) -> Result<Evaluation> {
    config.validate()?;
    if baselines.len() != tasks.len() {
        return Err(Error::Contract(format!(
            "{} baselines for {} tasks",
            baselines.len(),
            tasks.len()
        )));
    }
    let results: Vec<TaskEvalResult> = tasks
        .par_iter()
        .zip(baselines)
        .map(|(task, &baseline)| evaluate_task(model, task, baseline, sandbox, sampling, config, instruction))
        .collect::<Result<_>>()?;
    Ok(Evaluation {
        report: MetricsReport::from_results(&results)?,
        results,
    })
}

pub fn evaluate_model(
    model: &dyn LanguageModel,
    tasks: &[TaskInstance],
    sandbox: &Sandbox,
    sampling: &SamplingConfig,
    config: &EvalConfig,
    instruction: &str,
) -> Result<Evaluation> {
    config.validate()?;
    let baselines = measure_baselines(tasks, sandbox, config)?;
    evaluate_with_baselines(model, tasks, &baselines, sandbox, sampling, config, instruction)
}

/// `(compilation, pass, optimization)` rates over decode rounds.
pub fn validation_rates(
    model: &dyn LanguageModel,
    tasks: &[TaskInstance],
    sandbox: &Sandbox,
    sampling: &SamplingConfig,
    config: &EvalConfig,
    instruction: &str,
) -> Result<(f64, f64, f64)> {
    Ok(evaluate_model(model, tasks, sandbox, sampling, config, instruction)?
        .report
        .rates())
}

pub fn write_results(path: &Path, results: &[TaskEvalResult]) -> Result<()> {
    write_jsonl(path, results)
}

pub fn read_results(path: &Path) -> Result<Vec<TaskEvalResult>> {
    read_jsonl(path)
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Validation(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formula_examples() {
        assert_eq!(speedup(2.0, 1.0).unwrap(), 2.0);
        assert_eq!(speedup(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(runtime_reduction(2.0, 1.0).unwrap(), 50.0);
        assert_eq!(runtime_reduction(1.0, 1.0).unwrap(), 0.0);
        assert!(speedup(0.0, 1.0).is_err());
        assert!(speedup(1.0, 0.0).is_err());
        assert!(runtime_reduction(0.0, 1.0).is_err());
        assert_eq!(runtime_reduction(1.0, 0.0).unwrap(), 100.0);
    }

    proptest! {
        #[test]
        fn speedup_composes(o in 1e-3f64..1e3, n in 1e-3f64..1e3, m in 1e-3f64..1e3) {
            let lhs = speedup(o, m).unwrap();
            let rhs = speedup(o, n).unwrap() * speedup(n, m).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }

        #[test]
        fn rtr_identity(o in 1e-3f64..1e3, n in 1e-3f64..1e3) {
            let rtr = runtime_reduction(o, n).unwrap();
            let via_sp = 100.0 * (1.0 - 1.0 / speedup(o, n).unwrap());
            prop_assert!((rtr - via_sp).abs() <= 1e-12 * rtr.abs().max(1.0));
        }

        #[test]
        fn report_rates_are_ordered(kinds in proptest::collection::vec((0u8..3, 0u8..3, any::<bool>()), 0..20)) {
            let results: Vec<TaskEvalResult> = kinds.iter().enumerate().map(|(i, &(a, b, faster))| {
                let mk = |k: u8, idx: usize| {
                    let kind = [OutcomeKind::SyntaxError, OutcomeKind::Failed, OutcomeKind::Passed][k as usize];
                    let fast = faster && idx == 0 && kind == OutcomeKind::Passed;
                    EvaluatedCandidate {
                        program: String::new(),
                        cumulative_log_prob: 0.0,
                        kind,
                        mean_runtime: (kind == OutcomeKind::Passed).then_some(if fast { 0.5 } else { 1.0 }),
                        tier: Some(match kind {
                            OutcomeKind::SyntaxError => Tier::R1,
                            OutcomeKind::Failed => Tier::R2,
                            OutcomeKind::Passed if fast => Tier::R4,
                            OutcomeKind::Passed => Tier::R3,
                        }),
                    }
                };
                let candidates = vec![mk(a, 0), mk(b, 1)];
                let best = candidates.iter().filter(|c| c.tier == Some(Tier::R4)).filter_map(|c| c.mean_runtime).reduce(f64::min);
                TaskEvalResult {
                    task_id: i.to_string(),
                    best_kind: candidates[0].kind,
                    candidates,
                    baseline_runtime: Some(1.0),
                    best_new_runtime: best,
                    optimized: best.is_some(),
                }
            }).collect();
            let r = MetricsReport::from_results(&results).unwrap();
            prop_assert!(r.optimization_rate <= r.pass_rate);
            prop_assert!(r.pass_rate <= r.compilation_rate);
            prop_assert!((r.percent_opt / 100.0 - r.optimization_rate).abs() < 1e-12);
            if r.n_optimized > 0 {
                prop_assert!(r.speedup_mean.unwrap() > 1.0);
                let rtr = r.rtr_mean.unwrap();
                prop_assert!((0.0..100.0).contains(&rtr));
            }
        }
    }

    #[test]
    fn empty_report_is_degenerate() {
        let r = MetricsReport::from_results(&[]).unwrap();
        assert_eq!(r.n_tasks, 0);
        assert!(r.degenerate);
        assert_eq!(r.rates(), (0.0, 0.0, 0.0));
        assert_eq!(r.percent_opt, 0.0);
        assert!(r.to_string().contains("degenerate"));
    }
}
