//! Supervised fine-tuning and the execution-feedback ranking loop.

mod loss;
pub mod run;

pub use loss::{
    combined_loss, rank_loss, rank_loss_values, score, select_best, select_best_index, tuning_loss,
    CrossEntropyObjective, RankingObjective,
};
pub use run::{BaselineRecord, RunDir};

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_prompt, TaskInstance};
use crate::policy::{loss_and_gradient, Optimizer, OptimizerKind, PolicyParams, TokenId, Tokenizer};
use crate::reward::{classify, RewardConfig, Tier};
use crate::sampling::{assemble_training_candidates, Candidate, Origin, SamplingConfig};
use crate::sandbox::{OutcomeKind, Sandbox};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub ft_learning_rate: f64,
    pub ft_batch_size: usize,
    pub rl_learning_rate: f64,
    pub rl_steps: usize,
    pub epochs_per_step: usize,
    /// Weight of the rank term in the combined loss.
    pub rank_weight: f64,
    pub optimizer: OptimizerKind,
    pub timeout_secs: f64,
    /// Timed repetitions per candidate during training.
    pub train_repeats: usize,
    /// Fractional runtime improvement needed for the top tier during training.
    pub improvement_margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ft_learning_rate: 5e-5,
            ft_batch_size: 32,
            rl_learning_rate: 2e-5,
            rl_steps: 8,
            epochs_per_step: 3,
            rank_weight: 1.0,
            optimizer: OptimizerKind::Sgd,
            timeout_secs: 5.0,
            train_repeats: 1,
            improvement_margin: 0.02,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.ft_learning_rate) || !positive(self.rl_learning_rate) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.ft_batch_size == 0 || self.epochs_per_step == 0 || self.train_repeats == 0 {
            return Err(Error::Config(
                "ft_batch_size, epochs_per_step and train_repeats must be at least 1".into(),
            ));
        }
        if !(self.rank_weight >= 0.0) || !self.rank_weight.is_finite() {
            return Err(Error::Config("rank_weight must be non-negative".into()));
        }
        if !positive(self.timeout_secs) {
            return Err(Error::Config("timeout_secs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.improvement_margin) {
            return Err(Error::Config("improvement_margin must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub mean_loss: f64,
    pub compilation_rate: f64,
    pub pass_rate: f64,
    pub optimization_rate: f64,
    pub n_candidates: usize,
    pub wall_time_secs: f64,
}

/// One generated candidate, as written to the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub step: usize,
    pub task_id: String,
    pub origin: Origin,
    pub tier: Tier,
    pub runtime: Option<f64>,
}

/// A training task with its cached measurements.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub task: TaskInstance,
    pub prompt: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub baseline: BaselineRecord,
}

/// Shared, read-only context for training.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub sampling: SamplingConfig,
    pub reward: RewardConfig,
    pub instruction: String,
    pub sandbox: &'a Sandbox,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainConfig,
        sampling: SamplingConfig,
        reward: RewardConfig,
        instruction: impl Into<String>,
        sandbox: &'a Sandbox,
    ) -> Result<Self> {
        config.validate()?;
        reward.validate()?;
        Ok(Trainer {
            config,
            sampling,
            reward,
            instruction: instruction.into(),
            sandbox,
        })
    }

    pub fn prompt_tokens(&self, task: &TaskInstance) -> Result<Vec<TokenId>> {
        Ok(Tokenizer.encode_prompt(&build_prompt(task, &self.instruction)?.rendered))
    }

    /// One pass over `tasks` in order, one update per batch of
    /// `ft_batch_size` (prompt, fast program) pairs. Returns the batch losses.
    pub fn fine_tune(
        &self,
        params: &mut PolicyParams,
        optimizer: &mut Optimizer,
        tasks: &[TaskInstance],
    ) -> Result<Vec<f64>> {
        let pairs: Vec<(Vec<TokenId>, Vec<TokenId>)> = tasks
            .iter()
            .map(|t| {
                Ok((
                    self.prompt_tokens(t)?,
                    Tokenizer.encode_target(t.fast_source.as_bytes()),
                ))
            })
            .collect::<Result<_>>()?;
        let mut losses = Vec::new();
        for batch in pairs.chunks(self.config.ft_batch_size) {
            let objective = CrossEntropyObjective {
                pairs: batch.iter().map(|(p, o)| (p.as_slice(), o.as_slice())).collect(),
            };
            let (loss, grad) = loss_and_gradient(params, &objective)?;
            optimizer.apply_update(params.values_mut(), &grad, self.config.ft_learning_rate)?;
            losses.push(loss);
        }
        Ok(losses)
    }

    /// Measures each slow program (correctness, then timed repeats) and the
    /// reference fast program once. Tasks whose slow program does not pass
    /// are dropped, which is the executability filter.
    pub fn prepare(&self, tasks: &[TaskInstance]) -> Result<Vec<PreparedTask>> {
        let timeout = self.config.timeout();
        let repeats = self.config.train_repeats;
        let measured: Vec<Option<PreparedTask>> = tasks
            .par_iter()
            .map(|task| {
                let slow = self
                    .sandbox
                    .evaluate_program(task.slow_source.as_bytes(), &task.tests, timeout, repeats)?;
                let Some(baseline_runtime) = slow.mean_runtime.filter(|_| slow.passed()) else {
                    return Ok(None);
                };
                let fast = self
                    .sandbox
                    .evaluate_program(task.fast_source.as_bytes(), &task.tests, timeout, repeats)?;
                let target_tier = classify(&fast, baseline_runtime, self.config.improvement_margin)?;
                Ok(Some(PreparedTask {
                    prompt: self.prompt_tokens(task)?,
                    target: Tokenizer.encode_target(task.fast_source.as_bytes()),
                    task: TaskInstance {
                        executable: true,
                        ..task.clone()
                    },
                    baseline: BaselineRecord {
                        task_id: task.id.clone(),
                        baseline_runtime,
                        target_kind: fast.kind,
                        target_runtime: fast.mean_runtime,
                        target_tier,
                    },
                }))
            })
            .collect::<Result<_>>()?;
        Ok(measured.into_iter().flatten().collect())
    }

    /// Rebuilds prepared tasks from persisted baselines (resume path).
    pub fn restore(&self, tasks: &[TaskInstance], baselines: &[BaselineRecord]) -> Result<Vec<PreparedTask>> {
        baselines
            .iter()
            .map(|b| {
                let task = tasks.iter().find(|t| t.id == b.task_id).ok_or_else(|| {
                    Error::Validation(format!("baseline for unknown task {:?}", b.task_id))
                })?;
                Ok(PreparedTask {
                    prompt: self.prompt_tokens(task)?,
                    target: Tokenizer.encode_target(task.fast_source.as_bytes()),
                    task: TaskInstance {
                        executable: true,
                        ..task.clone()
                    },
                    baseline: b.clone(),
                })
            })
            .collect()
    }

    /// Decodes the four candidates for every task and executes the three
    /// generated ones. The target's reward comes from the cache.
    pub fn generate_and_reward(
        &self,
        params: &PolicyParams,
        tasks: &[PreparedTask],
        step: usize,
    ) -> Result<Vec<Vec<Candidate>>> {
        let timeout = self.config.timeout();
        tasks
            .par_iter()
            .map(|pt| {
                let mut candidates =
                    assemble_training_candidates(params, &pt.task, &pt.prompt, &self.sampling, step as u64)?;
                for cand in &mut candidates {
                    let tier = if cand.origin == Origin::Target {
                        pt.baseline.target_tier
                    } else {
                        let outcome = self.sandbox.evaluate_program(
                            &cand.program(),
                            &pt.task.tests,
                            timeout,
                            self.config.train_repeats,
                        )?;
                        let tier = classify(&outcome, pt.baseline.baseline_runtime, self.config.improvement_margin)?;
                        cand.outcome = Some(outcome);
                        tier
                    };
                    cand.reward = Some(self.reward.tier(tier));
                }
                Ok(candidates)
            })
            .collect()
    }

    /// `epochs_per_step` passes over the cached candidate groups, one update
    /// per task in task order. Returns the mean loss over all updates.
    pub fn optimize_groups(
        &self,
        params: &mut PolicyParams,
        optimizer: &mut Optimizer,
        tasks: &[PreparedTask],
        groups: &[Vec<Candidate>],
    ) -> Result<f64> {
        let mut total = 0.0;
        let mut updates = 0usize;
        for _ in 0..self.config.epochs_per_step {
            for (pt, group) in tasks.iter().zip(groups) {
                let objective = RankingObjective::new(&pt.prompt, group, self.config.rank_weight)?;
                let (loss, grad) = loss_and_gradient(params, &objective)?;
                optimizer.apply_update(params.values_mut(), &grad, self.config.rl_learning_rate)?;
                total += loss;
                updates += 1;
            }
        }
        Ok(if updates == 0 { 0.0 } else { total / updates as f64 })
    }

    /// One RL step: generate, execute, reward, then optimize.
    pub fn rl_step(
        &self,
        params: &mut PolicyParams,
        optimizer: &mut Optimizer,
        tasks: &[PreparedTask],
        step: usize,
    ) -> Result<(StepStats, Vec<AuditRecord>)> {
        let started = Instant::now();
        let groups = self.generate_and_reward(params, tasks, step)?;
        let mean_loss = self.optimize_groups(params, optimizer, tasks, &groups)?;
        let mut audit = Vec::new();
        for (pt, group) in tasks.iter().zip(&groups) {
            for cand in group {
                let (tier, runtime) = if cand.origin == Origin::Target {
                    (pt.baseline.target_tier, pt.baseline.target_runtime)
                } else {
                    let tier = cand.reward.map(|r| r.tier).unwrap_or(Tier::R1);
                    (tier, cand.outcome.as_ref().and_then(|o| o.mean_runtime))
                };
                audit.push(AuditRecord {
                    step,
                    task_id: pt.task.id.clone(),
                    origin: cand.origin,
                    tier,
                    runtime,
                });
            }
        }
        let stats = step_stats(step, mean_loss, &audit, started.elapsed());
        Ok((stats, audit))
    }

    /// Fine-tune once, then `rl_steps` RL steps, persisting after every step.
    pub fn train(
        &self,
        tasks: &[TaskInstance],
        initial: PolicyParams,
        run: &RunDir,
        options: &TrainOptions,
    ) -> Result<TrainOutcome> {
        let completed = if options.resume { run.read_stats()? } else { Vec::new() };

        let (prepared, mut params, mut optimizer, mut history) = if let Some(last) = completed.last() {
            run.truncate_audit(last.step)?;
            let prepared = self.restore(tasks, &run.read_baselines()?)?;
            let (params, optimizer) = run.load_step(last.step)?;
            tracing::info!(step = last.step, "resuming after completed step");
            (prepared, params, optimizer, completed)
        } else {
            run.reset_history()?;
            let prepared = if options.resume && run.baselines_path().exists() {
                self.restore(tasks, &run.read_baselines()?)?
            } else {
                let prepared = self.prepare(tasks)?;
                run.write_baselines(&prepared.iter().map(|p| p.baseline.clone()).collect::<Vec<_>>())?;
                prepared
            };
            tracing::info!(executable = prepared.len(), total = tasks.len(), "measured baselines");
            let params = if options.reuse_finetune && run.finetune_checkpoint().exists() {
                run.load_finetune()?
            } else {
                let mut params = initial;
                let mut ft_optimizer = Optimizer::new(self.config.optimizer, params.values().len());
                let executable: Vec<TaskInstance> = prepared.iter().map(|p| p.task.clone()).collect();
                let losses = self.fine_tune(&mut params, &mut ft_optimizer, &executable)?;
                run.write_finetune(&params, &losses)?;
                params
            };
            let optimizer = Optimizer::new(self.config.optimizer, params.values().len());
            (prepared, params, optimizer, Vec::new())
        };

        if prepared.is_empty() {
            tracing::warn!("no executable tasks; skipping RL");
            return Ok(TrainOutcome { params, history });
        }
        let first = history.last().map_or(1, |s| s.step + 1);
        for step in first..=self.config.rl_steps {
            let (stats, audit) = self.rl_step(&mut params, &mut optimizer, &prepared, step)?;
            tracing::info!(
                step,
                loss = stats.mean_loss,
                compilation = stats.compilation_rate,
                pass = stats.pass_rate,
                optimization = stats.optimization_rate,
                "rl step complete"
            );
            run.write_step(&stats, &params, &optimizer, &audit)?;
            history.push(stats);
            if options.stop_after_step == Some(step) {
                break;
            }
        }
        Ok(TrainOutcome { params, history })
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from the last completed step in the run directory.
    pub resume: bool,
    /// Start RL from an existing fine-tuned checkpoint instead of fine-tuning.
    pub reuse_finetune: bool,
    /// Stop after this step even if more are configured.
    pub stop_after_step: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub history: Vec<StepStats>,
}

fn step_stats(
    step: usize,
    mean_loss: f64,
    audit: &[AuditRecord],
    elapsed: Duration,
) -> StepStats {
    let n = audit.len();
    let rate = |pred: &dyn Fn(&AuditRecord) -> bool| {
        if n == 0 {
            0.0
        } else {
            audit.iter().filter(|r| pred(r)).count() as f64 / n as f64
        }
    };
    StepStats {
        step,
        mean_loss,
        compilation_rate: rate(&|r| r.tier >= Tier::R2),
        pass_rate: rate(&|r| r.tier >= Tier::R3),
        optimization_rate: rate(&|r| r.tier == Tier::R4),
        n_candidates: n,
        wall_time_secs: elapsed.as_secs_f64(),
    }
}

/// Whether a target counts toward the injection floor of every rate.
pub fn target_is_optimizing(record: &BaselineRecord) -> bool {
    record.target_kind == OutcomeKind::Passed && record.target_tier == Tier::R4
}
