//! Run-directory layout.
//!
//! ```text
//! <run>/config.toml              config snapshot (written by the caller)
//! <run>/metadata.json            instruction, seed, baseline policy
//! <run>/baselines.jsonl          per-task baseline runtime and cached target reward
//! <run>/finetune_losses.jsonl    per-batch supervised losses
//! <run>/checkpoints/finetune.ckpt
//! <run>/checkpoints/step-NNNN.ckpt, step-NNNN.optim
//! <run>/stats.jsonl              one StepStats per completed step
//! <run>/rates.csv                step, compilation, pass, optimization
//! <run>/audit.jsonl              one record per generated candidate
//! ```

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{AuditRecord, StepStats};
use crate::policy::{load_checkpoint, save_checkpoint, Optimizer, PolicyParams};
use crate::reward::Tier;
use crate::sandbox::OutcomeKind;
use crate::{Error, Result};

/// Cached per-task measurements, reused for every step and on resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub task_id: String,
    pub baseline_runtime: f64,
    pub target_kind: OutcomeKind,
    pub target_runtime: Option<f64>,
    pub target_tier: Tier,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let ckpts = root.join("checkpoints");
        fs::create_dir_all(&ckpts).map_err(|e| Error::io(&ckpts, e))?;
        Ok(RunDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn metadata_path(&self) -> PathBuf {
        self.root.join("metadata.json")
    }

    pub fn baselines_path(&self) -> PathBuf {
        self.root.join("baselines.jsonl")
    }

    pub fn finetune_losses_path(&self) -> PathBuf {
        self.root.join("finetune_losses.jsonl")
    }

    pub fn finetune_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("finetune.ckpt")
    }

    pub fn step_checkpoint(&self, step: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("step-{step:04}.ckpt"))
    }

    pub fn step_optimizer(&self, step: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("step-{step:04}.optim"))
    }

    pub fn stats_path(&self) -> PathBuf {
        self.root.join("stats.jsonl")
    }

    pub fn rates_path(&self) -> PathBuf {
        self.root.join("rates.csv")
    }

    pub fn audit_path(&self) -> PathBuf {
        self.root.join("audit.jsonl")
    }

    /// Newest checkpoint available: the last RL step, else the fine-tuned model.
    pub fn latest_checkpoint(&self) -> Option<PathBuf> {
        let steps = self.read_stats().ok()?;
        match steps.last() {
            Some(s) => Some(self.step_checkpoint(s.step)),
            None => Some(self.finetune_checkpoint()).filter(|p| p.exists()),
        }
    }

    pub fn write_baselines(&self, records: &[BaselineRecord]) -> Result<()> {
        write_jsonl(&self.baselines_path(), records)
    }

    pub fn read_baselines(&self) -> Result<Vec<BaselineRecord>> {
        read_jsonl(&self.baselines_path())
    }

    pub fn write_finetune(&self, params: &PolicyParams, losses: &[f64]) -> Result<()> {
        #[derive(Serialize)]
        struct LossRecord {
            batch: usize,
            loss: f64,
        }
        let records: Vec<_> = losses
            .iter()
            .enumerate()
            .map(|(batch, &loss)| LossRecord { batch, loss })
            .collect();
        write_jsonl(&self.finetune_losses_path(), &records)?;
        save_checkpoint(params, &self.finetune_checkpoint())
    }

    pub fn load_finetune(&self) -> Result<PolicyParams> {
        load_checkpoint(&self.finetune_checkpoint())
    }

    /// Persists one completed step. The stats line is appended last, so a step
    /// counts as completed only once its checkpoint is on disk.
    pub fn write_step(
        &self,
        stats: &StepStats,
        params: &PolicyParams,
        optimizer: &Optimizer,
        audit: &[AuditRecord],
    ) -> Result<()> {
        save_checkpoint(params, &self.step_checkpoint(stats.step))?;
        optimizer.save(&self.step_optimizer(stats.step))?;
        append_jsonl(&self.audit_path(), audit)?;
        append_jsonl(&self.stats_path(), std::slice::from_ref(stats))?;
        let history = self.read_stats()?;
        write_rates_csv(&self.rates_path(), &history)
    }

    pub fn read_stats(&self) -> Result<Vec<StepStats>> {
        if !self.stats_path().exists() {
            return Ok(Vec::new());
        }
        read_jsonl(&self.stats_path())
    }

    pub fn load_step(&self, step: usize) -> Result<(PolicyParams, Optimizer)> {
        Ok((
            load_checkpoint(&self.step_checkpoint(step))?,
            Optimizer::load(&self.step_optimizer(step))?,
        ))
    }

    /// Drops audit records of steps that never completed.
    pub fn truncate_audit(&self, last_completed: usize) -> Result<()> {
        if !self.audit_path().exists() {
            return Ok(());
        }
        let records: Vec<AuditRecord> = read_jsonl(&self.audit_path())?;
        let kept: Vec<_> = records.into_iter().filter(|r| r.step <= last_completed).collect();
        write_jsonl(&self.audit_path(), &kept)
    }

    /// Clears any previous RL history, for a fresh run in an existing directory.
    pub fn reset_history(&self) -> Result<()> {
        for path in [self.stats_path(), self.audit_path(), self.rates_path()] {
            if path.exists() {
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }
}

pub fn write_rates_csv(path: &Path, history: &[StepStats]) -> Result<()> {
    let mut out = String::from("step,compilation,pass,optimization\n");
    for s in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.step, s.compilation_rate, s.pass_rate, s.optimization_rate
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::Validation(e.to_string()))?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::Validation(e.to_string()))?;
        buf.push(b'\n');
    }
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}
