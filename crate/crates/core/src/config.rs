//! Run configuration: one TOML file with a section per module.
//!
//! ```toml
//! run_dir = "runs/default"
//!
//! [corpus]
//! train = "data/micro_corpus.jsonl"
//! instruction = "Improve the execution performance of the following program:"
//!
//! [sandbox]
//! interpreter = "python3 -I"
//!
//! [sampling]
//! seed = 7
//!
//! [train]
//! rl_steps = 8
//! ```
//!
//! Every field has a default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::DEFAULT_INSTRUCTION;
use crate::eval::EvalConfig;
use crate::policy::tokenizer::VOCAB_SIZE;
use crate::policy::PolicyShape;
use crate::reward::RewardConfig;
use crate::sampling::SamplingConfig;
use crate::sandbox::{Interpreter, Sandbox};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub instruction: String,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            train: None,
            test: None,
            instruction: DEFAULT_INSTRUCTION.to_owned(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxConfig {
    /// Falls back to `PERFRL_INTERPRETER`, then `python3 -I`.
    pub interpreter: Option<String>,
    /// Worker threads; defaults to available parallelism minus one.
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub sandbox: SandboxConfig,
    pub model: PolicyShape,
    pub reward: RewardConfig,
    pub sampling: SamplingConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_dir: PathBuf::from("runs/default"),
            corpus: CorpusConfig::default(),
            sandbox: SandboxConfig::default(),
            model: PolicyShape::default(),
            reward: RewardConfig::default(),
            sampling: SamplingConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.vocab != VOCAB_SIZE {
            return Err(Error::Config(format!(
                "the byte tokenizer needs vocab = {VOCAB_SIZE}, got {}",
                self.model.vocab
            )));
        }
        if self.corpus.instruction.is_empty() {
            return Err(Error::Config("instruction must not be empty".into()));
        }
        if self.sandbox.jobs == Some(0) {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        self.reward.validate()?;
        self.sampling.validate(self.model.vocab)?;
        self.train.validate()?;
        self.eval.validate()
    }

    pub fn interpreter(&self) -> Result<Interpreter> {
        match &self.sandbox.interpreter {
            Some(cmd) => Interpreter::parse(cmd),
            None => Interpreter::from_env(),
        }
    }

    pub fn sandbox(&self) -> Result<Sandbox> {
        Ok(Sandbox::new(self.interpreter()?))
    }

    pub fn jobs(&self) -> usize {
        self.sandbox.jobs.unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map_or(1, |n| n.get().saturating_sub(1))
                .max(1)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.sampling.seed = 99;
        c.train.rl_steps = 3;
        c.corpus.train = Some("x.jsonl".into());
        c.sandbox.interpreter = Some("python3".into());
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn sections_override_defaults() {
        let c = RunConfig::from_toml_str("[reward]\nr4 = 5.0\n[train]\nrl_steps = 2\n").unwrap();
        assert_eq!(c.reward.r4, 5.0);
        assert_eq!(c.reward.r1, 0.0);
        assert_eq!(c.train.rl_steps, 2);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str("[reward]\nr3 = 3.0\n").is_err());
        assert!(RunConfig::from_toml_str("[sampling]\ntemperature = 0.0\n").is_err());
        assert!(RunConfig::from_toml_str("[model]\nvocab = 100\n").is_err());
        assert!(RunConfig::from_toml_str("[bogus]\nx = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[train]\nrl_learning_rate = -1.0\n").is_err());
    }
}
