//! Four-tier execution reward.
//!
//! | tier | outcome                                   |
//! |------|-------------------------------------------|
//! | R1   | does not compile                          |
//! | R2   | runtime error, timeout, or wrong output   |
//! | R3   | passes every test                         |
//! | R4   | passes every test and is strictly faster  |
//!
//! Only the ordering of the tier values matters to the rank loss.

use serde::{Deserialize, Serialize};

use crate::sandbox::{ExecutionOutcome, OutcomeKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    R1,
    R2,
    R3,
    R4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTier {
    pub tier: Tier,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            r1: 0.0,
            r2: 1.0,
            r3: 1.3,
            r4: 2.0,
        }
    }
}

impl RewardConfig {
    pub fn new(r1: f64, r2: f64, r3: f64, r4: f64) -> Result<Self> {
        let config = RewardConfig { r1, r2, r3, r4 };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let values = [self.r1, self.r2, self.r3, self.r4];
        if values.iter().any(|v| !v.is_finite()) || !values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "reward values must be finite and strictly increasing, got {values:?}"
            )));
        }
        Ok(())
    }

    pub fn value(&self, tier: Tier) -> f64 {
        match tier {
            Tier::R1 => self.r1,
            Tier::R2 => self.r2,
            Tier::R3 => self.r3,
            Tier::R4 => self.r4,
        }
    }

    pub fn tier(&self, tier: Tier) -> RewardTier {
        RewardTier {
            tier,
            value: self.value(tier),
        }
    }
}

/// Classifies an outcome against the baseline runtime of the slow program.
///
/// A passing program is R4 only if `mean_runtime < baseline * (1 - margin)`;
/// `margin = 0` is the strict rule and a tie stays R3.
pub fn classify(outcome: &ExecutionOutcome, baseline_runtime: f64, margin: f64) -> Result<Tier> {
    if !(baseline_runtime > 0.0) || !baseline_runtime.is_finite() {
        return Err(Error::Contract(format!(
            "baseline runtime must be positive, got {baseline_runtime}"
        )));
    }
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::Contract(format!("improvement margin {margin} outside [0, 1)")));
    }
    Ok(match outcome.kind {
        OutcomeKind::SyntaxError => Tier::R1,
        OutcomeKind::Failed => Tier::R2,
        OutcomeKind::Passed => {
            let runtime = outcome.mean_runtime.ok_or_else(|| {
                Error::Contract("passed outcome without a mean runtime".into())
            })?;
            if runtime < baseline_runtime * (1.0 - margin) {
                Tier::R4
            } else {
                Tier::R3
            }
        }
    })
}

/// Strict-improvement reward.
pub fn assign_reward(
    outcome: &ExecutionOutcome,
    baseline_runtime: f64,
    config: &RewardConfig,
) -> Result<RewardTier> {
    Ok(config.tier(classify(outcome, baseline_runtime, 0.0)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(kind: OutcomeKind, runtime: Option<f64>) -> ExecutionOutcome {
        ExecutionOutcome {
            kind,
            mean_runtime: runtime,
            case_results: Vec::new(),
            message: None,
        }
    }

    #[test]
    fn tiers_and_values() {
        let c = RewardConfig::default();
        let r = assign_reward(&outcome(OutcomeKind::SyntaxError, None), 1.0, &c).unwrap();
        assert_eq!((r.tier, r.value), (Tier::R1, 0.0));
        let r = assign_reward(&outcome(OutcomeKind::Failed, None), 1.0, &c).unwrap();
        assert_eq!((r.tier, r.value), (Tier::R2, 1.0));
        let r = assign_reward(&outcome(OutcomeKind::Passed, Some(0.8)), 1.0, &c).unwrap();
        assert_eq!((r.tier, r.value), (Tier::R4, 2.0));
        let r = assign_reward(&outcome(OutcomeKind::Passed, Some(1.0)), 1.0, &c).unwrap();
        assert_eq!((r.tier, r.value), (Tier::R3, 1.3));
    }

    #[test]
    fn margin_requires_clear_improvement() {
        let o = outcome(OutcomeKind::Passed, Some(0.99));
        assert_eq!(classify(&o, 1.0, 0.0).unwrap(), Tier::R4);
        assert_eq!(classify(&o, 1.0, 0.02).unwrap(), Tier::R3);
        assert_eq!(classify(&outcome(OutcomeKind::Passed, Some(0.97)), 1.0, 0.02).unwrap(), Tier::R4);
    }

    #[test]
    fn non_positive_baseline_is_contract_violation() {
        let c = RewardConfig::default();
        let o = outcome(OutcomeKind::Failed, None);
        assert!(matches!(assign_reward(&o, 0.0, &c), Err(Error::Contract(_))));
        assert!(matches!(assign_reward(&o, -1.0, &c), Err(Error::Contract(_))));
        assert!(matches!(assign_reward(&o, f64::NAN, &c), Err(Error::Contract(_))));
    }

    #[test]
    fn config_must_be_strictly_ordered() {
        assert!(RewardConfig::new(0.0, 1.0, 1.3, 2.0).is_ok());
        assert!(RewardConfig::new(-5.0, 0.0, 7.0, 7.1).is_ok());
        assert!(RewardConfig::new(0.0, 1.0, 1.0, 2.0).is_err());
        assert!(RewardConfig::new(2.0, 1.0, 1.3, 0.0).is_err());
    }

    #[test]
    fn monotone_in_outcome_quality() {
        let c = RewardConfig::default();
        let ladder = [
            outcome(OutcomeKind::SyntaxError, None),
            outcome(OutcomeKind::Failed, None),
            outcome(OutcomeKind::Passed, Some(1.5)),
            outcome(OutcomeKind::Passed, Some(1.0)),
            outcome(OutcomeKind::Passed, Some(0.5)),
        ];
        let values: Vec<f64> = ladder
            .iter()
            .map(|o| assign_reward(o, 1.0, &c).unwrap().value)
            .collect();
        assert!(values.windows(2).all(|w| w[0] <= w[1]), "{values:?}");
    }
}
