//! Ranking and tuning losses over a task's candidate group.
//!
//! `score = mean per-token log-prob`, `L_rank = sum over reward-increasing
//! pairs (a, b) of max(0, score_a - score_b)`, `L_tuning = -sum log-probs of
//! the best candidate`, and the combined loss is `a * L_rank + L_tuning`.

use std::cmp::Ordering;

use crate::policy::{SequenceObjective, TokenId};
use crate::sampling::{Candidate, Origin};
use crate::{Error, Result};

/// Mean per-token log-probability; stored on the candidate.
pub fn score(candidate: &mut Candidate) -> Result<f64> {
    let s = mean_log_prob(&candidate.per_token_log_probs)?;
    candidate.score = Some(s);
    Ok(s)
}

fn mean_log_prob(log_probs: &[f64]) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::Contract("cannot score an empty sequence".into()));
    }
    Ok(log_probs.iter().sum::<f64>() / log_probs.len() as f64)
}

/// Hinge rank loss on raw scores and reward values.
///
/// A pair with `score_a == score_b` sits on the hinge and contributes nothing,
/// to the loss or to the gradient.
pub fn rank_loss_values(scores: &[f64], rewards: &[f64]) -> f64 {
    let mut loss = 0.0;
    for (a, (&sa, &ra)) in scores.iter().zip(rewards).enumerate() {
        for (b, (&sb, &rb)) in scores.iter().zip(rewards).enumerate() {
            if a != b && ra < rb && sa > sb {
                loss += sa - sb;
            }
        }
    }
    loss
}

fn origin_priority(origin: Origin) -> u8 {
    match origin {
        Origin::Random => 0,
        Origin::Greedy => 1,
        Origin::Target => 2,
    }
}

/// Index of the learning target: highest reward, then random over greedy over
/// target, then higher score, then earlier position.
pub fn select_best_index(rewards: &[f64], origins: &[Origin], scores: &[f64]) -> Option<usize> {
    (0..rewards.len()).reduce(|best, i| {
        let order = rewards[i]
            .total_cmp(&rewards[best])
            .then_with(|| origin_priority(origins[best]).cmp(&origin_priority(origins[i])))
            .then_with(|| scores[i].total_cmp(&scores[best]));
        if order == Ordering::Greater {
            i
        } else {
            best
        }
    })
}

struct Columns {
    scores: Vec<f64>,
    rewards: Vec<f64>,
    origins: Vec<Origin>,
}

fn columns(candidates: &[Candidate]) -> Result<Columns> {
    if candidates.is_empty() {
        return Err(Error::Contract("no candidates".into()));
    }
    let mut cols = Columns {
        scores: Vec::with_capacity(candidates.len()),
        rewards: Vec::with_capacity(candidates.len()),
        origins: Vec::with_capacity(candidates.len()),
    };
    for (i, c) in candidates.iter().enumerate() {
        let score = match c.score {
            Some(s) => s,
            None => mean_log_prob(&c.per_token_log_probs)?,
        };
        let reward = c
            .reward
            .ok_or_else(|| Error::Contract(format!("candidate {i} has no reward")))?;
        cols.scores.push(score);
        cols.rewards.push(reward.value);
        cols.origins.push(c.origin);
    }
    Ok(cols)
}

pub fn rank_loss(candidates: &[Candidate]) -> Result<f64> {
    let cols = columns(candidates)?;
    Ok(rank_loss_values(&cols.scores, &cols.rewards))
}

pub fn select_best(candidates: &[Candidate]) -> Result<&Candidate> {
    let cols = columns(candidates)?;
    let i = select_best_index(&cols.rewards, &cols.origins, &cols.scores).expect("non-empty");
    Ok(&candidates[i])
}

pub fn tuning_loss(candidates: &[Candidate]) -> Result<f64> {
    let best = select_best(candidates)?;
    Ok(-best.per_token_log_probs.iter().sum::<f64>())
}

pub fn combined_loss(candidates: &[Candidate], rank_weight: f64) -> Result<f64> {
    Ok(rank_weight * rank_loss(candidates)? + tuning_loss(candidates)?)
}

/// Combined loss for one prompt's candidate group, as a differentiable
/// function of the policy's log-probabilities.
pub struct RankingObjective<'a> {
    pub prompt: &'a [TokenId],
    pub outputs: Vec<&'a [TokenId]>,
    pub rewards: Vec<f64>,
    pub origins: Vec<Origin>,
    pub rank_weight: f64,
    pub include_rank: bool,
    pub include_tuning: bool,
}

impl<'a> RankingObjective<'a> {
    pub fn new(prompt: &'a [TokenId], candidates: &'a [Candidate], rank_weight: f64) -> Result<Self> {
        let rewards = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.reward
                    .map(|r| r.value)
                    .ok_or_else(|| Error::Contract(format!("candidate {i} has no reward")))
            })
            .collect::<Result<_>>()?;
        Ok(RankingObjective {
            prompt,
            outputs: candidates.iter().map(|c| c.tokens.as_slice()).collect(),
            rewards,
            origins: candidates.iter().map(|c| c.origin).collect(),
            rank_weight,
            include_rank: true,
            include_tuning: true,
        })
    }
}

impl SequenceObjective for RankingObjective<'_> {
    fn sequences(&self) -> Vec<(&[TokenId], &[TokenId])> {
        self.outputs.iter().map(|o| (self.prompt, *o)).collect()
    }

    fn evaluate(&self, log_probs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let scores: Vec<f64> = log_probs
            .iter()
            .map(|lp| lp.iter().sum::<f64>() / lp.len() as f64)
            .collect();
        let mut coefs: Vec<Vec<f64>> = log_probs.iter().map(|lp| vec![0.0; lp.len()]).collect();
        let mut loss = 0.0;

        if self.include_rank {
            // d(score)/d(lp_t) = 1 / len
            let mut score_grad = vec![0.0; scores.len()];
            for a in 0..scores.len() {
                for b in 0..scores.len() {
                    if a != b && self.rewards[a] < self.rewards[b] && scores[a] > scores[b] {
                        loss += self.rank_weight * (scores[a] - scores[b]);
                        score_grad[a] += self.rank_weight;
                        score_grad[b] -= self.rank_weight;
                    }
                }
            }
            for (c, g) in coefs.iter_mut().zip(score_grad) {
                let per_token = g / c.len() as f64;
                c.iter_mut().for_each(|x| *x += per_token);
            }
        }

        if self.include_tuning {
            if let Some(best) = select_best_index(&self.rewards, &self.origins, &scores) {
                loss -= log_probs[best].iter().sum::<f64>();
                coefs[best].iter_mut().for_each(|x| *x -= 1.0);
            }
        }
        (loss, coefs)
    }
}

/// Mean token negative log-likelihood over a batch of `(prompt, target)` pairs.
pub struct CrossEntropyObjective<'a> {
    pub pairs: Vec<(&'a [TokenId], &'a [TokenId])>,
}

impl SequenceObjective for CrossEntropyObjective<'_> {
    fn sequences(&self) -> Vec<(&[TokenId], &[TokenId])> {
        self.pairs.clone()
    }

    fn evaluate(&self, log_probs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let n: usize = log_probs.iter().map(Vec::len).sum();
        let scale = 1.0 / n.max(1) as f64;
        let loss = -scale * log_probs.iter().flatten().sum::<f64>();
        let coefs = log_probs.iter().map(|lp| vec![-scale; lp.len()]).collect();
        (loss, coefs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::{RewardConfig, Tier};

    fn cand(lps: &[f64], origin: Origin, tier: Tier) -> Candidate {
        let mut c = Candidate::new(vec![0; lps.len()], origin, lps.to_vec());
        c.reward = Some(RewardConfig::default().tier(tier));
        c
    }

    fn scored(score: f64, tier: Tier) -> Candidate {
        cand(&[score], Origin::Random, tier)
    }

    #[test]
    fn score_is_mean() {
        let mut c = cand(&[-1.0, -2.0, -3.0], Origin::Random, Tier::R1);
        assert_eq!(score(&mut c).unwrap(), -2.0);
        assert_eq!(c.score, Some(-2.0));
        let mut c = cand(&[-0.5], Origin::Random, Tier::R1);
        assert_eq!(score(&mut c).unwrap(), -0.5);
        let mut empty = cand(&[], Origin::Random, Tier::R1);
        assert!(matches!(score(&mut empty), Err(Error::Contract(_))));
    }

    #[test]
    fn rank_loss_examples() {
        assert_eq!(rank_loss(&[scored(-1.0, Tier::R2), scored(-2.0, Tier::R4)]).unwrap(), 1.0);
        assert_eq!(rank_loss(&[scored(-3.0, Tier::R2), scored(-1.0, Tier::R4)]).unwrap(), 0.0);
        assert_eq!(
            rank_loss(&[scored(-3.0, Tier::R2), scored(-1.0, Tier::R2), scored(-0.1, Tier::R2)]).unwrap(),
            0.0
        );
    }

    fn group(tiers: [Tier; 4]) -> Vec<Candidate> {
        let origins = [Origin::Random, Origin::Random, Origin::Greedy, Origin::Target];
        let lps = [[-1.0, -1.5], [-0.5, -0.7], [-0.2, -0.1], [-3.0, -2.0]];
        (0..4).map(|i| cand(&lps[i], origins[i], tiers[i])).collect()
    }

    #[test]
    fn select_best_examples() {
        let g = group([Tier::R2, Tier::R2, Tier::R2, Tier::R4]);
        assert_eq!(select_best(&g).unwrap().origin, Origin::Target);
        let g = group([Tier::R4; 4]);
        let best = select_best(&g).unwrap();
        assert_eq!(best.origin, Origin::Random);
        // second random has the higher score (-0.6 vs -1.25)
        assert!(std::ptr::eq(best, &g[1]));
        let g = group([Tier::R1, Tier::R4, Tier::R4, Tier::R4]);
        assert!(std::ptr::eq(select_best(&g).unwrap(), &g[1]));
        let g = group([Tier::R1, Tier::R1, Tier::R3, Tier::R3]);
        assert_eq!(select_best(&g).unwrap().origin, Origin::Greedy);
    }

    #[test]
    fn tuning_and_combined_examples() {
        let g = vec![cand(&[-1.0, -2.0], Origin::Target, Tier::R4)];
        assert_eq!(tuning_loss(&g).unwrap(), 3.0);
        let g = vec![cand(&[-1e-12, -1e-12], Origin::Target, Tier::R4)];
        assert!(tuning_loss(&g).unwrap() < 1e-10);

        let g = group([Tier::R3; 4]);
        assert_eq!(combined_loss(&g, 0.0).unwrap(), tuning_loss(&g).unwrap());
        assert_eq!(combined_loss(&g, 5.0).unwrap(), tuning_loss(&g).unwrap());

        // two-candidate rank example plus its tuning term
        let g = vec![
            cand(&[-1.0], Origin::Random, Tier::R2),
            cand(&[-2.0], Origin::Greedy, Tier::R4),
        ];
        assert_eq!(combined_loss(&g, 1.0).unwrap(), 1.0 + 2.0);
    }

    #[test]
    fn missing_reward_is_contract_violation() {
        let c = Candidate::new(vec![1], Origin::Random, vec![-1.0]);
        assert!(matches!(rank_loss(&[c]), Err(Error::Contract(_))));
    }

    #[test]
    fn objective_matches_kernels() {
        let g = group([Tier::R1, Tier::R3, Tier::R2, Tier::R4]);
        let prompt = [0u32];
        let obj = RankingObjective::new(&prompt, &g, 0.7).unwrap();
        let lps: Vec<Vec<f64>> = g.iter().map(|c| c.per_token_log_probs.clone()).collect();
        let (loss, _) = obj.evaluate(&lps);
        assert!((loss - combined_loss(&g, 0.7).unwrap()).abs() < 1e-12);
    }
}
