//! Decoding candidate programs from a policy.

use std::cmp::Ordering;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TaskInstance;
use crate::policy::{LanguageModel, TokenId, Tokenizer};
use crate::reward::RewardTier;
use crate::rng::sample_stream;
use crate::sandbox::ExecutionOutcome;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub beam_width: usize,
    pub temperature: f64,
    pub top_k: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            beam_width: 4,
            temperature: 1.0,
            top_k: 50,
            max_len: 512,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.top_k == 0 || self.top_k > vocab_size {
            return Err(Error::Config(format!(
                "top_k must be in 1..={vocab_size}, got {}",
                self.top_k
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Random,
    Greedy,
    Target,
}

/// One decoded program and everything learned about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Ends with EOS unless decoding hit `max_len`.
    pub tokens: Vec<TokenId>,
    pub origin: Origin,
    /// Untempered model log-probabilities of `tokens`.
    pub per_token_log_probs: Vec<f64>,
    pub cumulative_log_prob: f64,
    pub score: Option<f64>,
    pub reward: Option<RewardTier>,
    pub outcome: Option<ExecutionOutcome>,
}

impl Candidate {
    pub fn new(tokens: Vec<TokenId>, origin: Origin, per_token_log_probs: Vec<f64>) -> Self {
        let cumulative_log_prob = per_token_log_probs.iter().sum();
        Candidate {
            tokens,
            origin,
            per_token_log_probs,
            cumulative_log_prob,
            score: None,
            reward: None,
            outcome: None,
        }
    }

    /// Program text: the byte tokens, specials dropped.
    pub fn program(&self) -> Vec<u8> {
        Tokenizer.decode(&self.tokens)
    }
}

struct Beam {
    tokens: Vec<TokenId>,
    log_probs: Vec<f64>,
    total: f64,
    finished: bool,
}

/// Candidate extension during one beam step: an existing beam, plus a token
/// unless that beam is already finished.
struct Extension {
    beam: usize,
    token: Option<TokenId>,
    log_prob: f64,
    total: f64,
}

fn compare_extensions(beams: &[Beam], a: &Extension, b: &Extension) -> Ordering {
    b.total.total_cmp(&a.total).then_with(|| {
        let ta = beams[a.beam].tokens.iter().copied().chain(a.token);
        let tb = beams[b.beam].tokens.iter().copied().chain(b.token);
        ta.cmp(tb)
    })
}

/// Beam search without length penalty. Finished beams keep competing with
/// their final cumulative log-probability. Output is sorted best first; equal
/// scores are ordered by token sequence, lower ids first.
pub fn beam_search(
    model: &dyn LanguageModel,
    prompt: &[TokenId],
    config: &SamplingConfig,
) -> Result<Vec<Candidate>> {
    let width = config.beam_width;
    if width == 0 || config.max_len == 0 {
        return Err(Error::Config("beam_width and max_len must be positive".into()));
    }
    let eos = model.eos();
    let mut beams = vec![Beam {
        tokens: Vec::new(),
        log_probs: Vec::new(),
        total: 0.0,
        finished: false,
    }];
    let mut context = prompt.to_vec();
    for _ in 0..config.max_len {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let mut extensions = Vec::new();
        for (i, beam) in beams.iter().enumerate() {
            if beam.finished {
                extensions.push(Extension {
                    beam: i,
                    token: None,
                    log_prob: 0.0,
                    total: beam.total,
                });
                continue;
            }
            context.truncate(prompt.len());
            context.extend_from_slice(&beam.tokens);
            let dist = model.next_token_logits(&context)?;
            for (tok, &lp) in dist.log_probs.iter().enumerate() {
                extensions.push(Extension {
                    beam: i,
                    token: Some(tok as TokenId),
                    log_prob: lp,
                    total: beam.total + lp,
                });
            }
        }
        let keep = width.min(extensions.len());
        if keep < extensions.len() {
            extensions.select_nth_unstable_by(keep - 1, |a, b| compare_extensions(&beams, a, b));
            extensions.truncate(keep);
        }
        extensions.sort_by(|a, b| compare_extensions(&beams, a, b));
        beams = extensions
            .into_iter()
            .map(|ext| {
                let parent = &beams[ext.beam];
                let mut tokens = parent.tokens.clone();
                let mut log_probs = parent.log_probs.clone();
                let finished = match ext.token {
                    Some(tok) => {
                        tokens.push(tok);
                        log_probs.push(ext.log_prob);
                        tok == eos
                    }
                    None => true,
                };
                Beam {
                    tokens,
                    log_probs,
                    total: ext.total,
                    finished,
                }
            })
            .collect();
    }
    Ok(beams
        .into_iter()
        .map(|b| Candidate::new(b.tokens, Origin::Greedy, b.log_probs))
        .collect())
}

/// Single-beam search: argmax at every step.
pub fn greedy_decode(model: &dyn LanguageModel, prompt: &[TokenId], max_len: usize) -> Result<Candidate> {
    let config = SamplingConfig {
        beam_width: 1,
        max_len,
        ..SamplingConfig::default()
    };
    let mut out = beam_search(model, prompt, &config)?;
    Ok(out.remove(0))
}

/// Proposal distribution for one random step: log-probs divided by the
/// temperature, restricted to the `top_k` largest (lower id wins ties for
/// membership), renormalized.
pub fn sampling_distribution(log_probs: &[f64], temperature: f64, top_k: usize) -> Vec<(TokenId, f64)> {
    let scaled: Vec<f64> = log_probs.iter().map(|lp| lp / temperature).collect();
    let mut order: Vec<usize> = (0..scaled.len()).collect();
    order.sort_by(|&a, &b| scaled[b].total_cmp(&scaled[a]).then(a.cmp(&b)));
    order.truncate(top_k.min(order.len()));
    let max = order.first().map_or(0.0, |&i| scaled[i]);
    let weights: Vec<f64> = order.iter().map(|&i| (scaled[i] - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    order
        .into_iter()
        .zip(weights)
        .map(|(i, w)| (i as TokenId, w / total))
        .collect()
}

/// Temperature + top-k sampling until EOS or `max_len`.
pub fn random_sample<R: Rng + ?Sized>(
    model: &dyn LanguageModel,
    prompt: &[TokenId],
    config: &SamplingConfig,
    rng: &mut R,
) -> Result<Candidate> {
    config.validate(model.vocab_size())?;
    let eos = model.eos();
    let mut context = prompt.to_vec();
    let mut tokens = Vec::new();
    let mut log_probs = Vec::new();
    while tokens.len() < config.max_len {
        let dist = model.next_token_logits(&context)?;
        let proposal = sampling_distribution(&dist.log_probs, config.temperature, config.top_k);
        let index = WeightedIndex::new(proposal.iter().map(|&(_, p)| p))
            .map_err(|e| Error::Numerical {
                message: format!("degenerate sampling distribution: {e}"),
                param_norm: f64::NAN,
            })?
            .sample(rng);
        let tok = proposal[index].0;
        tokens.push(tok);
        log_probs.push(dist.log_probs[tok as usize]);
        context.push(tok);
        if tok == eos {
            break;
        }
    }
    Ok(Candidate::new(tokens, Origin::Random, log_probs))
}

/// Teacher-forced candidate for a known program.
pub fn score_program(
    model: &dyn LanguageModel,
    prompt: &[TokenId],
    program: &[u8],
    origin: Origin,
) -> Result<Candidate> {
    let tokens = Tokenizer.encode_target(program);
    let log_probs = model.sequence_log_probs(prompt, &tokens)?;
    Ok(Candidate::new(tokens, origin, log_probs))
}

/// The four training candidates for one task, in the order
/// `[random, random, greedy, target]`.
///
/// Each random draw owns a stream derived from `(seed, step, task id, index)`.
pub fn assemble_training_candidates(
    model: &dyn LanguageModel,
    task: &TaskInstance,
    prompt: &[TokenId],
    config: &SamplingConfig,
    step: u64,
) -> Result<Vec<Candidate>> {
    let mut out = Vec::with_capacity(4);
    for index in 0..2 {
        let mut rng = sample_stream(config.seed, step, &task.id, index);
        out.push(random_sample(model, prompt, config, &mut rng)?);
    }
    out.push(greedy_decode(model, prompt, config.max_len)?);
    out.push(score_program(model, prompt, task.fast_source.as_bytes(), Origin::Target)?);
    Ok(out)
}
