//! The policy: a next-token distribution over a fixed vocabulary.
//!
//! [`LanguageModel`] is the interface decoding and evaluation depend on. The
//! trainable implementation is [`PolicyParams`], a windowed feed-forward
//! network with exact analytic gradients.

mod checkpoint;
mod mlp;
mod optim;
pub mod scripted;
pub mod tokenizer;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use mlp::{loss_and_gradient, PolicyParams, PolicyShape, SequenceObjective};
pub use optim::{Optimizer, OptimizerKind};
pub use tokenizer::{SpecialTokens, Tokenizer};

use crate::{Error, Result};

pub type TokenId = u32;

/// Conditional next-token distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let log_probs = log_softmax(&logits);
        TokenDistribution { logits, log_probs }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Highest-probability token; the lowest id wins ties.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &lp) in self.log_probs.iter().enumerate() {
            if lp > self.log_probs[best] {
                best = i;
            }
        }
        best as TokenId
    }
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|l| l - lse).collect()
}

pub trait LanguageModel: Sync {
    fn vocab_size(&self) -> usize;

    fn specials(&self) -> SpecialTokens {
        SpecialTokens::for_vocab(self.vocab_size())
    }

    fn eos(&self) -> TokenId {
        self.specials().eos
    }

    /// Distribution of the token that follows `context`.
    fn next_token_logits(&self, context: &[TokenId]) -> Result<TokenDistribution>;

    /// `log P(output[t] | prompt ++ output[..t])` for every output position.
    fn sequence_log_probs(&self, prompt: &[TokenId], output: &[TokenId]) -> Result<Vec<f64>> {
        if output.is_empty() {
            return Err(Error::Contract("output sequence is empty".into()));
        }
        let mut context = Vec::with_capacity(prompt.len() + output.len());
        context.extend_from_slice(prompt);
        let mut out = Vec::with_capacity(output.len());
        for &tok in output {
            check_token(tok, self.vocab_size())?;
            let dist = self.next_token_logits(&context)?;
            out.push(dist.log_probs[tok as usize]);
            context.push(tok);
        }
        Ok(out)
    }
}

pub(crate) fn check_token(token: TokenId, vocab_size: usize) -> Result<()> {
    if (token as usize) < vocab_size {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "token id {token} out of range for vocabulary of {vocab_size}"
        )))
    }
}

pub(crate) fn check_context(context: &[TokenId], vocab_size: usize) -> Result<()> {
    if context.is_empty() {
        return Err(Error::Contract("context must not be empty".into()));
    }
    context.iter().try_for_each(|&t| check_token(t, vocab_size))
}
