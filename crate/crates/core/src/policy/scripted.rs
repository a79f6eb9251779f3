//! Hard-wired models for harness checks.
//!
//! These emit a predetermined program with near-certainty, which makes
//! end-to-end evaluation outcomes known in advance.

use super::tokenizer::{BOS, VOCAB_SIZE};
use super::{check_context, LanguageModel, TokenDistribution, TokenId};
use crate::Result;

const CONFIDENT: f64 = 0.0;
const UNLIKELY: f64 = -40.0;

/// Position of the next output token: tokens after the last `BOS`.
fn output_position(context: &[TokenId]) -> usize {
    match context.iter().rposition(|&t| t == BOS) {
        Some(i) => context.len() - i - 1,
        None => context.len(),
    }
}

fn peaked(token: TokenId) -> TokenDistribution {
    let mut logits = vec![UNLIKELY; VOCAB_SIZE];
    logits[token as usize] = CONFIDENT;
    TokenDistribution::from_logits(logits)
}

/// Emits the same program for every prompt.
#[derive(Debug, Clone)]
pub struct FixedOutputModel {
    program: Vec<u8>,
}

impl FixedOutputModel {
    pub fn new(program: impl Into<Vec<u8>>) -> Self {
        FixedOutputModel {
            program: program.into(),
        }
    }
}

impl LanguageModel for FixedOutputModel {
    fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }

    fn next_token_logits(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        check_context(context, VOCAB_SIZE)?;
        let pos = output_position(context);
        Ok(match self.program.get(pos) {
            Some(&b) => peaked(TokenId::from(b)),
            None => peaked(self.eos()),
        })
    }
}

/// Echoes the program embedded in the prompt: every prompt byte after the
/// first newline (the instruction line).
#[derive(Debug, Clone, Copy, Default)]
pub struct PromptCopyModel;

impl LanguageModel for PromptCopyModel {
    fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }

    fn next_token_logits(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        check_context(context, VOCAB_SIZE)?;
        let start = context.iter().rposition(|&t| t == BOS).unwrap_or(0);
        let prompt_end = start;
        let prompt_start = context[..prompt_end]
            .iter()
            .rposition(|&t| t == BOS)
            .map_or(0, |i| i + 1);
        let prompt = &context[prompt_start..prompt_end];
        let source = match prompt.iter().position(|&t| t == TokenId::from(b'\n')) {
            Some(nl) => &prompt[nl + 1..],
            None => &[][..],
        };
        let pos = output_position(context);
        Ok(match source.get(pos) {
            Some(&t) => peaked(t),
            None => peaked(self.eos()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Tokenizer;

    #[test]
    fn fixed_model_emits_program_then_eos() {
        let m = FixedOutputModel::new("ab");
        let tok = Tokenizer;
        let prompt = tok.encode_prompt("x\ny");
        let out = tok.encode_target(b"ab");
        let lps = m.sequence_log_probs(&prompt, &out).unwrap();
        assert!(lps.iter().all(|&lp| lp > -1e-12));
    }

    #[test]
    fn copy_model_echoes_source() {
        let tok = Tokenizer;
        let prompt = tok.encode_prompt("Improve:\nprint(1)\n");
        let out = tok.encode_target(b"print(1)\n");
        let lps = PromptCopyModel.sequence_log_probs(&prompt, &out).unwrap();
        assert!(lps.iter().all(|&lp| lp > -1e-12));
    }
}
