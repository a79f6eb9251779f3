//! Byte-level tokenizer: one token per byte plus three special tokens.

use super::TokenId;

/// Number of byte tokens; ids `0..256` are the bytes themselves.
pub const BYTE_TOKENS: usize = 256;
pub const BOS: TokenId = 256;
pub const EOS: TokenId = 257;
pub const PAD: TokenId = 258;
pub const VOCAB_SIZE: usize = 259;

/// Special token ids for a vocabulary of arbitrary size.
///
/// The three specials always occupy the top three ids, which for the byte
/// vocabulary gives `BOS = 256`, `EOS = 257`, `PAD = 258`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub bos: TokenId,
    pub eos: TokenId,
    pub pad: TokenId,
}

impl SpecialTokens {
    pub fn for_vocab(vocab_size: usize) -> Self {
        assert!(vocab_size >= 3, "vocabulary must hold the three special tokens");
        let top = vocab_size as TokenId;
        SpecialTokens {
            bos: top - 3,
            eos: top - 2,
            pad: top - 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Tokenizer;

impl Tokenizer {
    pub fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }

    pub fn encode(&self, bytes: &[u8]) -> Vec<TokenId> {
        bytes.iter().map(|&b| TokenId::from(b)).collect()
    }

    /// Drops special tokens; every byte token maps back to its byte.
    pub fn decode(&self, tokens: &[TokenId]) -> Vec<u8> {
        tokens
            .iter()
            .filter(|&&t| (t as usize) < BYTE_TOKENS)
            .map(|&t| t as u8)
            .collect()
    }

    /// Model input for a rendered prompt: `BOS prompt-bytes BOS`.
    ///
    /// The trailing `BOS` is the decoder start token; generated output follows it.
    pub fn encode_prompt(&self, rendered: &str) -> Vec<TokenId> {
        let mut tokens = Vec::with_capacity(rendered.len() + 2);
        tokens.push(BOS);
        tokens.extend(self.encode(rendered.as_bytes()));
        tokens.push(BOS);
        tokens
    }

    /// Teacher-forced output sequence for a program: its bytes then `EOS`.
    pub fn encode_target(&self, program: &[u8]) -> Vec<TokenId> {
        let mut tokens = self.encode(program);
        tokens.push(EOS);
        tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn specials_for_byte_vocab() {
        let s = SpecialTokens::for_vocab(VOCAB_SIZE);
        assert_eq!((s.bos, s.eos, s.pad), (BOS, EOS, PAD));
    }

    #[test]
    fn decode_skips_specials() {
        let tok = Tokenizer;
        assert_eq!(tok.decode(&[BOS, 104, 105, EOS, PAD]), b"hi".to_vec());
    }

    proptest! {
        #[test]
        fn round_trip_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            let tok = Tokenizer;
            prop_assert_eq!(tok.decode(&tok.encode(&bytes)), bytes.clone());
            prop_assert_eq!(tok.decode(&tok.encode_target(&bytes)), bytes);
        }
    }
}
