#![no_main]

use libfuzzer_sys::fuzz_target;
use perfrl::policy::tokenizer::{Tokenizer, EOS, VOCAB_SIZE};

fuzz_target!(|data: &[u8]| {
    let tok = Tokenizer;
    let ids = tok.encode(data);
    assert!(ids.iter().all(|&t| (t as usize) < VOCAB_SIZE));
    assert_eq!(tok.decode(&ids), data);

    let target = tok.encode_target(data);
    assert_eq!(target.last(), Some(&EOS));
    assert_eq!(tok.decode(&target), data);
});
