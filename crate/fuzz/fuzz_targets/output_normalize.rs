#![no_main]

use libfuzzer_sys::fuzz_target;
use perfrl::sandbox::{normalize_output, outputs_match};

fuzz_target!(|text: &str| {
    let once = normalize_output(text);
    assert_eq!(normalize_output(&once), once);
    assert!(outputs_match(text, &once));
    assert!(outputs_match(&format!("{text}\n  \n"), text));
    assert!(!once.ends_with('\n'));
});
