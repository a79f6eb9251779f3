#![no_main]

use libfuzzer_sys::fuzz_target;
use perfrl::policy::Optimizer;

fuzz_target!(|data: &[u8]| {
    let Ok(opt) = Optimizer::decode(data) else { return };
    // SGD ignores the stored hyperparameters, so only the re-encoding is stable
    let again = opt.encode();
    assert_eq!(Optimizer::decode(&again).unwrap().encode(), again);
});
