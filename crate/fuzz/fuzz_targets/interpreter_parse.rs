#![no_main]

use libfuzzer_sys::fuzz_target;
use perfrl::sandbox::Interpreter;

fuzz_target!(|line: &str| {
    let Ok(interp) = Interpreter::parse(line) else {
        assert!(line.trim().is_empty());
        return;
    };
    assert_eq!(Interpreter::parse(&interp.command_line()).unwrap(), interp);
});
