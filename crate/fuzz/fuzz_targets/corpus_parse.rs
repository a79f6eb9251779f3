#![no_main]

use libfuzzer_sys::fuzz_target;
use perfrl::corpus::{parse_tasks, write_tasks};

fuzz_target!(|data: &[u8]| {
    let Ok(tasks) = parse_tasks(data) else { return };
    let mut out = Vec::new();
    write_tasks(&tasks, &mut out).unwrap();
    assert_eq!(parse_tasks(&out).unwrap(), tasks);
});
