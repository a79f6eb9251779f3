#![no_main]

use libfuzzer_sys::fuzz_target;
use perfrl::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(config) = RunConfig::from_toml_str(text) else { return };
    let rendered = config.to_toml_string().unwrap();
    let reparsed = RunConfig::from_toml_str(&rendered).unwrap();
    assert_eq!(reparsed.to_toml_string().unwrap(), rendered);
});
