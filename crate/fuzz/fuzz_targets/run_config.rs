#![no_main]

use libfuzzer_sys::fuzz_target;
use talds::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        let again = RunConfig::parse(&cfg.to_toml()).expect("snapshot reparses");
        assert_eq!(again, cfg);
    }
});
