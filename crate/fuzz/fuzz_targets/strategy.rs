#![no_main]

use libfuzzer_sys::fuzz_target;
use talds::selection::Strategy;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = text.parse::<Strategy>() {
        assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
    }
});
