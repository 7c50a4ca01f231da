#![no_main]

use libfuzzer_sys::fuzz_target;
use talds::descriptors::tds;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = tds::decode(data) {
        // Anything that decodes re-encodes to the same bytes.
        assert_eq!(tds::encode(&set).unwrap(), data);
    }
});
