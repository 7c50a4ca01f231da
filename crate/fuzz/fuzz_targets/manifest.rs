#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(names) = talds::descriptors::parse_manifest(data) {
        assert!(!names.is_empty());
        assert!(names.iter().all(|n| !n.contains('/') && !n.starts_with('.')));
    }
});
