#![no_main]

use libfuzzer_sys::fuzz_target;
use talds::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::parse(data) {
        // Validation must reject, not panic on, inconsistent tensors.
        let _ = ckpt.to_model();
    }
});
