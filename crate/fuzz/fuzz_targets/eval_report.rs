#![no_main]

use libfuzzer_sys::fuzz_target;
use talds::episodic::EvalReport;

fuzz_target!(|data: &[u8]| {
    if let Ok(report) = serde_json::from_slice::<EvalReport>(data) {
        let _ = EvalReport::from_episodes(report.per_episode, &[report.selection_stats]);
    }
});
