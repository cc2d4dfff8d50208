#![no_main]

use kroncov::format::fitdir::FitSummary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = serde_json::from_slice::<FitSummary>(data);
});
