#![no_main]

use kroncov::simulator::StudyConfigFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = StudyConfigFile::from_json_str(text);
    }
});
