#![no_main]

use kroncov::glm::parse_confounders;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = parse_confounders(text) {
        assert_eq!(c.names.len(), c.matrix.ncols());
    }
});
