#![no_main]

use kroncov::glm::{format_regressor, parse_regressor, RegressorKind};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = parse_regressor(text, RegressorKind::Other) {
        let again = parse_regressor(&format_regressor(&s), RegressorKind::Other).expect("formatted series parses");
        assert_eq!(again.len(), s.len());
    }
});
