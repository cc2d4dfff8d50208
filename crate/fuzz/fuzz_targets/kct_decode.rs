#![no_main]

use kroncov::format::kct;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = kct::decode(data) {
        let bytes = kct::encode(&t).expect("decoded tensor re-encodes");
        assert_eq!(kct::decode(&bytes).expect("round trip"), t);
    }
});
