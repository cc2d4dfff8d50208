#![no_main]

use kroncov::format::kcf;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(f) = kcf::parse(text) {
        assert_eq!(kcf::parse(&kcf::format(&f)).expect("formatted factor parses"), f);
    }
});
