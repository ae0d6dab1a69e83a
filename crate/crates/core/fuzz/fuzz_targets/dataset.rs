#![no_main]

use libfuzzer_sys::fuzz_target;
use sugar_core::eval::parse_dataset;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(qs) = parse_dataset(text) {
        assert!(!qs.is_empty());
    }
});
