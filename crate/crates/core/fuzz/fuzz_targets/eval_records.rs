#![no_main]

use libfuzzer_sys::fuzz_target;
use sugar_core::eval::{parse_records, EvalReport};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_records(text) {
        let _ = EvalReport::aggregate("fuzz", &records, None);
    }
});
