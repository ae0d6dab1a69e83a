#![no_main]

use libfuzzer_sys::fuzz_target;
use sugar_core::router::parse_calibration_records;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_calibration_records(text);
});
