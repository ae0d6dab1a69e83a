#![no_main]

use libfuzzer_sys::fuzz_target;
use sugar_core::entailment::parse_nli_response;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = parse_nli_response(data) {
        assert!((0.0..=1.0).contains(&v.score));
    }
});
