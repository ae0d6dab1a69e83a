#![no_main]

use libfuzzer_sys::fuzz_target;
use sugar_core::generator::parse_completion_response;

fuzz_target!(|data: &[u8]| {
    if let Ok(samples) = parse_completion_response(data) {
        for s in samples {
            assert!(s.token_count >= 1);
            assert!(s.total_logprob <= 0.0);
        }
    }
});
