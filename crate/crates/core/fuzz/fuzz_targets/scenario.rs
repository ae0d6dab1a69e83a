#![no_main]

use libfuzzer_sys::fuzz_target;
use sugar_core::generator::{MockGenerator, MockScenario};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(scenario) = MockScenario::from_json(text) {
        let _ = MockGenerator::new(scenario);
    }
});
