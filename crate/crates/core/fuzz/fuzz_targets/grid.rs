#![no_main]

use libfuzzer_sys::fuzz_target;
use sugar_core::router::parse_grid;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(grid) = parse_grid(text) {
        assert!(!grid.is_empty());
        for t in grid {
            assert!(0.0 <= t.tau_low && t.tau_low <= t.tau_high);
        }
    }
});
