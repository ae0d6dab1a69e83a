#![no_main]

use libfuzzer_sys::fuzz_target;
use sugar_core::eval::EvalReport;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = EvalReport::from_json(text) {
        let again = EvalReport::from_json(&report.to_json()).expect("round trip");
        assert_eq!(again.to_json(), report.to_json());
        let _ = report.render();
    }
});
