#![no_main]

use libfuzzer_sys::fuzz_target;
use sugar_core::entailment::PhraseTable;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = PhraseTable::from_json(text);
});
