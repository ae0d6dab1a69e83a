#![no_main]

use libfuzzer_sys::fuzz_target;
use sugar_core::retriever::InvertedIndex;

fuzz_target!(|data: &[u8]| {
    if let Ok(index) = InvertedIndex::from_json_bytes(data) {
        let _ = index.search("a b c", 5);
    }
});
