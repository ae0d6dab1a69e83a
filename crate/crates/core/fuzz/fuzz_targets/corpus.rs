#![no_main]

use libfuzzer_sys::fuzz_target;
use sugar_core::retriever::{parse_corpus, InvertedIndex};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(docs) = parse_corpus(text) {
        if let Ok(index) = InvertedIndex::from_documents(docs) {
            let _ = index.search("the record", 3);
        }
    }
});
