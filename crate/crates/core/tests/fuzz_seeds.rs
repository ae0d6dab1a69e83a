//! Runs the checked-in fuzz seeds through their parsers, so the seeds stay
//! meaningful even where cargo-fuzz is unavailable.

use std::path::{Path, PathBuf};

use sugar_core::config::RunConfig;
use sugar_core::entailment::{parse_nli_response, PhraseTable};
use sugar_core::eval::{parse_dataset, parse_records, EvalReport};
use sugar_core::generator::{parse_completion_response, MockScenario};
use sugar_core::retriever::{parse_corpus, InvertedIndex};
use sugar_core::router::{parse_calibration_records, parse_grid};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(b: &[u8]) -> &str {
    std::str::from_utf8(b).unwrap()
}

/// Every seed must parse, except those whose name marks them as a
/// negative example.
fn check<T, E: std::fmt::Display>(target: &str, parse: impl Fn(&[u8]) -> Result<T, E>) {
    for (path, bytes) in seeds(target) {
        let negative = path.file_name().unwrap().to_string_lossy().contains("null");
        match parse(&bytes) {
            Ok(_) => assert!(!negative, "{} parsed", path.display()),
            Err(e) => assert!(negative, "{}: {e}", path.display()),
        }
    }
}

#[test]
fn backend_response_seeds() {
    check("completion_response", parse_completion_response);
    check("nli_response", parse_nli_response);
}

#[test]
fn input_file_seeds() {
    check("corpus", |b| parse_corpus(text(b)));
    check("scenario", |b| MockScenario::from_json(text(b)));
    check("phrase_table", |b| PhraseTable::from_json(text(b)));
    check("index", InvertedIndex::from_json_bytes);
    check("dataset", |b| parse_dataset(text(b)));
    check("calibration_records", |b| parse_calibration_records(text(b)));
    check("grid", |b| parse_grid(text(b)));
    check("config", |b| RunConfig::from_toml(text(b), None));
    check("report", |b| EvalReport::from_json(text(b)));
    check("eval_records", |b| parse_records(text(b)));
}
