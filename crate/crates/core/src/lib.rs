//! Semantic-uncertainty guided adaptive retrieval for question answering.
//!
//! Sample several closed-book answers, cluster them by bidirectional
//! entailment, and measure the entropy over meaning clusters. Low entropy
//! answers from the model's own knowledge; moderate entropy retrieves once;
//! high entropy runs an iterative retrieve-and-redraft loop.
//!
//! Backends (generator, entailment judge) are traits with deterministic mock
//! and HTTP implementations. Retrieval is a BM25 inverted index.

pub mod config;
pub mod entailment;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod generator;
pub mod http;
pub mod orchestrator;
pub mod retriever;
pub mod router;
pub mod seed;
pub mod text;
pub mod trace;

pub use error::{Error, ErrorKind, Result};
