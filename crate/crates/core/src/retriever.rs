//! BM25 retrieval over an in-memory inverted index.
//!
//! Scoring uses `k1 = 1.2`, `b = 0.75` and
//! `idf = ln(1 + (N - df + 0.5) / (df + 0.5))`, so idf is always positive.
//! Query terms are deduplicated before scoring. A document's indexed text is
//! its title followed by its body.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_TOP_K: usize = 5;
pub const INDEX_FORMAT_VERSION: u32 = 1;
pub const INDEX_FILE_NAME: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            title: title.into(),
            text: text.into(),
        }
    }

    /// What the generator sees for this document.
    pub fn context_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{}: {}", self.title, self.text)
        }
    }

    fn tokens(&self) -> Vec<String> {
        let mut t = tokenize(&self.title);
        t.extend(tokenize(&self.text));
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDocument {
    pub document: Document,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub num_docs: usize,
    pub num_terms: usize,
    pub avg_doc_len: f64,
}

pub trait Retriever: Send + Sync {
    /// Top-`k` documents for `query`, best first.
    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredDocument>>;
}

impl<R: Retriever + ?Sized> Retriever for &R {
    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredDocument>> {
        (**self).search(query, k)
    }
}

impl<R: Retriever + ?Sized> Retriever for Box<R> {
    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredDocument>> {
        (**self).search(query, k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Posting {
    doc: u32,
    tf: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvertedIndex {
    docs: Vec<Document>,
    doc_lens: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    total_tokens: u64,
}

impl InvertedIndex {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, d) in docs.iter().enumerate() {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(Error::DuplicateDocId {
                    doc_id: d.doc_id.clone(),
                    line: i + 1,
                });
            }
        }
        if docs.len() > u32::MAX as usize {
            return Err(Error::InvalidRequest("too many documents".into()));
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lens = Vec::with_capacity(docs.len());
        let mut total_tokens = 0u64;
        for (i, d) in docs.iter().enumerate() {
            let tokens = d.tokens();
            doc_lens.push(tokens.len() as u32);
            total_tokens += tokens.len() as u64;
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: i as u32,
                    tf: count,
                });
            }
        }
        Ok(InvertedIndex {
            docs,
            doc_lens,
            postings,
            total_tokens,
        })
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            num_docs: self.docs.len(),
            num_terms: self.postings.len(),
            avg_doc_len: self.avg_doc_len(),
        }
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    fn avg_doc_len(&self) -> f64 {
        if self.docs.is_empty() {
            0.0
        } else {
            self.total_tokens as f64 / self.docs.len() as f64
        }
    }

    /// Inverse document frequency of a term; `None` when it is not indexed.
    pub fn idf(&self, term: &str) -> Option<f64> {
        let df = self.postings.get(term)?.len() as f64;
        let n = self.docs.len() as f64;
        Some((1.0 + (n - df + 0.5) / (df + 0.5)).ln())
    }

    pub fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredDocument>> {
        if k == 0 {
            return Err(Error::InvalidRequest("k must be at least 1".into()));
        }
        let mut terms = tokenize(query);
        terms.sort();
        terms.dedup();
        let avgdl = self.avg_doc_len();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let (Some(postings), Some(idf)) = (self.postings.get(term), self.idf(term)) else {
                continue;
            };
            for p in postings {
                let tf = f64::from(p.tf);
                let dl = f64::from(self.doc_lens[p.doc as usize]);
                let norm = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl);
                *scores.entry(p.doc).or_default() += idf * tf * (BM25_K1 + 1.0) / norm;
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.docs[a.0 as usize].doc_id.cmp(&self.docs[b.0 as usize].doc_id))
        });
        ranked.truncate(k);
        Ok(ranked
            .into_iter()
            .map(|(doc, score)| ScoredDocument {
                document: self.docs[doc as usize].clone(),
                score,
            })
            .collect())
    }

    /// Writes the index as versioned JSON into `dir/index.json`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating index directory {}", dir.display()), e))?;
        let path = dir.join(INDEX_FILE_NAME);
        let file = IndexFile {
            format_version: INDEX_FORMAT_VERSION,
            documents: self.docs.clone(),
            doc_lens: self.doc_lens.clone(),
            postings: self
                .postings
                .iter()
                .map(|(t, ps)| (t.clone(), ps.iter().map(|p| (p.doc, p.tf)).collect()))
                .collect(),
        };
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(&path)
                .map_err(|e| Error::io(format!("creating {}", path.display()), e))?,
        );
        serde_json::to_writer(&mut f, &file).map_err(|e| Error::io("writing index", e.into()))?;
        f.flush().map_err(|e| Error::io("writing index", e))?;
        Ok(path)
    }

    /// Loads `dir/index.json` (or a direct path to the file).
    pub fn load(path: &Path) -> Result<Self> {
        let file_path = if path.is_dir() {
            path.join(INDEX_FILE_NAME)
        } else {
            path.to_path_buf()
        };
        let bytes = std::fs::read(&file_path)
            .map_err(|e| Error::io(format!("reading index {}", file_path.display()), e))?;
        Self::from_json_bytes(&bytes)
    }

    /// Decodes and structurally validates a persisted index.
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let file: IndexFile =
            serde_json::from_slice(bytes).map_err(|e| Error::InvalidIndex(e.to_string()))?;
        if file.format_version != INDEX_FORMAT_VERSION {
            return Err(Error::InvalidIndex(format!(
                "unsupported format_version {} (expected {INDEX_FORMAT_VERSION})",
                file.format_version
            )));
        }
        let n = file.documents.len();
        if file.doc_lens.len() != n {
            return Err(Error::InvalidIndex("doc_lens length differs from documents".into()));
        }
        let mut ids = HashSet::new();
        if let Some(d) = file.documents.iter().find(|d| !ids.insert(d.doc_id.as_str())) {
            return Err(Error::InvalidIndex(format!("duplicate doc_id {:?}", d.doc_id)));
        }
        let mut tf_sums = vec![0u64; n];
        let mut postings = BTreeMap::new();
        for (term, list) in file.postings {
            if list.is_empty() {
                return Err(Error::InvalidIndex(format!("term {term:?} has no postings")));
            }
            let mut prev: Option<u32> = None;
            let mut ps = Vec::with_capacity(list.len());
            for (doc, tf) in list {
                if doc as usize >= n || tf == 0 || prev.is_some_and(|p| p >= doc) {
                    return Err(Error::InvalidIndex(format!("bad posting ({doc}, {tf}) for {term:?}")));
                }
                prev = Some(doc);
                tf_sums[doc as usize] += u64::from(tf);
                ps.push(Posting { doc, tf });
            }
            postings.insert(term, ps);
        }
        if tf_sums.iter().zip(&file.doc_lens).any(|(s, &l)| *s != u64::from(l)) {
            return Err(Error::InvalidIndex("postings disagree with document lengths".into()));
        }
        Ok(InvertedIndex {
            total_tokens: tf_sums.iter().sum(),
            docs: file.documents,
            doc_lens: file.doc_lens,
            postings,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexFile {
    format_version: u32,
    documents: Vec<Document>,
    doc_lens: Vec<u32>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

#[derive(Debug, Deserialize)]
struct CorpusLine {
    doc_id: Option<String>,
    #[serde(default)]
    title: Option<String>,
    text: Option<String>,
}

/// Parses corpus JSONL. Blank lines are skipped; line numbers in errors are
/// 1-based.
pub fn parse_corpus(text: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedRecord { line: line_no, reason };
        let rec: CorpusLine = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let doc_id = rec.doc_id.ok_or_else(|| malformed("missing \"doc_id\"".into()))?;
        let text = rec.text.ok_or_else(|| malformed("missing \"text\"".into()))?;
        if text.trim().is_empty() {
            return Err(malformed("empty \"text\"".into()));
        }
        if seen.insert(doc_id.clone(), line_no).is_some() {
            return Err(Error::DuplicateDocId { doc_id, line: line_no });
        }
        docs.push(Document {
            doc_id,
            title: rec.title.unwrap_or_default(),
            text,
        });
    }
    Ok(docs)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::CorpusNotFound(path.to_path_buf())
        } else {
            Error::io(format!("reading corpus {}", path.display()), e)
        }
    })?;
    parse_corpus(&text)
}

/// A BM25 retriever that may not have an index yet.
#[derive(Debug, Clone, Default)]
pub struct Bm25Retriever {
    index: Option<InvertedIndex>,
}

impl Bm25Retriever {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_index(index: InvertedIndex) -> Self {
        Bm25Retriever { index: Some(index) }
    }

    /// Builds (or rebuilds) the index from a JSONL corpus.
    pub fn ingest_corpus(&mut self, path: &Path) -> Result<IndexStats> {
        let index = InvertedIndex::from_documents(read_corpus(path)?)?;
        let stats = index.stats();
        self.index = Some(index);
        Ok(stats)
    }

    pub fn index(&self) -> Option<&InvertedIndex> {
        self.index.as_ref()
    }
}

impl Retriever for Bm25Retriever {
    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredDocument>> {
        self.index.as_ref().ok_or(Error::IndexNotBuilt)?.search(query, k)
    }
}

impl Retriever for InvertedIndex {
    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredDocument>> {
        InvertedIndex::search(self, query, k)
    }
}
