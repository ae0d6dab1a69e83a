//! Text normalization shared by the metrics, the mock entailment backend and
//! the lexical retriever.

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// SQuAD-style answer normalization: lowercase, delete ASCII punctuation,
/// drop the articles "a", "an", "the" as whole words, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    answer_tokens(s).join(" ")
}

/// Whitespace tokens of an answer after [`normalize_answer`].
pub fn answer_tokens(s: &str) -> Vec<String> {
    let stripped: String = s
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    stripped
        .split_whitespace()
        .filter(|w| !ARTICLES.contains(w))
        .map(str::to_owned)
        .collect()
}

/// Retrieval tokenizer: lowercase, split on every non-alphanumeric
/// character. No stemming, no stopwords.
pub fn tokenize(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// True when `needle` occurs as a contiguous run inside `haystack`.
/// An empty needle is contained everywhere.
pub fn contains_run<T: PartialEq>(haystack: &[T], needle: &[T]) -> bool {
    needle.is_empty() || haystack.windows(needle.len()).any(|w| w == needle)
}
