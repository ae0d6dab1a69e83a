//! Rule-based entailment for offline runs.
//!
//! Answers are normalized (lowercase, punctuation and articles removed,
//! whitespace collapsed). Two answers entail each other when they are equal
//! after normalization, or when both mention phrases of the same alias class.
//! Answers mentioning different members of one antonym class contradict.
//! Everything else is neutral. The question text is not consulted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_inputs, Entailment, EntailmentLabel, EntailmentVerdict};
use crate::error::{Error, Result};
use crate::text::{answer_tokens, contains_run};

/// Lists of phrases; each inner list is one class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhraseTable(pub Vec<Vec<String>>);

impl PhraseTable {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Config(format!("phrase table: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading phrase table {}", path.display()), e))?;
        Self::from_json(&json)
    }
}

/// Normalized phrase classes; phrases that normalize to nothing are dropped.
type Classes = Vec<Vec<Vec<String>>>;

fn compile(table: &PhraseTable) -> Classes {
    table
        .0
        .iter()
        .map(|class| {
            class
                .iter()
                .map(|p| answer_tokens(p))
                .filter(|t| !t.is_empty())
                .collect::<Vec<_>>()
        })
        .filter(|c| !c.is_empty())
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct MockEntailment {
    aliases: Classes,
    antonyms: Classes,
}

impl MockEntailment {
    pub fn new(aliases: &PhraseTable, antonyms: &PhraseTable) -> Self {
        MockEntailment {
            aliases: compile(aliases),
            antonyms: compile(antonyms),
        }
    }

    pub fn with_aliases(aliases: &PhraseTable) -> Self {
        Self::new(aliases, &PhraseTable::default())
    }

    fn mentions<'c>(class: &'c [Vec<String>], tokens: &'c [String]) -> impl Iterator<Item = &'c Vec<String>> {
        class.iter().filter(move |phrase| contains_run(tokens, phrase))
    }

    pub fn verdict(&self, premise: &str, hypothesis: &str) -> EntailmentLabel {
        let p = answer_tokens(premise);
        let h = answer_tokens(hypothesis);
        if p == h {
            return EntailmentLabel::Entails;
        }
        let linked = self.aliases.iter().any(|class| {
            Self::mentions(class, &p).next().is_some() && Self::mentions(class, &h).next().is_some()
        });
        if linked {
            return EntailmentLabel::Entails;
        }
        let opposed = self.antonyms.iter().any(|class| {
            Self::mentions(class, &p).any(|a| Self::mentions(class, &h).any(|b| a != b))
        });
        if opposed {
            EntailmentLabel::Contradicts
        } else {
            EntailmentLabel::Neutral
        }
    }
}

impl Entailment for MockEntailment {
    fn entails(&self, question_text: &str, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict> {
        check_inputs(question_text, premise, hypothesis)?;
        Ok(EntailmentVerdict::certain(self.verdict(premise, hypothesis)))
    }
}
