use serde::{Deserialize, Serialize};

/// One-shot "Q: ... A:" prompt with an optional block of retrieved context
/// prepended, one document per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptTemplate {
    pub context_header: String,
    pub demo_question: String,
    pub demo_answer: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            context_header: "Context:".into(),
            demo_question: "What is the capital of France?".into(),
            demo_answer: "Paris".into(),
        }
    }
}

impl PromptTemplate {
    pub fn render(&self, question: &str, context_documents: &[String]) -> String {
        let mut out = String::new();
        if !context_documents.is_empty() {
            out.push_str(&self.context_header);
            out.push('\n');
            for doc in context_documents {
                out.push_str(&one_line(doc));
                out.push('\n');
            }
            out.push('\n');
        }
        if !self.demo_question.is_empty() {
            out.push_str(&format!(
                "Q: {} A: {}\n",
                one_line(&self.demo_question),
                one_line(&self.demo_answer)
            ));
        }
        out.push_str(&format!("Q: {} A:", one_line(question)));
        out
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
