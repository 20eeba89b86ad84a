//! Benchmark instance types, generation-output parsing, and prompt
//! templates.
//!
//! QA and dialogue instances carry a lifecycle label (`Unchanged`, `Changed`,
//! `New`, `Deleted`), evidence sentences, and the snapshot epoch they were
//! last validated against. Generation prompts live as versioned text assets
//! and are rendered by simple placeholder substitution.

pub mod generate;
pub mod maintain;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstanceLabel {
    Unchanged,
    Changed,
    New,
    Deleted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaInstance {
    pub id: String,
    pub article_id: String,
    pub label: InstanceLabel,
    pub question: String,
    pub answer: String,
    /// Present exactly when `label == Changed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub previous_answer: Option<String>,
    pub evidence_text: Vec<String>,
    /// Sentence indices in the current snapshot's article.
    pub evidence_indices: Vec<usize>,
    pub epoch: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Turn {
    pub user: String,
    pub expert: String,
    pub label: InstanceLabel,
    pub evidence_text: String,
    pub evidence_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DialogueInstance {
    pub id: String,
    pub article_id: String,
    pub epoch: String,
    pub turns: Vec<Turn>,
}

/// Inclusive sentence-index interval locating evidence in a paragraph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceBox {
    pub start_index: usize,
    pub end_index: usize,
}

impl EvidenceBox {
    pub fn new(start_index: usize, end_index: usize) -> Result<EvidenceBox> {
        if start_index > end_index {
            return Err(Error::Parameter(format!(
                "evidence box start {start_index} > end {end_index}"
            )));
        }
        Ok(EvidenceBox {
            start_index,
            end_index,
        })
    }
}

/// Extract the top-level `{...}` groups of a generation reply.
///
/// Inter-group noise is ignored (models emit surrounding prose); nested or
/// unbalanced braces and a wrong group count are malformed.
pub fn parse_curly_fields(text: &str, expected: usize) -> Result<Vec<String>> {
    let mut fields = Vec::new();
    let mut current: Option<String> = None;
    for c in text.chars() {
        match (c, current.as_mut()) {
            ('{', None) => current = Some(String::new()),
            ('{', Some(_)) => {
                return Err(Error::MalformedGeneration {
                    message: "nested opening brace".into(),
                    raw: text.to_string(),
                })
            }
            ('}', Some(buf)) => {
                fields.push(std::mem::take(buf));
                current = None;
            }
            ('}', None) => {
                return Err(Error::MalformedGeneration {
                    message: "unbalanced closing brace".into(),
                    raw: text.to_string(),
                })
            }
            (c, Some(buf)) => buf.push(c),
            (_, None) => {}
        }
    }
    if current.is_some() {
        return Err(Error::MalformedGeneration {
            message: "unclosed brace".into(),
            raw: text.to_string(),
        });
    }
    if fields.len() != expected {
        return Err(Error::MalformedGeneration {
            message: format!("expected {expected} fields, found {}", fields.len()),
            raw: text.to_string(),
        });
    }
    Ok(fields)
}

/// Prompt templates, embedded at build time.
pub mod prompts {
    pub const INITIAL_QA: &str = include_str!("../../assets/prompts/initial_qa.txt");
    pub const NEW_QA: &str = include_str!("../../assets/prompts/new_qa.txt");
    pub const NEW_QA_WITH_SOURCE: &str =
        include_str!("../../assets/prompts/new_qa_with_source.txt");
    pub const CHANGED_QA: &str = include_str!("../../assets/prompts/changed_qa.txt");
    pub const DIALOGUE: &str = include_str!("../../assets/prompts/dialogue.txt");

    /// Substitute `{name}` placeholders. Placeholders appearing in the
    /// template's format-example lines are left alone because they are never
    /// passed as keys.
    pub fn render(template: &str, fields: &[(&str, &str)]) -> String {
        let mut out = template.to_string();
        for (k, v) in fields {
            out = out.replace(&format!("{{{k}}}"), v);
        }
        out
    }
}

/// "i: text" lines for a slice of sentences, numbered from 0 locally.
pub fn indexed_sentence_list(sentences: &[Sentence]) -> String {
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{i}: {}", s.text))
        .collect::<Vec<_>>()
        .join("\n")
}
