//! Question-type specific prompt templates.
//!
//! Templates carry two slots, `{context_str}` and `{query_str}`, filled in a
//! single left-to-right pass so that braces inside substituted text are
//! never re-expanded.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const CONTEXT_SLOT: &str = "{context_str}";
pub const QUERY_SLOT: &str = "{query_str}";

/// Line placed between retrieved chunks in the context slot.
pub const CONTEXT_SEPARATOR: &str = "\n---\n";

pub const MATHQ_TEMPLATE: &str = include_str!("../templates/mathq.txt");
pub const MCQ_TEMPLATE: &str = include_str!("../templates/mcq.txt");
pub const RQ_TEMPLATE: &str = include_str!("../templates/rq.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionType {
    #[serde(rename = "mathq", alias = "MathQ")]
    MathQ,
    #[serde(rename = "mcq", alias = "MCQ")]
    Mcq,
    #[serde(rename = "rq", alias = "RQ")]
    Rq,
}

impl QuestionType {
    pub const ALL: [QuestionType; 3] = [QuestionType::MathQ, QuestionType::Mcq, QuestionType::Rq];

    pub fn key(self) -> &'static str {
        match self {
            QuestionType::MathQ => "mathq",
            QuestionType::Mcq => "mcq",
            QuestionType::Rq => "rq",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            QuestionType::MathQ => "MathQ",
            QuestionType::Mcq => "MCQ",
            QuestionType::Rq => "RQ",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for QuestionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mathq" => Ok(QuestionType::MathQ),
            "mcq" => Ok(QuestionType::Mcq),
            "rq" => Ok(QuestionType::Rq),
            other => Err(format!("unknown question type `{other}` (expected mathq, mcq or rq)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub mathq: String,
    pub mcq: String,
    pub rq: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            mathq: MATHQ_TEMPLATE.to_owned(),
            mcq: MCQ_TEMPLATE.to_owned(),
            rq: RQ_TEMPLATE.to_owned(),
        }
    }
}

impl PromptTemplates {
    /// Loads `mathq.txt`, `mcq.txt` and `rq.txt` from `dir`; missing files
    /// fall back to the built-in defaults.
    pub fn from_dir(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str, default: &str| -> std::io::Result<String> {
            let path = dir.join(name);
            if path.exists() {
                fs::read_to_string(path)
            } else {
                Ok(default.to_owned())
            }
        };
        Ok(Self {
            mathq: read("mathq.txt", MATHQ_TEMPLATE)?,
            mcq: read("mcq.txt", MCQ_TEMPLATE)?,
            rq: read("rq.txt", RQ_TEMPLATE)?,
        })
    }

    pub fn template(&self, qtype: QuestionType) -> &str {
        match qtype {
            QuestionType::MathQ => &self.mathq,
            QuestionType::Mcq => &self.mcq,
            QuestionType::Rq => &self.rq,
        }
    }

    pub fn render(&self, qtype: QuestionType, context_str: &str, query_str: &str) -> String {
        fill_slots(self.template(qtype), context_str, query_str)
    }
}

pub fn render_prompt(qtype: QuestionType, context_str: &str, query_str: &str) -> String {
    PromptTemplates::default().render(qtype, context_str, query_str)
}

/// Joins chunk texts (already in descending score order) for the context slot.
pub fn context_string<'a>(chunks: impl IntoIterator<Item = &'a str>) -> String {
    chunks.into_iter().collect::<Vec<_>>().join(CONTEXT_SEPARATOR)
}

fn fill_slots(template: &str, context_str: &str, query_str: &str) -> String {
    let mut out = String::with_capacity(template.len() + context_str.len() + query_str.len());
    let mut rest = template;
    loop {
        let next = [(CONTEXT_SLOT, context_str), (QUERY_SLOT, query_str)]
            .into_iter()
            .filter_map(|(slot, value)| rest.find(slot).map(|at| (at, slot, value)))
            .min_by_key(|(at, _, _)| *at);
        match next {
            Some((at, slot, value)) => {
                out.push_str(&rest[..at]);
                out.push_str(value);
                rest = &rest[at + slot.len()..];
            }
            None => {
                out.push_str(rest);
                return out;
            }
        }
    }
}
