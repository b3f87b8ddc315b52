//! Prompt layout, answering, and two-pass claim verification.
//!
//! Layout (one blank line between blocks, demonstrations first):
//!
//! ```text
//! <preamble>
//!
//! Context:
//! <demo path sentence per line, or None>
//! Question: <demo question>
//! Answer: <demo answer>
//!
//! Context:
//! <path sentence per line, or None>
//! Question: <question>
//! Answer:
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::tokenize;
use crate::error::{Error, Result};
use crate::llm::LlmProvider;

pub const QA_PREAMBLE: &str = "Answer the question. Use the context facts when they help.";
pub const CLAIM_PREAMBLE: &str = "Decide whether the claim is True or False. Use the context facts when they help.";

const EMPTY_CONTEXT: &str = "None";

/// A worked example placed before the real question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub question: String,
    #[serde(default)]
    pub context: Vec<String>,
    pub answer: String,
}

/// Reads a line-delimited JSON file of demonstrations.
pub fn load_demonstrations(path: impl AsRef<Path>) -> Result<Vec<Demonstration>> {
    crate::io::read_jsonl(path.as_ref())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptBundle {
    pub system_preamble: String,
    pub few_shot: Vec<Demonstration>,
    /// Path sentences in selection order.
    pub context: Vec<String>,
    pub question: String,
}

impl PromptBundle {
    pub fn new(question: impl Into<String>) -> Self {
        PromptBundle {
            system_preamble: QA_PREAMBLE.to_owned(),
            question: question.into(),
            ..Default::default()
        }
    }

    pub fn with_preamble(mut self, preamble: impl Into<String>) -> Self {
        self.system_preamble = preamble.into();
        self
    }

    pub fn with_context(mut self, context: Vec<String>) -> Self {
        self.context = context;
        self
    }

    pub fn with_few_shot(mut self, few_shot: Vec<Demonstration>) -> Self {
        self.few_shot = few_shot;
        self
    }

    pub fn without_context(&self) -> Self {
        PromptBundle {
            context: Vec::new(),
            ..self.clone()
        }
    }
}

fn push_block(out: &mut String, context: &[String], question: &str, answer: Option<&str>) {
    out.push_str("Context:\n");
    if context.is_empty() {
        out.push_str(EMPTY_CONTEXT);
        out.push('\n');
    }
    for line in context {
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("Question: ");
    out.push_str(question);
    out.push('\n');
    match answer {
        Some(a) => {
            out.push_str("Answer: ");
            out.push_str(a);
            out.push_str("\n\n");
        }
        None => out.push_str("Answer:"),
    }
}

pub fn assemble_prompt(bundle: &PromptBundle) -> String {
    let mut out = String::new();
    if !bundle.system_preamble.is_empty() {
        out.push_str(&bundle.system_preamble);
        out.push_str("\n\n");
    }
    for demo in &bundle.few_shot {
        push_block(&mut out, &demo.context, &demo.question, Some(&demo.answer));
    }
    push_block(&mut out, &bundle.context, &bundle.question, None);
    out
}

/// The final context block and question of an assembled prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt<'a> {
    pub context: Vec<&'a str>,
    pub question: &'a str,
}

/// Recovers the last block of a prompt built by [`assemble_prompt`].
/// Text in any other shape is treated as a bare question with no context.
pub fn parse_prompt(prompt: &str) -> ParsedPrompt<'_> {
    let start = match prompt.rfind("\nContext:\n") {
        Some(i) => i + 1,
        None if prompt.starts_with("Context:\n") => 0,
        None => {
            return ParsedPrompt {
                context: Vec::new(),
                question: prompt,
            }
        }
    };
    let mut context = Vec::new();
    let mut question = "";
    for line in prompt[start..].lines().skip(1) {
        if let Some(q) = line.strip_prefix("Question: ") {
            question = q;
            break;
        }
        context.push(line);
    }
    if context == [EMPTY_CONTEXT] {
        context.clear();
    }
    ParsedPrompt { context, question }
}

/// One completion on the assembled prompt; the raw reply is returned.
pub fn answer_with_context<L: LlmProvider + ?Sized>(llm: &L, bundle: &PromptBundle) -> Result<String> {
    let prompt = assemble_prompt(bundle);
    let answer = llm.complete(&prompt)?;
    log::debug!("question {:?} -> answer {:?}", bundle.question, answer);
    Ok(answer)
}

/// First `true`/`false` token in the reply, case-insensitive.
pub fn parse_verdict(reply: &str) -> Option<bool> {
    tokenize(reply).find_map(|tok| match tok.as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimVerdict {
    pub verdict: bool,
    pub calls: usize,
    pub replies: Vec<String>,
    pub warnings: Vec<String>,
}

/// Asks with context; a `False` (or unreadable) first verdict is re-asked
/// once with the context removed, and that second answer is final.
pub fn verify_claim<L: LlmProvider + ?Sized>(llm: &L, bundle: &PromptBundle) -> Result<ClaimVerdict> {
    let mut warnings = Vec::new();
    let first = answer_with_context(llm, bundle)?;
    match parse_verdict(&first) {
        Some(true) => {
            return Ok(ClaimVerdict {
                verdict: true,
                calls: 1,
                replies: vec![first],
                warnings,
            })
        }
        Some(false) => {}
        None => warnings.push(format!("could not read a verdict from {first:?}")),
    }
    let second = answer_with_context(llm, &bundle.without_context())?;
    let verdict = match parse_verdict(&second) {
        Some(v) => v,
        None => {
            warnings.push(format!("could not read a verdict from {second:?}"));
            false
        }
    };
    for w in &warnings {
        log::warn!("claim {:?}: {w}", bundle.question);
    }
    Ok(ClaimVerdict {
        verdict,
        calls: 2,
        replies: vec![first, second],
        warnings,
    })
}

pub fn verdict_label(verdict: bool) -> &'static str {
    if verdict {
        "True"
    } else {
        "False"
    }
}

/// Rejects few-shot counts other than the conventional 0, 4, 8 or 12.
pub fn check_shot_count(shots: usize) -> Result<()> {
    if matches!(shots, 0 | 4 | 8 | 12) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("shots must be one of 0, 4, 8, 12; got {shots}")))
    }
}
