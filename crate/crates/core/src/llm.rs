//! Language-model provider contract and a deterministic rule-based mock.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{parse_prompt, ParsedPrompt};

/// Text completion backend.
pub trait LlmProvider: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

impl<L: LlmProvider + ?Sized> LlmProvider for &L {
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
}

impl<L: LlmProvider + ?Sized> LlmProvider for Box<L> {
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
}

/// One mock rule. Matches when the final context block contains
/// `context_contains` and, if set, the final question contains `question_contains`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub context_contains: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_contains: Option<String>,
    pub answer: String,
}

impl MockRule {
    pub fn new(context_contains: impl Into<String>, answer: impl Into<String>) -> Self {
        MockRule {
            context_contains: context_contains.into(),
            question_contains: None,
            answer: answer.into(),
        }
    }

    pub fn for_question(mut self, question_contains: impl Into<String>) -> Self {
        self.question_contains = Some(question_contains.into());
        self
    }

    fn matches(&self, prompt: &ParsedPrompt<'_>) -> bool {
        let context_ok = if self.context_contains.is_empty() {
            true
        } else {
            prompt.context.iter().any(|line| line.contains(&self.context_contains))
        };
        context_ok
            && self
                .question_contains
                .as_deref()
                .is_none_or(|q| prompt.question.contains(q))
    }
}

/// Rule table for [`MockLlm`]; also the JSON layout of mock spec files.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockLlmSpec {
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_answer: String,
}

impl MockLlmSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Answers from the first rule that matches the prompt's final context block,
/// or the default answer. Counts calls and keeps every prompt it was sent.
#[derive(Debug, Default)]
pub struct MockLlm {
    spec: MockLlmSpec,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl MockLlm {
    pub fn new(spec: MockLlmSpec) -> Self {
        MockLlm {
            spec,
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn with_rules(rules: Vec<MockRule>, default_answer: impl Into<String>) -> Self {
        Self::new(MockLlmSpec {
            rules,
            default_answer: default_answer.into(),
        })
    }

    pub fn spec(&self) -> &MockLlmSpec {
        &self.spec
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("mock prompt log poisoned").clone()
    }

    /// The answer the rules give for `prompt`, without recording a call.
    pub fn respond(&self, prompt: &str) -> String {
        let parsed = parse_prompt(prompt);
        self.spec
            .rules
            .iter()
            .find(|r| r.matches(&parsed))
            .map_or_else(|| self.spec.default_answer.clone(), |r| r.answer.clone())
    }
}

impl LlmProvider for MockLlm {
    fn complete(&self, prompt: &str) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts
            .lock()
            .expect("mock prompt log poisoned")
            .push(prompt.to_owned());
        Ok(self.respond(prompt))
    }
}
