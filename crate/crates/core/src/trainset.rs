//! Labelled path data built by probing a language model, and the pairs used to train the encoder.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::encoder::TrainingPair;
use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::llm::LlmProvider;
use crate::path::aggregate_question_paths;
use crate::prompt::{answer_with_context, parse_verdict, PromptBundle, CLAIM_PREAMBLE, QA_PREAMBLE};

pub const DEFAULT_PAIR_CAP: usize = 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    #[default]
    Qa,
    Claim,
}

impl TaskKind {
    pub fn preamble(self) -> &'static str {
        match self {
            TaskKind::Qa => QA_PREAMBLE,
            TaskKind::Claim => CLAIM_PREAMBLE,
        }
    }
}

/// One question (or claim) with its linked entities and gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub entities: Vec<String>,
    /// Gold answer; may be empty for selection-only runs.
    #[serde(default)]
    pub answer: String,
    #[serde(default)]
    pub task_kind: TaskKind,
}

pub fn load_items(path: impl AsRef<Path>) -> Result<Vec<QAItem>> {
    let path = path.as_ref();
    let items: Vec<QAItem> = crate::io::read_jsonl(path)?;
    for item in &items {
        if item.question.trim().is_empty() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line: 0,
                message: format!("item {:?} has an empty question", item.id),
            });
        }
    }
    Ok(items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*self == Label::Positive))
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(serde::de::Error::custom(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub question: String,
    pub path_sentence: String,
    pub label: Label,
}

fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .trim_end()
        .to_owned()
}

/// Normalised gold answer occurs inside the normalised prediction.
///
/// Normalisation lowercases, collapses whitespace and drops trailing
/// punctuation. A gold answer that normalises to nothing never matches.
pub fn answers_match(prediction: &str, gold: &str) -> bool {
    let gold = normalize(gold);
    !gold.is_empty() && normalize(prediction).contains(&gold)
}

/// Errors unless every item carries a gold answer.
pub fn require_answers(items: &[QAItem]) -> Result<()> {
    match items.iter().find(|i| i.answer.trim().is_empty()) {
        Some(i) => Err(Error::InvalidArgument(format!("item {:?} has no gold answer", i.id))),
        None => Ok(()),
    }
}

/// Task-aware correctness: claims compare parsed verdicts, questions use [`answers_match`].
pub fn is_correct(kind: TaskKind, prediction: &str, gold: &str) -> bool {
    match kind {
        TaskKind::Qa => answers_match(prediction, gold),
        TaskKind::Claim => match (parse_verdict(prediction), parse_verdict(gold)) {
            (Some(p), Some(g)) => p == g,
            _ => false,
        },
    }
}

fn bundle_for(item: &QAItem, context: Vec<String>) -> PromptBundle {
    PromptBundle::new(item.question.clone())
        .with_preamble(item.task_kind.preamble())
        .with_context(context)
}

/// Asks the model with `path_sentence` as the only context and labels the path by correctness.
pub fn probe_path<L: LlmProvider + ?Sized>(llm: &L, item: &QAItem, path_sentence: &str) -> Result<Label> {
    let reply = answer_with_context(llm, &bundle_for(item, vec![path_sentence.to_owned()]))?;
    Ok(if is_correct(item.task_kind, &reply, &item.answer) {
        Label::Positive
    } else {
        Label::Negative
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainsetConfig {
    /// Fraction of items screened, in (0, 1].
    pub sample_fraction: f64,
    pub seed: u64,
    /// Worker threads used for the probes of one question.
    pub jobs: usize,
}

impl Default for TrainsetConfig {
    fn default() -> Self {
        TrainsetConfig {
            sample_fraction: 1.0,
            seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TrainsetReport {
    pub screened: usize,
    pub answered_without_context: usize,
    pub failed_no_context: usize,
    pub probes: usize,
    pub positives: usize,
    pub negatives: usize,
    pub skipped_probes: usize,
    pub skipped_items: usize,
}

/// Indices of the items to screen, ascending: a seeded subsample of `⌈fraction·n⌉` items.
pub fn screening_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("sample fraction must be in (0, 1], got {fraction}")));
    }
    // The small slack keeps products like 0.7 * 10 from rounding up to 8.
    let take = (((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(take);
    idx.sort_unstable();
    Ok(idx)
}

fn probe_all<L: LlmProvider + ?Sized>(llm: &L, item: &QAItem, sentences: &[String], jobs: usize) -> Vec<Result<Label>> {
    if jobs <= 1 || sentences.len() <= 1 {
        return sentences.iter().map(|s| probe_path(llm, item, s)).collect();
    }
    let chunk = sentences.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = sentences
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|s| probe_path(llm, item, s)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("probe worker panicked"))
            .collect()
    })
}

/// Screens a subsample of items without context; for each item the model gets
/// wrong, every candidate path is probed alone and labelled by the outcome.
///
/// Samples come out in item order, then canonical path order, regardless of `jobs`.
/// Model failures skip the affected item or probe and are counted in the report.
pub fn build_training_set<L: LlmProvider + ?Sized>(
    llm: &L,
    g: &KnowledgeGraph,
    items: &[QAItem],
    config: &TrainsetConfig,
) -> Result<(Vec<LabeledSample>, TrainsetReport)> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("no items to build a training set from".into()));
    }
    require_answers(items)?;
    let mut report = TrainsetReport::default();
    let mut samples = Vec::new();
    for i in screening_indices(items.len(), config.sample_fraction, config.seed)? {
        let item = &items[i];
        report.screened += 1;
        let reply = match answer_with_context(llm, &bundle_for(item, Vec::new())) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("item {:?}: screening call failed, skipped: {e}", item.id);
                report.skipped_items += 1;
                continue;
            }
        };
        if is_correct(item.task_kind, &reply, &item.answer) {
            report.answered_without_context += 1;
            continue;
        }
        report.failed_no_context += 1;

        let (paths, _) = aggregate_question_paths(g, &item.entities);
        let results = probe_all(llm, item, paths.sentences(), config.jobs.max(1));
        for (sentence, result) in paths.sentences().iter().zip(results) {
            match result {
                Ok(label) => {
                    report.probes += 1;
                    match label {
                        Label::Positive => report.positives += 1,
                        Label::Negative => report.negatives += 1,
                    }
                    samples.push(LabeledSample {
                        question: item.question.clone(),
                        path_sentence: sentence.clone(),
                        label,
                    });
                }
                Err(e) => {
                    log::warn!("item {:?}: probe of {sentence:?} failed, skipped: {e}", item.id);
                    report.skipped_probes += 1;
                }
            }
        }
    }
    log::info!(
        "screened {} items, {} failed without context, {} probes ({} positive, {} negative)",
        report.screened,
        report.failed_no_context,
        report.probes,
        report.positives,
        report.negatives
    );
    Ok((samples, report))
}

/// Per question, every positive crossed with every negative in sample order;
/// questions with more than `cap` combinations keep a seeded subset of `cap`.
pub fn make_training_pairs(samples: &[LabeledSample], cap: usize, seed: u64) -> Result<Vec<TrainingPair>> {
    if cap == 0 {
        return Err(Error::InvalidArgument("pair cap must be positive".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut by_question: BTreeMap<&str, (Vec<&str>, Vec<&str>)> = BTreeMap::new();
    for s in samples {
        let entry = by_question.entry(&s.question).or_insert_with(|| {
            order.push(&s.question);
            Default::default()
        });
        match s.label {
            Label::Positive => entry.0.push(&s.path_sentence),
            Label::Negative => entry.1.push(&s.path_sentence),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for q in order {
        let (pos, neg) = &by_question[q];
        let total = pos.len() * neg.len();
        if total == 0 {
            continue;
        }
        let chosen: Vec<usize> = if total > cap {
            let mut idx = rand::seq::index::sample(&mut rng, total, cap).into_vec();
            idx.sort_unstable();
            idx
        } else {
            (0..total).collect()
        };
        for k in chosen {
            pairs.push(TrainingPair::new(q, pos[k / neg.len()], neg[k % neg.len()])?);
        }
    }
    Ok(pairs)
}
