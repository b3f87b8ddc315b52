//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use kelp_core::embedding::{EmbeddingProvider, EmbeddingVector};
use kelp_core::graph::{EntityId, KnowledgeGraph, Triple};
use kelp_core::llm::{MockLlm, MockRule};
use kelp_core::path::{aggregate_question_paths, KnowledgePath, PathSet};
use kelp_core::trainset::{QAItem, TaskKind};
use kelp_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn entity_name(i: usize) -> String {
    format!("e{i:02}")
}

pub fn relation_name(i: usize) -> String {
    format!("r{i:02}")
}

/// Random directed multigraph with fixed-width names; about one triple in ten is a self-loop.
pub fn random_graph<R: Rng>(rng: &mut R, max_entities: usize, max_triples: usize, max_relations: usize) -> KnowledgeGraph {
    let n_e = rng.gen_range(1..=max_entities);
    let n_r = rng.gen_range(1..=max_relations);
    let n_t = rng.gen_range(0..=max_triples);
    let mut rows = Vec::with_capacity(n_t);
    for _ in 0..n_t {
        let h = rng.gen_range(0..n_e);
        let t = if rng.gen_bool(0.1) { h } else { rng.gen_range(0..n_e) };
        rows.push((entity_name(h), relation_name(rng.gen_range(0..n_r)), entity_name(t)));
    }
    KnowledgeGraph::from_triples(rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())))
}

/// Every walk of length one or two from `e`, by scanning the raw triple list.
pub fn brute_force_walks(g: &KnowledgeGraph, e: EntityId) -> BTreeSet<Vec<Triple>> {
    let mut out = BTreeSet::new();
    for &t1 in g.triples() {
        if t1.head != e {
            continue;
        }
        out.insert(vec![t1]);
        for &t2 in g.triples() {
            if t2.head == t1.tail && t2 != t1 {
                out.insert(vec![t1, t2]);
            }
        }
    }
    out
}

pub fn walks_of(ps: &PathSet) -> BTreeSet<Vec<Triple>> {
    ps.paths().iter().map(|p| p.triples().collect()).collect()
}

/// Maps known texts to fixed vectors.
#[derive(Debug, Clone, Default)]
pub struct TableProvider {
    pub table: HashMap<String, Vec<f64>>,
}

impl TableProvider {
    /// Question maps to `[1, 0]`; each sentence to a unit-ish vector at the given cosine.
    pub fn with_scores(question: &str, scores: &[(String, f64)]) -> Self {
        let mut table = HashMap::new();
        table.insert(question.to_owned(), vec![1.0, 0.0]);
        for (s, c) in scores {
            table.insert(s.clone(), vec![*c, (1.0 - c * c).max(0.0).sqrt()]);
        }
        TableProvider { table }
    }
}

impl EmbeddingProvider for TableProvider {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(*t)
                    .cloned()
                    .map(EmbeddingVector)
                    .ok_or_else(|| Error::provider_fatal(format!("no vector for {t:?}")))
            })
            .collect()
    }

    fn dimension(&self) -> Option<usize> {
        Some(2)
    }
}

pub fn plain_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// A question, candidate paths and the provider that scores them.
pub struct SelectionInstance {
    pub graph: KnowledgeGraph,
    pub question: String,
    pub paths: PathSet,
    pub provider: TableProvider,
    pub k1: usize,
    pub k2: usize,
}

impl SelectionInstance {
    /// (path, sentence, score) in canonical order, scored without the library.
    pub fn oracle_items(&self) -> Vec<(KnowledgePath, String, f64)> {
        let q = &self.provider.table[&self.question];
        self.paths
            .iter()
            .map(|(p, s)| (*p, s.to_owned(), plain_cosine(q, &self.provider.table[s])))
            .collect()
    }
}

/// Random instance with at most `max_paths` paths; a third of instances use
/// coarse scores so that ties are common.
pub fn random_selection_instance<R: Rng>(rng: &mut R, max_paths: usize, score_lo: f64, score_hi: f64) -> SelectionInstance {
    let graph = random_graph(rng, 8, 14, 3);
    let n_q = rng.gen_range(1..=2);
    let entities: Vec<String> = (0..n_q)
        .map(|_| entity_name(rng.gen_range(0..graph.num_entities().max(1))))
        .collect();
    let (all, _) = aggregate_question_paths(&graph, &entities);
    let keep: BTreeSet<usize> = if all.len() > max_paths {
        let mut idx: Vec<usize> = (0..all.len()).collect();
        idx.shuffle(rng);
        idx.into_iter().take(max_paths).collect()
    } else {
        (0..all.len()).collect()
    };
    let mut counter = 0;
    let paths = all.filter(|_| {
        let k = keep.contains(&counter);
        counter += 1;
        k
    });
    let coarse = rng.gen_bool(1.0 / 3.0);
    let scores: Vec<(String, f64)> = paths
        .sentences()
        .iter()
        .map(|s| {
            let x = if coarse {
                let steps = 4;
                score_lo + (score_hi - score_lo) * rng.gen_range(0..=steps) as f64 / steps as f64
            } else {
                rng.gen_range(score_lo..=score_hi)
            };
            (s.clone(), x)
        })
        .collect();
    let question = "question".to_owned();
    SelectionInstance {
        provider: TableProvider::with_scores(&question, &scores),
        graph,
        question,
        paths,
        k1: rng.gen_range(1..=4),
        k2: rng.gen_range(1..=4),
    }
}

/// All `m`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < m - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, n, m, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, m, &mut Vec::with_capacity(m), &mut out);
    out
}

fn sum_desc(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| b.total_cmp(a));
    values.iter().sum()
}

/// Subset of size `min(m, values.len())` with the largest sum; the first
/// (lexicographically smallest) maximiser wins ties.
pub fn best_subset(values: &[f64], m: usize) -> Vec<usize> {
    let m = m.min(values.len());
    let mut best: Option<(f64, Vec<usize>)> = None;
    for combo in combinations(values.len(), m) {
        let total = sum_desc(combo.iter().map(|&i| values[i]).collect());
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, combo));
        }
    }
    best.map(|(_, c)| c).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSelection {
    pub selected: BTreeSet<Triple>,
    pub gamma: f64,
    pub paths: BTreeSet<KnowledgePath>,
}

/// Exhaustive reference for the coverage rules. `items` must be in canonical path order.
pub fn oracle_select(g: &KnowledgeGraph, items: &[(KnowledgePath, String, f64)], k1: usize, k2: usize) -> OracleSelection {
    let mut triples: Vec<Triple> = items
        .iter()
        .flat_map(|(p, _, _)| p.triples())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    triples.sort_by_key(|&t| g.surfaces(t));

    // Per triple: kept member indices and the best kept score.
    let groups: Vec<(Triple, Vec<usize>, f64)> = triples
        .iter()
        .map(|&t| {
            let members: Vec<usize> = (0..items.len()).filter(|&i| items[i].0.contains(t)).collect();
            let scores: Vec<f64> = members.iter().map(|&i| items[i].2).collect();
            let kept: Vec<usize> = best_subset(&scores, k1).into_iter().map(|j| members[j]).collect();
            let max = kept.iter().map(|&i| items[i].2).fold(f64::NEG_INFINITY, f64::max);
            (t, kept, max)
        })
        .collect();

    let maxes: Vec<f64> = groups.iter().map(|g| g.2).collect();
    let chosen = best_subset(&maxes, k2);
    let gamma = chosen.iter().map(|&i| groups[i].2).fold(f64::INFINITY, f64::min);
    let pooled: BTreeSet<usize> = chosen.iter().flat_map(|&i| groups[i].1.iter().copied()).collect();
    OracleSelection {
        selected: chosen.iter().map(|&i| groups[i].0).collect(),
        gamma,
        paths: pooled
            .into_iter()
            .filter(|&i| items[i].2 >= gamma)
            .map(|i| items[i].0)
            .collect(),
    }
}

/// A graph, items, and a mock that answers an item only when its gold triple is in context.
pub struct GoldTripletSetup {
    pub graph: KnowledgeGraph,
    pub items: Vec<QAItem>,
    /// Gold triple for items that need context; `None` for items answerable without it.
    pub gold: Vec<Option<Triple>>,
    pub llm: MockLlm,
}

pub fn gold_triplet_setup<R: Rng>(rng: &mut R) -> GoldTripletSetup {
    let graph = loop {
        let g = random_graph(rng, 12, 40, 4);
        if g.num_triples() > 0 {
            break g;
        }
    };
    let mut items = Vec::new();
    let mut gold = Vec::new();
    let mut rules = Vec::new();
    let n_items = rng.gen_range(1..=5);
    for i in 0..n_items {
        let tag = format!("[q{i}]");
        let answer = format!("gold{i}");
        let easy = rng.gen_bool(0.25);
        let e = graph.triples()[rng.gen_range(0..graph.num_triples())].head;
        let surface = graph.entity(e).to_owned();
        if easy {
            rules.push(MockRule::new("", answer.clone()).for_question(tag.clone()));
            gold.push(None);
        } else {
            let (ps, _) = aggregate_question_paths(&graph, &[surface.as_str()]);
            let candidates: BTreeSet<Triple> = ps.paths().iter().flat_map(|p| p.triples()).collect();
            let candidates: Vec<Triple> = candidates.into_iter().collect();
            let t = candidates[rng.gen_range(0..candidates.len())];
            let (h, r, tail) = graph.surfaces(t);
            rules.push(MockRule::new(format!("{h} {r} {tail}"), format!("It is {answer}.")).for_question(tag.clone()));
            gold.push(Some(t));
        }
        items.push(QAItem {
            id: format!("item{i}"),
            question: format!("{tag} what is related to {surface}"),
            entities: vec![surface],
            answer,
            task_kind: TaskKind::Qa,
        });
    }
    GoldTripletSetup {
        graph,
        items,
        gold,
        llm: MockLlm::with_rules(rules, "unknown"),
    }
}

/// Largest relative error between the library gradient and central differences
/// of the library loss, perturbing one weight at a time through the public API.
pub fn numeric_gradient_error(
    encoder: &kelp_core::encoder::LinearEncoder,
    pair: &kelp_core::encoder::TrainingPair,
    margin: f64,
    step: f64,
) -> f64 {
    use kelp_core::encoder::{loss_gradient, pair_loss, LinearEncoder};
    let analytic = loss_gradient(encoder, pair, margin);
    let loss_of = |enc: &LinearEncoder| {
        pair_loss(&enc.embed_text(&pair.question), &enc.embed_text(&pair.positive), &enc.embed_text(&pair.negative), margin).unwrap()
    };
    let mut worst: f64 = 0.0;
    for i in 0..encoder.dim() {
        for j in 0..encoder.hash_dim() {
            let mut plus = encoder.weights().clone();
            plus.set(i, j, plus.get(i, j) + step);
            let mut minus = encoder.weights().clone();
            minus.set(i, j, minus.get(i, j) - step);
            let numeric = (loss_of(&LinearEncoder::new(plus).unwrap()) - loss_of(&LinearEncoder::new(minus).unwrap())) / (2.0 * step);
            let a = analytic.get(i, j);
            let scale = a.abs().max(numeric.abs());
            if scale > 1e-9 {
                worst = worst.max((a - numeric).abs() / scale);
            }
        }
    }
    worst
}
