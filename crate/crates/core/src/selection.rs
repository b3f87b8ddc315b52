//! Coverage-rule path selection.
//!
//! Scored candidate paths are grouped by the triples they contain. Each group
//! keeps its `k1` best members, the `k2` groups with the highest best score are
//! selected, their members are pooled, and the pool is cut at
//! `gamma = min over selected groups of the group's best score`.
//!
//! Ties are broken the same way everywhere: score descending, then sentence
//! ascending, then triple ids. Groups tie on their `(head, relation, tail)`
//! surfaces.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, RelationId, Triple};
use crate::path::{relation_sentence, KnowledgePath, PathSet};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPath {
    pub path: KnowledgePath,
    pub sentence: String,
    pub score: f64,
}

/// Canonical member order: score descending, sentence ascending, triple ids.
pub fn rank_order(a: &ScoredPath, b: &ScoredPath) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.sentence.cmp(&b.sentence))
        .then_with(|| a.path.cmp(&b.path))
}

/// Paths sharing one triple, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGroup {
    pub triplet: Triple,
    pub members: Vec<ScoredPath>,
}

impl TripletGroup {
    pub fn max_score(&self) -> f64 {
        self.members.first().map_or(f64::NEG_INFINITY, |m| m.score)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k1: usize,
    pub k2: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { k1: 4, k2: 4 }
    }
}

impl SelectionConfig {
    pub fn new(k1: usize, k2: usize) -> Result<Self> {
        let config = SelectionConfig { k1, k2 };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "k1 and k2 must be >= 1, got k1={} k2={}",
                self.k1, self.k2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Selected sharing triples, best group first.
    pub selected_triplets: Vec<Triple>,
    /// Score cut-off; `+inf` when nothing was selected.
    pub gamma: f64,
    /// Final context paths in rank order.
    pub paths: Vec<ScoredPath>,
    /// Every group after the per-group `k1` cap, ordered by triple surfaces.
    pub groups: Vec<TripletGroup>,
    /// Union of the selected groups before the `gamma` cut, in rank order.
    pub aggregate: Vec<ScoredPath>,
}

impl SelectionResult {
    pub fn empty() -> Self {
        SelectionResult {
            selected_triplets: Vec::new(),
            gamma: f64::INFINITY,
            paths: Vec::new(),
            groups: Vec::new(),
            aggregate: Vec::new(),
        }
    }

    pub fn sentences(&self) -> Vec<&str> {
        self.paths.iter().map(|p| p.sentence.as_str()).collect()
    }

    pub fn to_record(&self, g: &KnowledgeGraph, id: &str) -> SelectionRecord {
        SelectionRecord {
            id: id.to_owned(),
            gamma: self.gamma.is_finite().then_some(self.gamma),
            selected_triplets: self.selected_triplets.iter().map(|&t| g.triple_strings(t)).collect(),
            paths: self
                .paths
                .iter()
                .map(|p| PathRecord {
                    sentence: p.sentence.clone(),
                    score: p.score,
                    triples: p.path.triples().map(|t| g.triple_strings(t)).collect(),
                })
                .collect(),
        }
    }
}

/// One line of the selection output file. `gamma` is `null` when nothing was selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub id: String,
    pub gamma: Option<f64>,
    pub selected_triplets: Vec<[String; 3]>,
    pub paths: Vec<PathRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub sentence: String,
    pub score: f64,
    pub triples: Vec<[String; 3]>,
}

/// Scores `texts` against `question` with a single provider call.
fn score_texts<P: EmbeddingProvider + ?Sized>(provider: &P, question: &str, texts: &[&str]) -> Result<Vec<f64>> {
    let mut batch = Vec::with_capacity(texts.len() + 1);
    batch.push(question);
    batch.extend_from_slice(texts);
    let vectors = provider.embed_batch(&batch)?;
    if vectors.len() != batch.len() {
        return Err(Error::provider_fatal(format!(
            "provider returned {} vectors for {} texts",
            vectors.len(),
            batch.len()
        )));
    }
    let (q, rest) = vectors.split_first().expect("batch is non-empty");
    rest.iter()
        .map(|v| {
            cosine(q.as_slice(), v.as_slice()).map_err(|_| {
                Error::provider_fatal(format!("provider returned vectors of dimension {} and {}", q.dim(), v.dim()))
            })
        })
        .collect()
}

/// Cosine between the question and each path sentence, in path-set order.
pub fn score_paths<P: EmbeddingProvider + ?Sized>(provider: &P, question: &str, ps: &PathSet) -> Result<Vec<ScoredPath>> {
    if ps.is_empty() {
        return Ok(Vec::new());
    }
    let sentences: Vec<&str> = ps.sentences().iter().map(String::as_str).collect();
    let scores = score_texts(provider, question, &sentences)?;
    Ok(ps
        .iter()
        .zip(scores)
        .map(|((path, sentence), score)| ScoredPath {
            path: *path,
            sentence: sentence.to_owned(),
            score,
        })
        .collect())
}

/// One group per distinct triple, holding every path that contains it.
pub fn group_by_triplet(g: &KnowledgeGraph, scored: &[ScoredPath]) -> Vec<TripletGroup> {
    let mut by_triple: HashMap<Triple, Vec<ScoredPath>> = HashMap::new();
    for sp in scored {
        for t in sp.path.triples() {
            by_triple.entry(t).or_default().push(sp.clone());
        }
    }
    let mut groups: Vec<TripletGroup> = by_triple
        .into_iter()
        .map(|(triplet, mut members)| {
            members.sort_by(rank_order);
            members.dedup_by(|a, b| a.path == b.path);
            TripletGroup { triplet, members }
        })
        .collect();
    groups.sort_by(|a, b| g.surfaces(a.triplet).cmp(&g.surfaces(b.triplet)));
    groups
}

/// Keeps the `k1` best members of each group; smaller groups are left whole.
pub fn top_k1_per_group(mut groups: Vec<TripletGroup>, k1: usize) -> Vec<TripletGroup> {
    for group in &mut groups {
        group.members.truncate(k1);
    }
    groups
}

/// The `min(k2, groups)` triples whose groups have the highest best score.
pub fn select_top_groups(g: &KnowledgeGraph, groups: &[TripletGroup], k2: usize) -> Vec<Triple> {
    let mut order: Vec<&TripletGroup> = groups.iter().filter(|gr| !gr.members.is_empty()).collect();
    order.sort_by(|a, b| {
        b.max_score()
            .total_cmp(&a.max_score())
            .then_with(|| g.surfaces(a.triplet).cmp(&g.surfaces(b.triplet)))
    });
    order.into_iter().take(k2).map(|gr| gr.triplet).collect()
}

fn find_group(groups: &[TripletGroup], t: Triple) -> Option<&TripletGroup> {
    groups.iter().find(|gr| gr.triplet == t)
}

/// Union of the members of the selected groups, each path once, in rank order.
pub fn aggregate_selected(selected: &[Triple], groups: &[TripletGroup]) -> Vec<ScoredPath> {
    let mut seen = HashSet::new();
    let mut pooled: Vec<ScoredPath> = selected
        .iter()
        .filter_map(|&t| find_group(groups, t))
        .flat_map(|gr| gr.members.iter())
        .filter(|m| seen.insert(m.path))
        .cloned()
        .collect();
    pooled.sort_by(rank_order);
    pooled
}

/// Smallest group-best score among the selected groups; `+inf` if none.
pub fn compute_threshold(selected: &[Triple], groups: &[TripletGroup]) -> f64 {
    selected
        .iter()
        .filter_map(|&t| find_group(groups, t))
        .map(TripletGroup::max_score)
        .fold(f64::INFINITY, f64::min)
}

/// Paths scoring at least `gamma`, in rank order.
pub fn finalize(aggregate: &[ScoredPath], gamma: f64) -> Vec<ScoredPath> {
    let mut kept: Vec<ScoredPath> = aggregate.iter().filter(|p| p.score >= gamma).cloned().collect();
    kept.sort_by(rank_order);
    kept
}

/// Runs the coverage rules on already-scored paths.
pub fn select_scored(g: &KnowledgeGraph, scored: &[ScoredPath], config: &SelectionConfig) -> Result<SelectionResult> {
    config.validate()?;
    if scored.is_empty() {
        return Ok(SelectionResult::empty());
    }
    let groups = top_k1_per_group(group_by_triplet(g, scored), config.k1);
    let selected = select_top_groups(g, &groups, config.k2);
    let aggregate = aggregate_selected(&selected, &groups);
    let gamma = compute_threshold(&selected, &groups);
    let paths = finalize(&aggregate, gamma);
    Ok(SelectionResult {
        selected_triplets: selected,
        gamma,
        paths,
        groups,
        aggregate,
    })
}

/// Scores every candidate with `provider` and applies the coverage rules.
pub fn select_paths<P: EmbeddingProvider + ?Sized>(
    g: &KnowledgeGraph,
    question: &str,
    ps: &PathSet,
    provider: &P,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    config.validate()?;
    let scored = score_paths(provider, question, ps)?;
    select_scored(g, &scored, config)
}

/// Relation signatures that survive the first ranking stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSignature {
    pub relations: Vec<RelationId>,
    pub sentence: String,
    pub score: f64,
}

/// Ranks the distinct relation signatures of `ps` with `relation_encoder` and
/// keeps the best `k_rel` (ties by relation sentence).
pub fn rank_relation_signatures<P: EmbeddingProvider + ?Sized>(
    g: &KnowledgeGraph,
    question: &str,
    ps: &PathSet,
    relation_encoder: &P,
    k_rel: usize,
) -> Result<Vec<RankedSignature>> {
    if k_rel == 0 {
        return Err(Error::InvalidArgument("k_rel must be >= 1".into()));
    }
    let mut distinct: BTreeMap<Vec<RelationId>, String> = BTreeMap::new();
    for p in ps.paths() {
        distinct
            .entry(p.relation_signature())
            .or_insert_with(|| relation_sentence(g, p));
    }
    if distinct.is_empty() {
        return Ok(Vec::new());
    }
    let sentences: Vec<&str> = distinct.values().map(String::as_str).collect();
    let scores = score_texts(relation_encoder, question, &sentences)?;
    let mut ranked: Vec<RankedSignature> = distinct
        .into_iter()
        .zip(scores)
        .map(|((relations, sentence), score)| RankedSignature {
            relations,
            sentence,
            score,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.sentence.cmp(&b.sentence))
            .then_with(|| a.relations.cmp(&b.relations))
    });
    ranked.truncate(k_rel);
    Ok(ranked)
}

/// Two-stage selection: relation-only sentences are ranked with
/// `relation_encoder`, then paths whose signature survived go through
/// [`select_paths`] with `path_encoder`.
pub fn relation_only_select<P, R>(
    g: &KnowledgeGraph,
    question: &str,
    ps: &PathSet,
    path_encoder: &P,
    relation_encoder: &R,
    config: &SelectionConfig,
    k_rel: usize,
) -> Result<SelectionResult>
where
    P: EmbeddingProvider + ?Sized,
    R: EmbeddingProvider + ?Sized,
{
    config.validate()?;
    let kept = rank_relation_signatures(g, question, ps, relation_encoder, k_rel)?;
    let keep: HashSet<Vec<RelationId>> = kept.into_iter().map(|s| s.relations).collect();
    let restricted = ps.filter(|p| keep.contains(&p.relation_signature()));
    log::debug!("relation-only ranking kept {} of {} paths", restricted.len(), ps.len());
    select_paths(g, question, &restricted, path_encoder, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingVector, HashedBagProvider};
    use crate::path::{aggregate_question_paths, path_sentence};

    fn chain() -> KnowledgeGraph {
        KnowledgeGraph::from_triples([("a", "r", "b"), ("b", "s", "c"), ("a", "t", "d")])
    }

    fn tr(g: &KnowledgeGraph, h: &str, r: &str, t: &str) -> Triple {
        Triple::new(
            g.lookup_entity(h).unwrap(),
            g.lookup_relation(r).unwrap(),
            g.lookup_entity(t).unwrap(),
        )
    }

    fn scored(g: &KnowledgeGraph, p: KnowledgePath, score: f64) -> ScoredPath {
        ScoredPath {
            sentence: path_sentence(g, &p),
            path: p,
            score,
        }
    }

    fn group(t: Triple, scores: &[(&str, f64)]) -> TripletGroup {
        // Synthetic members: only sentence and score matter to the rules.
        let p = KnowledgePath::one_hop(t);
        let mut members: Vec<ScoredPath> = scores
            .iter()
            .map(|&(s, score)| ScoredPath {
                path: p,
                sentence: s.to_owned(),
                score,
            })
            .collect();
        members.sort_by(rank_order);
        TripletGroup { triplet: t, members }
    }

    #[test]
    fn grouping_by_containment() {
        let g = chain();
        let t1 = tr(&g, "a", "r", "b");
        let t2 = tr(&g, "b", "s", "c");
        let two = KnowledgePath::two_hop(t1, t2).unwrap();

        let groups = group_by_triplet(&g, &[scored(&g, two, 0.5)]);
        assert_eq!(groups.len(), 2);
        assert!(groups.iter().all(|gr| gr.members.len() == 1));

        let groups = group_by_triplet(&g, &[scored(&g, KnowledgePath::one_hop(t1), 0.2), scored(&g, two, 0.5)]);
        let sizes: Vec<(Triple, usize)> = groups.iter().map(|gr| (gr.triplet, gr.members.len())).collect();
        assert_eq!(sizes, vec![(t1, 2), (t2, 1)]);

        assert!(group_by_triplet(&g, &[]).is_empty());
    }

    #[test]
    fn k1_truncation() {
        let g = chain();
        let t = tr(&g, "a", "r", "b");
        let kept = top_k1_per_group(vec![group(t, &[("x", 0.7), ("y", 0.9), ("z", 0.8)])], 2);
        let scores: Vec<f64> = kept[0].members.iter().map(|m| m.score).collect();
        assert_eq!(scores, vec![0.9, 0.8]);

        let kept = top_k1_per_group(vec![group(t, &[("x", 0.7)])], 4);
        assert_eq!(kept[0].members.len(), 1);

        let kept = top_k1_per_group(vec![group(t, &[("b...", 0.5), ("a...", 0.5)])], 1);
        assert_eq!(kept[0].members[0].sentence, "a...");
    }

    #[test]
    fn k2_selection_and_threshold() {
        let g = chain();
        let t1 = tr(&g, "a", "r", "b");
        let t2 = tr(&g, "b", "s", "c");
        let t3 = tr(&g, "a", "t", "d");
        let groups = vec![
            group(t1, &[("p", 0.9)]),
            group(t2, &[("q", 0.8)]),
            group(t3, &[("r", 0.5)]),
        ];
        assert_eq!(select_top_groups(&g, &groups, 2), vec![t1, t2]);
        assert_eq!(select_top_groups(&g, &groups, 10).len(), 3);

        let equal = vec![
            group(t3, &[("p", 0.5)]),
            group(t2, &[("q", 0.5)]),
            group(t1, &[("r", 0.5)]),
        ];
        // Surface order: (a,r,b) < (a,t,d) < (b,s,c).
        assert_eq!(select_top_groups(&g, &equal, 2), vec![t1, t3]);
        assert_eq!(compute_threshold(&[t1, t3], &equal), 0.5);

        let two = vec![group(t1, &[("p", 0.9)]), group(t2, &[("q", 0.6)])];
        assert_eq!(compute_threshold(&[t1, t2], &two), 0.6);
        assert_eq!(compute_threshold(&[t2], &two), 0.6);
        assert_eq!(compute_threshold(&[], &two), f64::INFINITY);
    }

    #[test]
    fn aggregation_deduplicates_shared_paths() {
        let g = chain();
        let t1 = tr(&g, "a", "r", "b");
        let t2 = tr(&g, "b", "s", "c");
        let t3 = tr(&g, "a", "t", "d");
        let two = scored(&g, KnowledgePath::two_hop(t1, t2).unwrap(), 0.7);
        let p1 = scored(&g, KnowledgePath::one_hop(t1), 0.9);
        let p3 = scored(&g, KnowledgePath::one_hop(t3), 0.1);
        let groups = group_by_triplet(&g, &[two.clone(), p1.clone(), p3.clone()]);

        let pooled = aggregate_selected(&[t1, t2], &groups);
        assert_eq!(pooled, vec![p1.clone(), two]);
        assert!(aggregate_selected(&[], &groups).is_empty());
        assert_eq!(aggregate_selected(&[t3], &groups), vec![p3]);
    }

    #[test]
    fn finalize_keeps_scores_at_or_above_gamma() {
        let g = chain();
        let p = KnowledgePath::one_hop(tr(&g, "a", "r", "b"));
        let mk = |s: &str, score| ScoredPath {
            path: p,
            sentence: s.into(),
            score,
        };
        let pool = vec![mk("a", 0.9), mk("b", 0.62), mk("c", 0.55)];
        let kept: Vec<f64> = finalize(&pool, 0.6).iter().map(|p| p.score).collect();
        assert_eq!(kept, vec![0.9, 0.62]);
        assert_eq!(finalize(&pool, 0.62).len(), 2);
        assert!(finalize(&pool, f64::INFINITY).is_empty());
    }

    #[test]
    fn empty_path_set() {
        let g = chain();
        let r = select_paths(&g, "q", &PathSet::default(), &HashedBagProvider::default(), &SelectionConfig::default()).unwrap();
        assert_eq!(r, SelectionResult::empty());
        assert!(r.selected_triplets.is_empty());
        let rec = r.to_record(&g, "x");
        assert_eq!(serde_json::to_string(&rec).unwrap(), r#"{"id":"x","gamma":null,"selected_triplets":[],"paths":[]}"#);
    }

    #[test]
    fn k1_k2_one_picks_the_single_best_path() {
        let g = chain();
        let t1 = tr(&g, "a", "r", "b");
        let t2 = tr(&g, "b", "s", "c");
        let t3 = tr(&g, "a", "t", "d");
        let paths = [
            scored(&g, KnowledgePath::one_hop(t1), 0.3),
            scored(&g, KnowledgePath::two_hop(t1, t2).unwrap(), 0.8),
            scored(&g, KnowledgePath::one_hop(t3), 0.5),
        ];
        let r = select_scored(&g, &paths, &SelectionConfig::new(1, 1).unwrap()).unwrap();
        assert_eq!(r.paths, vec![paths[1].clone()]);
        assert_eq!(r.gamma, 0.8);
    }

    #[test]
    fn hashed_scores_prefer_question_tokens() {
        let g = crate::path::tests_support::japan();
        let (ps, _) = aggregate_question_paths(&g, &["japan", "tokyo"]);
        let question = "which dog breed comes from japan";
        let scored = score_paths(&HashedBagProvider::default(), question, &ps).unwrap();
        assert_eq!(scored.len(), 5);
        let q_tokens: Vec<String> = crate::embedding::tokenize(question).collect();
        let (with, without): (Vec<&ScoredPath>, Vec<&ScoredPath>) = scored
            .iter()
            .partition(|sp| crate::embedding::tokenize(&sp.sentence).any(|t| q_tokens.contains(&t)));
        assert_eq!(without.len(), 1);
        assert_eq!(without[0].sentence, "tokyo famous food sushi.");
        let floor = without.iter().map(|s| s.score).fold(f64::MIN, f64::max);
        assert!(with.iter().all(|s| s.score > floor));
    }

    struct Fixed(Vec<(String, Vec<f64>)>);

    impl EmbeddingProvider for Fixed {
        fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
            Ok(texts
                .iter()
                .map(|t| {
                    let v = self.0.iter().find(|(k, _)| k == t).map(|(_, v)| v.clone()).unwrap_or(vec![0.0, 0.0]);
                    EmbeddingVector(v)
                })
                .collect())
        }
        fn dimension(&self) -> Option<usize> {
            Some(2)
        }
    }

    #[test]
    fn relation_only_restricts_stage_two() {
        let g = KnowledgeGraph::from_triples([("a", "capital", "b"), ("a", "currency", "c"), ("a", "capital", "d")]);
        let (ps, _) = aggregate_question_paths(&g, &["a"]);
        let rel = Fixed(vec![
            ("q".into(), vec![1.0, 0.0]),
            ("capital.".into(), vec![0.9, (1.0f64 - 0.81).sqrt()]),
            ("currency.".into(), vec![0.1, (1.0f64 - 0.01).sqrt()]),
        ]);
        let provider = HashedBagProvider::default();
        let kept = rank_relation_signatures(&g, "q", &ps, &rel, 1).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].sentence, "capital.");

        let r = relation_only_select(&g, "q", &ps, &provider, &rel, &SelectionConfig::default(), 1).unwrap();
        assert!(r.paths.iter().all(|p| g.relation(p.path.triples().next().unwrap().relation) == "capital"));
        assert!(!r.paths.is_empty());

        let full = select_paths(&g, "q", &ps, &provider, &SelectionConfig::default()).unwrap();
        let same = relation_only_select(&g, "q", &ps, &provider, &rel, &SelectionConfig::default(), 2).unwrap();
        assert_eq!(full, same);

        let empty = relation_only_select(&g, "q", &PathSet::default(), &provider, &rel, &SelectionConfig::default(), 1).unwrap();
        assert_eq!(empty, SelectionResult::empty());
        assert!(rank_relation_signatures(&g, "q", &ps, &rel, 0).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(SelectionConfig::new(0, 1).is_err());
        assert!(SelectionConfig::new(1, 0).is_err());
    }
}
