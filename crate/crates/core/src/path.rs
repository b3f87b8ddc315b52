//! Candidate path enumeration around question entities and sentence rendering.

use std::collections::HashSet;

use crate::error::Result;
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple};

/// A 1-hop or 2-hop walk starting at a question entity.
///
/// For two hops the second triple starts where the first ends and the two
/// triples differ. Derived ordering compares triple ids, which is the
/// tie-breaker used after sentence order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KnowledgePath {
    first: Triple,
    second: Option<Triple>,
}

impl KnowledgePath {
    pub fn one_hop(t: Triple) -> Self {
        KnowledgePath {
            first: t,
            second: None,
        }
    }

    /// Returns `None` unless `second` continues `first` and differs from it.
    pub fn two_hop(first: Triple, second: Triple) -> Option<Self> {
        (first.tail == second.head && first != second).then_some(KnowledgePath {
            first,
            second: Some(second),
        })
    }

    pub fn start(&self) -> EntityId {
        self.first.head
    }

    pub fn len(&self) -> usize {
        1 + usize::from(self.second.is_some())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        std::iter::once(self.first).chain(self.second)
    }

    pub fn contains(&self, t: Triple) -> bool {
        self.first == t || self.second == Some(t)
    }

    /// Relation ids along the path; the key for relation-only ranking.
    pub fn relation_signature(&self) -> Vec<RelationId> {
        self.triples().map(|t| t.relation).collect()
    }
}

fn render(surface: &str) -> String {
    surface.replace('_', " ")
}

/// `"h r t."` or `"h1 r1 t1, h2 r2 t2."` with underscores shown as spaces.
pub fn path_sentence(g: &KnowledgeGraph, p: &KnowledgePath) -> String {
    let parts: Vec<String> = p
        .triples()
        .map(|t| {
            let (h, r, tail) = g.surfaces(t);
            format!("{} {} {}", render(h), render(r), render(tail))
        })
        .collect();
    format!("{}.", parts.join(", "))
}

/// `"r."` or `"r1, r2."`.
pub fn relation_sentence(g: &KnowledgeGraph, p: &KnowledgePath) -> String {
    let parts: Vec<String> = p.triples().map(|t| render(g.relation(t.relation))).collect();
    format!("{}.", parts.join(", "))
}

/// Deduplicated paths in canonical order: sentence ascending, then triple ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PathSet {
    paths: Vec<KnowledgePath>,
    sentences: Vec<String>,
}

impl PathSet {
    pub fn new(g: &KnowledgeGraph, paths: impl IntoIterator<Item = KnowledgePath>) -> Self {
        let mut seen = HashSet::new();
        let mut entries: Vec<(String, KnowledgePath)> = paths
            .into_iter()
            .filter(|p| seen.insert(*p))
            .map(|p| (path_sentence(g, &p), p))
            .collect();
        entries.sort();
        let (sentences, paths) = entries.into_iter().unzip();
        PathSet { paths, sentences }
    }

    pub fn paths(&self) -> &[KnowledgePath] {
        &self.paths
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn iter(&self) -> impl Iterator<Item = (&KnowledgePath, &str)> {
        self.paths.iter().zip(self.sentences.iter().map(String::as_str))
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Keeps the paths accepted by `keep`, preserving canonical order.
    pub fn filter(&self, mut keep: impl FnMut(&KnowledgePath) -> bool) -> PathSet {
        let (paths, sentences) = self
            .paths
            .iter()
            .zip(&self.sentences)
            .filter(|(p, _)| keep(p))
            .map(|(p, s)| (*p, s.clone()))
            .unzip();
        PathSet { paths, sentences }
    }
}

/// All 1-hop and 2-hop outgoing walks from `e`, except walks that repeat a triple.
pub fn extract_paths(g: &KnowledgeGraph, e: EntityId) -> Result<PathSet> {
    let mut paths = Vec::new();
    for &(r1, o1) in g.neighbors_out(e)? {
        let first = Triple::new(e, r1, o1);
        paths.push(KnowledgePath::one_hop(first));
        for &(r2, o2) in g.neighbors_out(o1)? {
            if let Some(p) = KnowledgePath::two_hop(first, Triple::new(o1, r2, o2)) {
                paths.push(p);
            }
        }
    }
    Ok(PathSet::new(g, paths))
}

/// Union of [`extract_paths`] over the resolvable surfaces.
///
/// Surfaces missing from the graph are skipped and returned as the second element.
pub fn aggregate_question_paths<S: AsRef<str>>(
    g: &KnowledgeGraph,
    entity_surfaces: &[S],
) -> (PathSet, Vec<String>) {
    let mut unresolved = Vec::new();
    let mut all = Vec::new();
    for surface in entity_surfaces {
        let surface = surface.as_ref();
        match g.lookup_entity(surface) {
            Some(e) => {
                let set = extract_paths(g, e).expect("looked-up id is valid");
                all.extend_from_slice(set.paths());
            }
            None => {
                log::warn!("entity {surface:?} not found in graph");
                unresolved.push(surface.to_owned());
            }
        }
    }
    (PathSet::new(g, all), unresolved)
}
