//! Interned, immutable knowledge graph with an outgoing adjacency index.
//!
//! Triples are read from a tab-separated file (`head<TAB>relation<TAB>tail`).
//! Entity and relation surfaces are interned in first-seen order, so loading
//! the same file twice yields identical ids. Traversal is directed: only
//! outgoing edges are indexed.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A `(head, relation, tail)` fact. Ordering follows the numeric ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

/// Bijection between non-empty surfaces and dense ids starting at 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    ids: HashMap<String, u32>,
    surfaces: Vec<String>,
}

impl Interner {
    fn intern(&mut self, surface: &str) -> u32 {
        if let Some(&id) = self.ids.get(surface) {
            return id;
        }
        let id = u32::try_from(self.surfaces.len()).expect("more than u32::MAX symbols");
        self.surfaces.push(surface.to_owned());
        self.ids.insert(surface.to_owned(), id);
        id
    }

    pub fn get(&self, surface: &str) -> Option<u32> {
        self.ids.get(surface).copied()
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    /// Surfaces in id order.
    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }
}

/// A row of the triple file that was skipped during loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowWarning {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RowWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    triples: Vec<Triple>,
    adjacency: Vec<Vec<(RelationId, EntityId)>>,
}

#[derive(Default)]
struct GraphBuilder {
    entities: Interner,
    relations: Interner,
    triples: Vec<Triple>,
    seen: HashSet<Triple>,
}

impl GraphBuilder {
    fn add(&mut self, head: &str, relation: &str, tail: &str) {
        let triple = Triple::new(
            EntityId(self.entities.intern(head)),
            RelationId(self.relations.intern(relation)),
            EntityId(self.entities.intern(tail)),
        );
        if self.seen.insert(triple) {
            self.triples.push(triple);
        }
    }

    fn finish(self) -> KnowledgeGraph {
        let mut adjacency = vec![Vec::new(); self.entities.len()];
        for t in &self.triples {
            adjacency[t.head.index()].push((t.relation, t.tail));
        }
        let entities = &self.entities;
        let relations = &self.relations;
        for edges in &mut adjacency {
            edges.sort_by(|a, b| {
                let ka = (relations.surfaces[a.0.index()].as_str(), entities.surfaces[a.1.index()].as_str());
                let kb = (relations.surfaces[b.0.index()].as_str(), entities.surfaces[b.1.index()].as_str());
                ka.cmp(&kb)
            });
        }
        KnowledgeGraph {
            entities: self.entities,
            relations: self.relations,
            triples: self.triples,
            adjacency,
        }
    }
}

impl KnowledgeGraph {
    /// Reads a triple file. Malformed rows are skipped and reported.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<RowWarning>)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (graph, warnings) = Self::parse(&text);
        for w in &warnings {
            log::warn!("{}: {}", path.display(), w);
        }
        Ok((graph, warnings))
    }

    pub fn parse(text: &str) -> (Self, Vec<RowWarning>) {
        let mut builder = GraphBuilder::default();
        let mut warnings = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                warnings.push(RowWarning {
                    line: idx + 1,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
                continue;
            }
            if fields.iter().any(|f| f.is_empty()) {
                warnings.push(RowWarning {
                    line: idx + 1,
                    message: "empty field".to_owned(),
                });
                continue;
            }
            builder.add(fields[0], fields[1], fields[2]);
        }
        (builder.finish(), warnings)
    }

    /// Builds a graph from surface triples. Rows with an empty field are ignored.
    pub fn from_triples<'a, I>(rows: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut builder = GraphBuilder::default();
        for (h, r, t) in rows {
            if !h.is_empty() && !r.is_empty() && !t.is_empty() {
                builder.add(h, r, t);
            }
        }
        builder.finish()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    /// Distinct triples in load order.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entities(&self) -> &Interner {
        &self.entities
    }

    pub fn relations(&self) -> &Interner {
        &self.relations
    }

    pub fn lookup_entity(&self, surface: &str) -> Option<EntityId> {
        self.entities.get(surface).map(EntityId)
    }

    pub fn lookup_relation(&self, surface: &str) -> Option<RelationId> {
        self.relations.get(surface).map(RelationId)
    }

    pub fn contains_entity(&self, e: EntityId) -> bool {
        e.index() < self.entities.len()
    }

    /// Outgoing `(relation, tail)` pairs, sorted by relation surface then tail surface.
    pub fn neighbors_out(&self, e: EntityId) -> Result<&[(RelationId, EntityId)]> {
        self.adjacency
            .get(e.index())
            .map(Vec::as_slice)
            .ok_or(Error::InvalidEntity(e.0))
    }

    pub fn out_degree(&self, e: EntityId) -> Result<usize> {
        self.neighbors_out(e).map(<[_]>::len)
    }

    /// Panics if `e` was not produced by this graph.
    pub fn entity(&self, e: EntityId) -> &str {
        self.entities
            .surface(e.0)
            .unwrap_or_else(|| panic!("entity id {} out of range", e.0))
    }

    /// Panics if `r` was not produced by this graph.
    pub fn relation(&self, r: RelationId) -> &str {
        self.relations
            .surface(r.0)
            .unwrap_or_else(|| panic!("relation id {} out of range", r.0))
    }

    pub fn surfaces(&self, t: Triple) -> (&str, &str, &str) {
        (self.entity(t.head), self.relation(t.relation), self.entity(t.tail))
    }

    /// Surface tuple as owned strings, the shape used by the JSON outputs.
    pub fn triple_strings(&self, t: Triple) -> [String; 3] {
        let (h, r, tail) = self.surfaces(t);
        [h.to_owned(), r.to_owned(), tail.to_owned()]
    }
}
