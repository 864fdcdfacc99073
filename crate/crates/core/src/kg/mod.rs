//! Triple store: vocabularies, indexes, ingestion and dataset splits.
//!
//! A [`KnowledgeGraph`] is an immutable set of `(head, relation, tail)` facts
//! over a shared [`Vocabulary`]. Graphs derived from a split (train, valid,
//! test) share the vocabulary of their source, so ids are comparable across
//! them.

mod ingest;
mod split;
pub mod stats;

pub use ingest::{ingest, ingest_files, write_triples, Ingested, TripleFormat};
pub use split::{load_split, split, write_split, Split, SplitRatios};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("domain sidecar line {line}: {message}")]
    DomainParse { line: usize, message: String },
    #[error("dataset contains no triples")]
    EmptyDataset,
    #[error("entity `{0}` has no domain tag in the sidecar file")]
    MissingDomain(String),
    #[error("unknown relation id {0}")]
    UnknownRelation(u32),
    #[error("unknown entity `{0}`")]
    UnknownEntityName(String),
    #[error("unknown relation `{0}`")]
    UnknownRelationName(String),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("graph too small for split: {0}")]
    SplitTooSmall(String),
    #[error("relation {0} has no triples")]
    EmptyRelation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = KgError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    Gene,
    Chemical,
    Disease,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Gene, Domain::Chemical, Domain::Disease];

    pub fn symbol(self) -> char {
        match self {
            Domain::Gene => 'G',
            Domain::Chemical => 'C',
            Domain::Disease => 'D',
        }
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gene" | "g" => Ok(Domain::Gene),
            "chemical" | "c" => Ok(Domain::Chemical),
            "disease" | "d" => Ok(Domain::Disease),
            other => Err(format!("unknown domain tag `{other}`")),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Domain::Gene => "Gene",
            Domain::Chemical => "Chemical",
            Domain::Disease => "Disease",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub domain: Option<Domain>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub id: RelationId,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple { head, relation, tail }
    }
}

/// Entity and relation dictionaries with dense ids in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    entities: Vec<Entity>,
    entity_ids: HashMap<String, EntityId>,
    relations: Vec<Relation>,
    relation_ids: HashMap<String, RelationId>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern_entity(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entity_ids.get(name) {
            return id;
        }
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(Entity { id, name: name.to_owned(), domain: None });
        self.entity_ids.insert(name.to_owned(), id);
        id
    }

    pub fn intern_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_ids.get(name) {
            return id;
        }
        let id = RelationId(self.relations.len() as u32);
        self.relations.push(Relation { id, name: name.to_owned() });
        self.relation_ids.insert(name.to_owned(), id);
        id
    }

    pub fn set_domain(&mut self, id: EntityId, domain: Domain) {
        self.entities[id.index()].domain = Some(domain);
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity(&self, id: EntityId) -> &Entity {
        &self.entities[id.index()]
    }

    pub fn relation(&self, id: RelationId) -> &Relation {
        &self.relations[id.index()]
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entities[id.index()].name
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relations[id.index()].name
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// True when every entity carries a domain tag.
    pub fn has_domains(&self) -> bool {
        !self.entities.is_empty() && self.entities.iter().all(|e| e.domain.is_some())
    }

    pub fn entity_domain(&self, id: EntityId) -> Option<Domain> {
        self.entities[id.index()].domain
    }

    /// Render a triple with vocabulary names, `Rel(head,tail)`.
    pub fn display_triple(&self, t: &Triple) -> String {
        format!(
            "{}({},{})",
            self.relation_name(t.relation),
            self.entity_name(t.head),
            self.entity_name(t.tail)
        )
    }
}

/// Indexed, immutable set of triples.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    vocab: Arc<Vocabulary>,
    triples: Vec<Triple>,
    set: HashSet<Triple>,
    by_relation: Vec<Vec<usize>>,
    // per relation: head -> sorted tails, tail -> sorted heads
    out: Vec<HashMap<EntityId, Vec<EntityId>>>,
    inc: Vec<HashMap<EntityId, Vec<EntityId>>>,
    by_pair: HashMap<(EntityId, EntityId), Vec<RelationId>>,
}

impl KnowledgeGraph {
    /// Build a graph over `vocab`. Duplicate triples are dropped; the
    /// number dropped is returned alongside.
    pub fn from_triples(vocab: Arc<Vocabulary>, triples: impl IntoIterator<Item = Triple>) -> (Self, usize) {
        let n_rel = vocab.num_relations();
        let mut set = HashSet::new();
        let mut kept = Vec::new();
        let mut duplicates = 0;
        for t in triples {
            debug_assert!(t.head.index() < vocab.num_entities());
            debug_assert!(t.tail.index() < vocab.num_entities());
            debug_assert!(t.relation.index() < n_rel);
            if set.insert(t) {
                kept.push(t);
            } else {
                duplicates += 1;
            }
        }
        let mut by_relation = vec![Vec::new(); n_rel];
        let mut out: Vec<HashMap<EntityId, Vec<EntityId>>> = vec![HashMap::new(); n_rel];
        let mut inc: Vec<HashMap<EntityId, Vec<EntityId>>> = vec![HashMap::new(); n_rel];
        let mut by_pair: HashMap<(EntityId, EntityId), Vec<RelationId>> = HashMap::new();
        for (i, t) in kept.iter().enumerate() {
            let r = t.relation.index();
            by_relation[r].push(i);
            out[r].entry(t.head).or_default().push(t.tail);
            inc[r].entry(t.tail).or_default().push(t.head);
            by_pair.entry((t.head, t.tail)).or_default().push(t.relation);
        }
        for m in out.iter_mut().chain(inc.iter_mut()) {
            for list in m.values_mut() {
                list.sort_unstable();
            }
        }
        for list in by_pair.values_mut() {
            list.sort_unstable();
        }
        (
            KnowledgeGraph { vocab, triples: kept, set, by_relation, out, inc, by_pair },
            duplicates,
        )
    }

    /// Same vocabulary, different fact set.
    pub fn with_triples(&self, triples: impl IntoIterator<Item = Triple>) -> Self {
        Self::from_triples(self.vocab.clone(), triples).0
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn shared_vocab(&self) -> Arc<Vocabulary> {
        self.vocab.clone()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.num_relations()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.set.contains(t)
    }

    pub fn has(&self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        self.set.contains(&Triple { head, relation, tail })
    }

    pub fn relation_count(&self, r: RelationId) -> usize {
        self.by_relation.get(r.index()).map_or(0, Vec::len)
    }

    pub fn triples_of(&self, r: RelationId) -> impl Iterator<Item = &Triple> + '_ {
        self.by_relation
            .get(r.index())
            .into_iter()
            .flatten()
            .map(move |&i| &self.triples[i])
    }

    /// Sorted tails `t` with `r(head, t)`.
    pub fn tails(&self, head: EntityId, r: RelationId) -> &[EntityId] {
        self.out
            .get(r.index())
            .and_then(|m| m.get(&head))
            .map_or(&[], Vec::as_slice)
    }

    /// Sorted heads `h` with `r(h, tail)`.
    pub fn heads(&self, tail: EntityId, r: RelationId) -> &[EntityId] {
        self.inc
            .get(r.index())
            .and_then(|m| m.get(&tail))
            .map_or(&[], Vec::as_slice)
    }

    /// Sorted relations linking `head` to `tail`.
    pub fn relations_between(&self, head: EntityId, tail: EntityId) -> &[RelationId] {
        self.by_pair.get(&(head, tail)).map_or(&[], Vec::as_slice)
    }

    /// Distinct heads of relation `r`.
    pub fn subjects(&self, r: RelationId) -> impl Iterator<Item = EntityId> + '_ {
        self.out.get(r.index()).into_iter().flat_map(|m| m.keys().copied())
    }

    pub fn has_subject(&self, r: RelationId, head: EntityId) -> bool {
        self.out.get(r.index()).is_some_and(|m| m.contains_key(&head))
    }

    pub fn out_index(&self, r: RelationId) -> &HashMap<EntityId, Vec<EntityId>> {
        &self.out[r.index()]
    }

    pub fn in_index(&self, r: RelationId) -> &HashMap<EntityId, Vec<EntityId>> {
        &self.inc[r.index()]
    }
}
