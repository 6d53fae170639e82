//! Knowledge graph storage.
//!
//! A [`KnowledgeGraph`] is an immutable, deduplicated triple set with forward
//! `(head, relation) -> tails` and backward `(tail, relation) -> heads`
//! indices. Graphs built from the same [`GraphSplit`] share their
//! vocabularies through an `Arc`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng;

pub type EntityId = u32;
pub type RelationId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KgError {
    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    MalformedLine { line: usize, found: usize },
    #[error("no triples found")]
    Empty,
    #[error("entity id {id} out of range (|E| = {len})")]
    EntityOutOfRange { id: EntityId, len: usize },
    #[error("relation id {id} out of range (|R| = {len})")]
    RelationOutOfRange { id: RelationId, len: usize },
    #[error("split ratios {0:?} are degenerate: every fraction must be > 0")]
    DegenerateRatios([f64; 3]),
    #[error("split ratios {0:?} do not sum to 1")]
    RatiosDoNotSum([f64; 3]),
    #[error("need at least 3 triples to split, got {0}")]
    TooFewTriples(usize),
    #[error("split graphs are not nested: {0} missing from a larger graph")]
    NotNested(Triple),
}

/// Bidirectional name <-> id map. Ids are assigned in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Anonymous vocabulary `0..n` whose names are the decimal ids.
    pub fn numbered(n: usize) -> Self {
        let mut v = Self::new();
        for i in 0..n {
            v.intern(&i.to_string());
        }
        v
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for n in names {
            v.intern(n.as_ref());
        }
        v
    }

    /// Returns the id for `name`, assigning the next free id on first sight.
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Parsed triple text: vocabularies in first-appearance order plus the raw
/// (possibly duplicated) triples in file order.
#[derive(Debug, Clone, Default)]
pub struct TripleText {
    pub entities: Vocab,
    pub relations: Vocab,
    pub triples: Vec<Triple>,
}

impl TripleText {
    /// Appends the triples of `text`, interning names into the existing
    /// vocabularies. Blank lines and `#` comments are skipped.
    pub fn extend_from_str(&mut self, text: &str) -> Result<usize, KgError> {
        let mut added = 0;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.trim().is_empty()) {
                return Err(KgError::MalformedLine {
                    line: lineno + 1,
                    found: fields.iter().filter(|f| !f.trim().is_empty()).count(),
                });
            }
            let head = self.entities.intern(fields[0].trim());
            let relation = self.relations.intern(fields[1].trim());
            let tail = self.entities.intern(fields[2].trim());
            self.triples.push(Triple::new(head, relation, tail));
            added += 1;
        }
        Ok(added)
    }

    pub fn parse(text: &str) -> Result<Self, KgError> {
        let mut out = Self::default();
        if out.extend_from_str(text)? == 0 {
            return Err(KgError::Empty);
        }
        Ok(out)
    }

    pub fn into_graph(self) -> Result<KnowledgeGraph, KgError> {
        KnowledgeGraph::new(
            Arc::new(self.entities),
            Arc::new(self.relations),
            self.triples,
        )
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Arc<Vocab>,
    relations: Arc<Vocab>,
    triples: Vec<Triple>,
    fwd: BTreeMap<(EntityId, RelationId), Vec<EntityId>>,
    bwd: BTreeMap<(EntityId, RelationId), Vec<EntityId>>,
    rel_heads: Vec<Vec<EntityId>>,
    rel_tails: Vec<Vec<EntityId>>,
}

impl KnowledgeGraph {
    pub fn new(
        entities: Arc<Vocab>,
        relations: Arc<Vocab>,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<Self, KgError> {
        let (ne, nr) = (entities.len(), relations.len());
        let mut triples: Vec<Triple> = triples.into_iter().collect();
        for t in &triples {
            check_entity(t.head, ne)?;
            check_entity(t.tail, ne)?;
            check_relation(t.relation, nr)?;
        }
        triples.sort_unstable();
        triples.dedup();

        let mut fwd: BTreeMap<(EntityId, RelationId), Vec<EntityId>> = BTreeMap::new();
        let mut bwd: BTreeMap<(EntityId, RelationId), Vec<EntityId>> = BTreeMap::new();
        let mut rel_heads = alloc::vec![Vec::new(); nr];
        let mut rel_tails = alloc::vec![Vec::new(); nr];
        for t in &triples {
            fwd.entry((t.head, t.relation)).or_default().push(t.tail);
            bwd.entry((t.tail, t.relation)).or_default().push(t.head);
            rel_heads[t.relation as usize].push(t.head);
            rel_tails[t.relation as usize].push(t.tail);
        }
        // triples are sorted by (head, relation, tail): fwd lists arrive sorted
        for heads in bwd.values_mut() {
            heads.sort_unstable();
        }
        for v in rel_heads.iter_mut().chain(rel_tails.iter_mut()) {
            v.sort_unstable();
            v.dedup();
        }
        Ok(Self {
            entities,
            relations,
            triples,
            fwd,
            bwd,
            rel_heads,
            rel_tails,
        })
    }

    /// Parses tab-separated triple text into a graph.
    pub fn parse(text: &str) -> Result<Self, KgError> {
        TripleText::parse(text)?.into_graph()
    }

    pub fn entities(&self) -> &Arc<Vocab> {
        &self.entities
    }

    pub fn relations(&self) -> &Arc<Vocab> {
        &self.relations
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

    /// Triples in `(head, relation, tail)` order.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn neighbors(
        &self,
        anchor: EntityId,
        relation: RelationId,
        direction: Direction,
    ) -> Result<&[EntityId], KgError> {
        check_entity(anchor, self.num_entities())?;
        check_relation(relation, self.num_relations())?;
        Ok(self.neighbors_unchecked(anchor, relation, direction))
    }

    /// Like [`neighbors`](Self::neighbors) but out-of-range ids yield an empty set.
    pub fn neighbors_unchecked(
        &self,
        anchor: EntityId,
        relation: RelationId,
        direction: Direction,
    ) -> &[EntityId] {
        let index = match direction {
            Direction::Forward => &self.fwd,
            Direction::Backward => &self.bwd,
        };
        index
            .get(&(anchor, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn contains(&self, triple: Triple) -> Result<bool, KgError> {
        check_entity(triple.head, self.num_entities())?;
        check_entity(triple.tail, self.num_entities())?;
        check_relation(triple.relation, self.num_relations())?;
        Ok(self.has_triple(triple))
    }

    pub fn has_triple(&self, triple: Triple) -> bool {
        self.triples.binary_search(&triple).is_ok()
    }

    /// `(relation, tail)` pairs leaving `head`, sorted.
    pub fn out_edges(&self, head: EntityId) -> impl Iterator<Item = (RelationId, EntityId)> + '_ {
        self.fwd
            .range((head, 0)..=(head, RelationId::MAX))
            .flat_map(|(&(_, r), tails)| tails.iter().map(move |&t| (r, t)))
    }

    /// `(relation, head)` pairs entering `tail`, sorted.
    pub fn in_edges(&self, tail: EntityId) -> impl Iterator<Item = (RelationId, EntityId)> + '_ {
        self.bwd
            .range((tail, 0)..=(tail, RelationId::MAX))
            .flat_map(|(&(_, r), heads)| heads.iter().map(move |&h| (r, h)))
    }

    /// Distinct `(head, relation)` pairs, sorted.
    pub fn head_relation_pairs(&self) -> impl Iterator<Item = (EntityId, RelationId)> + '_ {
        self.fwd.keys().copied()
    }

    /// Every entity that is the head of some `relation` edge.
    pub fn relation_heads(&self, relation: RelationId) -> &[EntityId] {
        self.rel_heads
            .get(relation as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Every entity that is the tail of some `relation` edge.
    pub fn relation_tails(&self, relation: RelationId) -> &[EntityId] {
        self.rel_tails
            .get(relation as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

fn check_entity(id: EntityId, len: usize) -> Result<(), KgError> {
    if (id as usize) < len {
        Ok(())
    } else {
        Err(KgError::EntityOutOfRange { id, len })
    }
}

fn check_relation(id: RelationId, len: usize) -> Result<(), KgError> {
    if (id as usize) < len {
        Ok(())
    } else {
        Err(KgError::RelationOutOfRange { id, len })
    }
}

/// Nested graphs: `train ⊆ valid ⊆ test`, sharing vocabularies.
#[derive(Debug, Clone)]
pub struct GraphSplit {
    pub train: KnowledgeGraph,
    pub valid: KnowledgeGraph,
    pub test: KnowledgeGraph,
}

impl GraphSplit {
    /// Builds the nested graphs from disjoint edge lists (the layout of the
    /// standard pre-split benchmark files).
    pub fn from_edge_sets(
        entities: Arc<Vocab>,
        relations: Arc<Vocab>,
        train: &[Triple],
        valid: &[Triple],
        test: &[Triple],
    ) -> Result<Self, KgError> {
        let g_train = KnowledgeGraph::new(entities.clone(), relations.clone(), train.iter().copied())?;
        let g_valid = KnowledgeGraph::new(
            entities.clone(),
            relations.clone(),
            train.iter().chain(valid).copied(),
        )?;
        let g_test = KnowledgeGraph::new(
            entities,
            relations,
            train.iter().chain(valid).chain(test).copied(),
        )?;
        Ok(Self {
            train: g_train,
            valid: g_valid,
            test: g_test,
        })
    }

    /// Parses three triple texts (train, valid, test edges) with one shared
    /// vocabulary assigned in first-appearance order across the three texts.
    pub fn parse(train: &str, valid: &str, test: &str) -> Result<Self, KgError> {
        let mut text = TripleText::default();
        let a = text.extend_from_str(train)?;
        let b = text.extend_from_str(valid)?;
        text.extend_from_str(test)?;
        if text.triples.is_empty() {
            return Err(KgError::Empty);
        }
        let (tr, rest) = text.triples.split_at(a);
        let (va, te) = rest.split_at(b);
        Self::from_edge_sets(
            Arc::new(text.entities),
            Arc::new(text.relations),
            tr,
            va,
            te,
        )
    }

    /// Checks the nesting invariant.
    pub fn validate(&self) -> Result<(), KgError> {
        for &t in self.train.triples() {
            if !self.valid.has_triple(t) {
                return Err(KgError::NotNested(t));
            }
        }
        for &t in self.valid.triples() {
            if !self.test.has_triple(t) {
                return Err(KgError::NotNested(t));
            }
        }
        Ok(())
    }

    pub fn entities(&self) -> &Arc<Vocab> {
        self.test.entities()
    }

    pub fn relations(&self) -> &Arc<Vocab> {
        self.test.relations()
    }
}

/// Shuffles `all` deterministically by `seed` and cuts it into nested graphs.
///
/// The train graph takes the first `round(ratios[0] * n)` triples, the valid
/// graph additionally the next `round(ratios[1] * n)`, the test graph holds
/// all of them.
pub fn build_splits(
    entities: Arc<Vocab>,
    relations: Arc<Vocab>,
    all: &[Triple],
    ratios: [f64; 3],
    seed: u64,
) -> Result<GraphSplit, KgError> {
    if ratios.iter().any(|&r| r.is_nan() || r <= 0.0) {
        return Err(KgError::DegenerateRatios(ratios));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(KgError::RatiosDoNotSum(ratios));
    }
    let mut triples = all.to_vec();
    triples.sort_unstable();
    triples.dedup();
    let n = triples.len();
    if n < 3 {
        return Err(KgError::TooFewTriples(n));
    }
    let mut rng = rng::stream(seed, &[rng::label("build_splits")]);
    triples.shuffle(&mut rng);

    let n_train = round_count(ratios[0], n).clamp(1, n - 2);
    let n_valid = round_count(ratios[1], n).clamp(1, n - 1 - n_train);
    let (train, rest) = triples.split_at(n_train);
    let (valid, test) = rest.split_at(n_valid);
    GraphSplit::from_edge_sets(entities, relations, train, valid, test)
}

fn round_count(frac: f64, n: usize) -> usize {
    let x = frac * n as f64;
    // f64::round is unavailable without std
    (x + 0.5) as usize
}
