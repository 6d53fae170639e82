//! Grounded query generation.
//!
//! Sampling is answer-first: an answer entity is drawn for `f`, then the
//! positive atoms are grounded by a randomized backtracking walk along
//! existing edges of the purpose graph, and finally every negated atom gets
//! a relation or constant whose triple is absent. The grounded query is
//! accepted when its answer split passes the purpose's rule: training
//! queries need training answers, evaluation queries need held-out answers.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use thiserror::Error;

use crate::kg::{Direction, EntityId, GraphSplit, KnowledgeGraph, RelationId, Triple};
use crate::oracle::{answer_set, AnswerSplit, OracleError};
use crate::rng::{self, Rng};
use crate::syntax::templates::{self, QueryType};
use crate::syntax::{Atom, Grounding, QueryAst, Sym, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Purpose {
    Train,
    Valid,
    Test,
}

impl Purpose {
    pub const ALL: [Purpose; 3] = [Purpose::Train, Purpose::Valid, Purpose::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::Train => "train",
            Purpose::Valid => "valid",
            Purpose::Test => "test",
        }
    }

    pub fn graph(self, splits: &GraphSplit) -> &KnowledgeGraph {
        match self {
            Purpose::Train => &splits.train,
            Purpose::Valid => &splits.valid,
            Purpose::Test => &splits.test,
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Purpose {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Purpose::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| alloc::format!("unknown purpose {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySample {
    pub type_name: String,
    pub query: QueryAst,
    pub split: AnswerSplit,
    pub purpose: Purpose,
    /// Base seed and per-type index that produced the sample.
    pub seed: u64,
    pub index: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleError {
    #[error("gave up sampling {type_name} for {purpose} after {attempts} attempts on a graph with {triples} triples")]
    Exhausted {
        type_name: String,
        purpose: Purpose,
        attempts: usize,
        triples: usize,
    },
    #[error("unknown query type {0:?}")]
    UnknownType(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Answer split of `ast` as seen by queries of `purpose`.
///
/// Test queries hold out what only the test graph adds beyond the validation
/// graph. Validation queries hold out what the validation graph adds beyond
/// the training graph. Training queries have no held-out answers.
pub fn purpose_split(
    splits: &GraphSplit,
    ast: &QueryAst,
    purpose: Purpose,
) -> Result<AnswerSplit, OracleError> {
    let a_id = answer_set(&splits.train, ast)?;
    let a_ood = match purpose {
        Purpose::Train => Vec::new(),
        Purpose::Valid => minus(&answer_set(&splits.valid, ast)?, &a_id),
        Purpose::Test => minus(
            &answer_set(&splits.test, ast)?,
            &answer_set(&splits.valid, ast)?,
        ),
    };
    Ok(AnswerSplit { a_id, a_ood })
}

fn minus(a: &[EntityId], b: &[EntityId]) -> Vec<EntityId> {
    a.iter().copied().filter(|x| b.binary_search(x).is_err()).collect()
}

fn accepted(split: &AnswerSplit, purpose: Purpose) -> bool {
    match purpose {
        Purpose::Train => !split.a_id.is_empty(),
        Purpose::Valid | Purpose::Test => !split.a_ood.is_empty(),
    }
}

/// Partial grounding under construction.
#[derive(Clone, Default)]
struct Binding {
    relations: BTreeMap<u32, RelationId>,
    constants: BTreeMap<u32, EntityId>,
    vars: BTreeMap<u32, EntityId>,
    free: Option<EntityId>,
}

impl Binding {
    fn term(&self, t: Term) -> Option<EntityId> {
        match t {
            Term::Free => self.free,
            Term::Var(k) => self.vars.get(&k).copied(),
            Term::Const(Sym::Slot(k)) => self.constants.get(&k).copied(),
            Term::Const(Sym::Id(id)) => Some(id),
        }
    }

    fn relation(&self, s: Sym) -> Option<RelationId> {
        match s {
            Sym::Slot(k) => self.relations.get(&k).copied(),
            Sym::Id(id) => Some(id),
        }
    }

    fn bind_term(&mut self, t: Term, e: EntityId) {
        match t {
            Term::Free => self.free = Some(e),
            Term::Var(k) => {
                self.vars.insert(k, e);
            }
            Term::Const(Sym::Slot(k)) => {
                self.constants.insert(k, e);
            }
            Term::Const(Sym::Id(_)) => {}
        }
    }

    fn bind_relation(&mut self, s: Sym, r: RelationId) {
        if let Sym::Slot(k) = s {
            self.relations.insert(k, r);
        }
    }

    fn grounding(&self) -> Grounding {
        Grounding {
            relations: self.relations.clone(),
            constants: self.constants.clone(),
        }
    }
}

/// Edges `(head, relation, tail)` of `kg` compatible with `atom` under `b`.
/// At least one endpoint must be bound.
fn compatible_edges(kg: &KnowledgeGraph, atom: &Atom, b: &Binding) -> Vec<Triple> {
    let rel = b.relation(atom.relation);
    let keep = |r: RelationId| rel.map_or(true, |x| x == r);
    match (b.term(atom.head), b.term(atom.tail)) {
        (Some(h), Some(t)) => kg
            .out_edges(h)
            .filter(|&(r, x)| x == t && keep(r))
            .map(|(r, _)| Triple::new(h, r, t))
            .collect(),
        (Some(h), None) => match rel {
            Some(r) => kg
                .neighbors_unchecked(h, r, Direction::Forward)
                .iter()
                .map(|&t| Triple::new(h, r, t))
                .collect(),
            None => kg.out_edges(h).map(|(r, t)| Triple::new(h, r, t)).collect(),
        },
        (None, Some(t)) => match rel {
            Some(r) => kg
                .neighbors_unchecked(t, r, Direction::Backward)
                .iter()
                .map(|&h| Triple::new(h, r, t))
                .collect(),
            None => kg.in_edges(t).map(|(r, h)| Triple::new(h, r, t)).collect(),
        },
        (None, None) => kg
            .triples()
            .iter()
            .copied()
            .filter(|tr| keep(tr.relation) && (atom.head != atom.tail || tr.head == tr.tail))
            .collect(),
    }
}

struct Walk<'a> {
    kg: &'a KnowledgeGraph,
    atoms: Vec<Atom>,
    steps: usize,
}

impl Walk<'_> {
    const STEP_LIMIT: usize = 4096;

    /// Grounds every atom in `pending`, most-constrained first.
    fn ground(&mut self, b: &mut Binding, pending: &mut Vec<usize>, rng: &mut Rng) -> bool {
        if pending.is_empty() {
            return true;
        }
        self.steps += 1;
        if self.steps > Self::STEP_LIMIT {
            return false;
        }
        let score = |a: &Atom| {
            usize::from(b.term(a.head).is_some())
                + usize::from(b.term(a.tail).is_some())
                + usize::from(b.relation(a.relation).is_some())
        };
        let (pos, _) = pending
            .iter()
            .enumerate()
            .max_by_key(|&(i, &a)| (score(&self.atoms[a]), core::cmp::Reverse(i)))
            .expect("pending is non-empty");
        let atom = self.atoms[pending.swap_remove(pos)];
        let mut edges = compatible_edges(self.kg, &atom, b);
        edges.shuffle(rng);
        for e in edges {
            let saved = b.clone();
            b.bind_relation(atom.relation, e.relation);
            b.bind_term(atom.head, e.head);
            b.bind_term(atom.tail, e.tail);
            if b.term(atom.head) == Some(e.head)
                && b.term(atom.tail) == Some(e.tail)
                && self.ground(b, pending, rng)
            {
                return true;
            }
            *b = saved;
            if self.steps > Self::STEP_LIMIT {
                break;
            }
        }
        pending.push(atom_index(&self.atoms, &atom));
        false
    }
}

fn atom_index(atoms: &[Atom], atom: &Atom) -> usize {
    atoms.iter().position(|a| a == atom).expect("atom comes from the list")
}

const NEGATION_RETRIES: usize = 32;

/// Grounds a negated atom so that its triple is absent from `kg`. Returns
/// false when no absent grounding was found within the retry budget.
fn ground_negation(kg: &KnowledgeGraph, atom: &Atom, b: &mut Binding, rng: &mut Rng) -> bool {
    let triples = kg.triples();
    if triples.is_empty() {
        return false;
    }
    let ne = kg.num_entities() as EntityId;
    for _ in 0..NEGATION_RETRIES {
        let mut trial = b.clone();
        // Borrow the unbound parts from a nearby edge so the negated set is
        // not trivially empty.
        let seed_edge = match (trial.term(atom.head), trial.term(atom.tail)) {
            (Some(h), _) => kg.out_edges(h).collect::<Vec<_>>().choose(rng).map(|&(r, t)| Triple::new(h, r, t)),
            (None, Some(_)) => triples.choose(rng).copied(),
            (None, None) => triples.choose(rng).copied(),
        }
        .unwrap_or_else(|| triples[rng.gen_range(0..triples.len())]);
        if trial.relation(atom.relation).is_none() {
            trial.bind_relation(atom.relation, seed_edge.relation);
        }
        if trial.term(atom.head).is_none() {
            trial.bind_term(atom.head, seed_edge.head);
        }
        if trial.term(atom.tail).is_none() {
            trial.bind_term(atom.tail, rng.gen_range(0..ne));
        }
        let (Some(h), Some(r), Some(t)) = (
            trial.term(atom.head),
            trial.relation(atom.relation),
            trial.term(atom.tail),
        ) else {
            continue;
        };
        if !kg.has_triple(Triple::new(h, r, t)) {
            *b = trial;
            return true;
        }
    }
    false
}

/// One grounding attempt on `kg` with a uniformly drawn answer.
fn attempt(kg: &KnowledgeGraph, template: &QueryAst, rng: &mut Rng) -> Option<QueryAst> {
    let ne = kg.num_entities();
    if ne == 0 {
        return None;
    }
    let atoms: Vec<Atom> = template.atoms().into_iter().copied().collect();
    let mut b = Binding {
        free: Some(rng.gen_range(0..ne as EntityId)),
        ..Binding::default()
    };
    let mut pending: Vec<usize> = (0..atoms.len()).filter(|&i| !atoms[i].negated).collect();
    let mut walk = Walk {
        kg,
        atoms: atoms.clone(),
        steps: 0,
    };
    if !walk.ground(&mut b, &mut pending, rng) {
        return None;
    }
    for a in atoms.iter().filter(|a| a.negated) {
        if !ground_negation(kg, a, &mut b, rng) {
            return None;
        }
    }
    // existentials that occur only under negation
    for k in template.existentials() {
        b.vars.entry(k).or_insert_with(|| rng.gen_range(0..ne as EntityId));
    }
    template.ground(&b.grounding()).ok()
}

/// Samples one grounded query of `qtype` for `purpose`.
pub fn sample_query(
    splits: &GraphSplit,
    qtype: &QueryType,
    purpose: Purpose,
    rng: &mut Rng,
    max_attempts: usize,
) -> Result<(QueryAst, AnswerSplit), SampleError> {
    let template = qtype.template();
    let kg = purpose.graph(splits);
    for _ in 0..max_attempts {
        let Some(q) = attempt(kg, &template, rng) else {
            continue;
        };
        let split = purpose_split(splits, &q, purpose)?;
        if accepted(&split, purpose) {
            return Ok((q, split));
        }
    }
    Err(SampleError::Exhausted {
        type_name: qtype.name.to_string(),
        purpose,
        attempts: max_attempts,
        triples: kg.num_triples(),
    })
}

/// Every `(head, relation)` pair of the training graph as a 1p query.
pub fn enumerate_1p(train: &KnowledgeGraph) -> Vec<QuerySample> {
    train
        .head_relation_pairs()
        .enumerate()
        .map(|(i, (h, r))| QuerySample {
            type_name: "1p".to_string(),
            query: QueryAst::new(crate::syntax::Formula::atom(
                Sym::Id(r),
                Term::Const(Sym::Id(h)),
                Term::Free,
            ))
            .expect("1p contains f"),
            split: AnswerSplit {
                a_id: train.neighbors_unchecked(h, r, Direction::Forward).to_vec(),
                a_ood: Vec::new(),
            },
            purpose: Purpose::Train,
            seed: 0,
            index: i as u64,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Profile {
    pub name: String,
    /// Training queries per type; `None` enumerates 1p exhaustively and
    /// draws twice that many queries for every other training type.
    pub train_per_type: Option<usize>,
    pub eval_per_type: usize,
    pub train_types: Vec<String>,
    pub eval_types: Vec<String>,
    pub max_attempts: usize,
}

impl Profile {
    pub const DEFAULT_MAX_ATTEMPTS: usize = 2000;

    fn names(it: impl Iterator<Item = &'static QueryType>) -> Vec<String> {
        it.map(|t| t.name.to_string()).collect()
    }

    /// 200 training queries per seen type, 50 evaluation queries per type.
    pub fn desk() -> Self {
        Self::custom("desk", 200, 50)
    }

    pub fn paper_scale(eval_per_type: usize) -> Self {
        Self {
            name: "paper-scale".to_string(),
            train_per_type: None,
            eval_per_type,
            train_types: Self::names(templates::seen()),
            eval_types: Self::names(templates::all().iter()),
            max_attempts: Self::DEFAULT_MAX_ATTEMPTS,
        }
    }

    pub fn custom(name: &str, train_per_type: usize, eval_per_type: usize) -> Self {
        Self {
            name: name.to_string(),
            train_per_type: Some(train_per_type),
            eval_per_type,
            train_types: Self::names(templates::seen()),
            eval_types: Self::names(templates::all().iter()),
            max_attempts: Self::DEFAULT_MAX_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<QuerySample>,
    pub valid: Vec<QuerySample>,
    pub test: Vec<QuerySample>,
}

impl Dataset {
    pub fn part(&self, purpose: Purpose) -> &[QuerySample] {
        match purpose {
            Purpose::Train => &self.train,
            Purpose::Valid => &self.valid,
            Purpose::Test => &self.test,
        }
    }

    /// Sample count per type name, per purpose.
    pub fn counts(&self) -> BTreeMap<(Purpose, String), usize> {
        let mut out = BTreeMap::new();
        for p in Purpose::ALL {
            for s in self.part(p) {
                *out.entry((p, s.type_name.clone())).or_insert(0) += 1;
            }
        }
        out
    }
}

fn lookup(name: &str) -> Result<&'static QueryType, SampleError> {
    templates::by_name(name).ok_or_else(|| SampleError::UnknownType(name.to_string()))
}

/// Samples `count` queries of one type; sample `i` uses its own stream, so
/// the result does not depend on what other types were drawn.
pub fn sample_type(
    splits: &GraphSplit,
    qtype: &QueryType,
    purpose: Purpose,
    count: usize,
    seed: u64,
    max_attempts: usize,
) -> Result<Vec<QuerySample>, SampleError> {
    (0..count as u64)
        .map(|index| {
            let mut r = rng::stream(
                seed,
                &[rng::label(purpose.as_str()), rng::label(qtype.name), index],
            );
            let (query, split) = sample_query(splits, qtype, purpose, &mut r, max_attempts)?;
            Ok(QuerySample {
                type_name: qtype.name.to_string(),
                query,
                split,
                purpose,
                seed,
                index,
            })
        })
        .collect()
}

/// The work items of a dataset build: `(purpose, type, count)`.
pub fn plan(profile: &Profile, splits: &GraphSplit) -> Result<Vec<(Purpose, &'static QueryType, usize)>, SampleError> {
    let mut out = Vec::new();
    let exhaustive = profile.train_per_type.is_none();
    let onep = if exhaustive {
        splits.train.head_relation_pairs().count()
    } else {
        0
    };
    for name in &profile.train_types {
        let t = lookup(name)?;
        let n = match profile.train_per_type {
            Some(n) => n,
            None if t.name == "1p" => continue,
            None => 2 * onep,
        };
        out.push((Purpose::Train, t, n));
    }
    for p in [Purpose::Valid, Purpose::Test] {
        for name in &profile.eval_types {
            out.push((p, lookup(name)?, profile.eval_per_type));
        }
    }
    Ok(out)
}

/// Assembles a dataset from per-type sample lists produced for `plan`.
/// Each part is shuffled with its own stream.
pub fn assemble(
    profile: &Profile,
    splits: &GraphSplit,
    parts: Vec<Vec<QuerySample>>,
    seed: u64,
) -> Dataset {
    let mut ds = Dataset::default();
    if profile.train_per_type.is_none() && profile.train_types.iter().any(|t| t == "1p") {
        ds.train.extend(enumerate_1p(&splits.train).into_iter().map(|mut s| {
            s.seed = seed;
            s
        }));
    }
    for part in parts {
        for s in part {
            match s.purpose {
                Purpose::Train => ds.train.push(s),
                Purpose::Valid => ds.valid.push(s),
                Purpose::Test => ds.test.push(s),
            }
        }
    }
    for p in Purpose::ALL {
        let mut r = rng::stream(seed, &[rng::label("shuffle"), rng::label(p.as_str())]);
        match p {
            Purpose::Train => ds.train.shuffle(&mut r),
            Purpose::Valid => ds.valid.shuffle(&mut r),
            Purpose::Test => ds.test.shuffle(&mut r),
        }
    }
    ds
}

/// Builds the whole dataset serially.
pub fn build_dataset(splits: &GraphSplit, profile: &Profile, seed: u64) -> Result<Dataset, SampleError> {
    let parts = plan(profile, splits)?
        .into_iter()
        .map(|(p, t, n)| sample_type(splits, t, p, n, seed, profile.max_attempts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(profile, splits, parts, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{build_splits, Vocab};
    use crate::oracle::answer_split;
    use alloc::sync::Arc;
    use alloc::vec;
    use rand::SeedableRng;

    fn synthetic(ne: u32, nr: u32, nt: usize, seed: u64) -> GraphSplit {
        let mut r = Rng::seed_from_u64(seed);
        let triples: Vec<Triple> = (0..nt)
            .map(|_| Triple::new(r.gen_range(0..ne), r.gen_range(0..nr), r.gen_range(0..ne)))
            .collect();
        build_splits(
            Arc::new(Vocab::numbered(ne as usize)),
            Arc::new(Vocab::numbered(nr as usize)),
            &triples,
            [0.8, 0.1, 0.1],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn one_p_enumeration() {
        let kg = KnowledgeGraph::new(
            Arc::new(Vocab::numbered(3)),
            Arc::new(Vocab::numbered(1)),
            [Triple::new(0, 0, 1), Triple::new(0, 0, 2)],
        )
        .unwrap();
        let qs = enumerate_1p(&kg);
        assert_eq!(qs.len(), 1);
        assert_eq!(qs[0].split.a_id, vec![1, 2]);
        assert_eq!(qs[0].query.to_string(), "r:0(s:0,f)");
        let empty = KnowledgeGraph::new(Arc::new(Vocab::numbered(3)), Arc::new(Vocab::numbered(1)), []).unwrap();
        assert!(enumerate_1p(&empty).is_empty());
    }

    #[test]
    fn samples_satisfy_their_purpose() {
        let s = synthetic(60, 4, 500, 3);
        for name in ["1p", "2in", "pni", "3nmp", "2u", "up", "3c"] {
            let t = templates::by_name(name).unwrap();
            for p in Purpose::ALL {
                let qs = sample_type(&s, t, p, 5, 11, 2000).unwrap();
                for q in qs {
                    assert!(q.query.is_grounded());
                    assert!(accepted(&q.split, p), "{name} {p}");
                    assert_eq!(purpose_split(&s, &q.query, p).unwrap(), q.split);
                    if p == Purpose::Test {
                        assert_eq!(answer_split(&s, &q.query).unwrap(), q.split);
                    }
                }
            }
        }
    }

    #[test]
    fn one_p_train_sample_contains_its_answer_edge() {
        let s = synthetic(40, 3, 300, 5);
        let t = templates::by_name("1p").unwrap();
        let qs = sample_type(&s, t, Purpose::Train, 10, 1, 100).unwrap();
        for q in qs {
            let a = q.query.atoms()[0];
            let (Term::Const(Sym::Id(h)), Sym::Id(r)) = (a.head, a.relation) else {
                panic!("grounded")
            };
            for &x in &q.split.a_id {
                assert!(s.train.has_triple(Triple::new(h, r, x)));
            }
        }
    }

    #[test]
    fn plan_counts() {
        let s = synthetic(30, 2, 100, 1);
        let desk = plan(&Profile::desk(), &s).unwrap();
        assert_eq!(desk.iter().filter(|x| x.0 == Purpose::Train).count(), 23);
        assert!(desk.iter().filter(|x| x.0 == Purpose::Train).all(|x| x.2 == 200 && x.1.seen));
        assert_eq!(desk.iter().filter(|x| x.0 == Purpose::Test).count(), 55);
        let paper = plan(&Profile::paper_scale(5000), &s).unwrap();
        let onep = s.train.head_relation_pairs().count();
        assert_eq!(paper.iter().filter(|x| x.0 == Purpose::Train).count(), 22);
        assert!(paper.iter().filter(|x| x.0 == Purpose::Train).all(|x| x.2 == 2 * onep));
    }
}
