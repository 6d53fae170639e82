//! Exact answer sets of grounded EFO queries.
//!
//! [`answer_set`] runs a backtracking search per DNF conjunction. Variables
//! are bound fewest-candidates-first, candidates come from the adjacency
//! indices of positive atoms whose other endpoint is already bound, and
//! negated atoms are checked once both of their endpoints are bound.
//!
//! [`answer_set_naive`] enumerates every assignment of the existential
//! variables for every candidate answer. It shares no code with the search
//! and serves as the reference in tests.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::kg::{Direction, EntityId, GraphSplit, KnowledgeGraph, RelationId, Triple};
use crate::syntax::{QueryAst, Sym, Term};

pub const DEFAULT_NAIVE_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("query is not grounded: placeholder {0} remains")]
    Ungrounded(String),
    #[error("entity id {id} out of range (|E| = {len})")]
    EntityOutOfRange { id: EntityId, len: usize },
    #[error("relation id {id} out of range (|R| = {len})")]
    RelationOutOfRange { id: RelationId, len: usize },
    #[error("naive enumeration needs {needed} assignments per candidate, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u64 },
}

/// Answers of one query on the nested graphs: `a_id` are the answers on
/// the training graph, `a_ood` the answers on the test graph that are not
/// already answers on the validation graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnswerSplit {
    pub a_id: Vec<EntityId>,
    pub a_ood: Vec<EntityId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Const(EntityId),
    Var(usize),
}

#[derive(Debug, Clone, Copy)]
struct CAtom {
    relation: RelationId,
    head: Slot,
    tail: Slot,
    negated: bool,
}

/// A conjunction over variables `0..num_vars`; variable 0 is `f`.
#[derive(Debug, Clone)]
struct Conjunction {
    atoms: Vec<CAtom>,
    num_vars: usize,
}

fn compile(kg: &KnowledgeGraph, ast: &QueryAst) -> Result<Vec<Conjunction>, OracleError> {
    let (ne, nr) = (kg.num_entities(), kg.num_relations());
    ast.dnf()
        .into_iter()
        .map(|conj| {
            let mut vars: Vec<u32> = Vec::new();
            let mut slot = |t: Term| -> Result<Slot, OracleError> {
                match t {
                    Term::Free => Ok(Slot::Var(0)),
                    Term::Var(k) => {
                        let i = match vars.iter().position(|&v| v == k) {
                            Some(i) => i,
                            None => {
                                vars.push(k);
                                vars.len() - 1
                            }
                        };
                        Ok(Slot::Var(i + 1))
                    }
                    Term::Const(Sym::Id(id)) if (id as usize) < ne => Ok(Slot::Const(id)),
                    Term::Const(Sym::Id(id)) => Err(OracleError::EntityOutOfRange { id, len: ne }),
                    Term::Const(Sym::Slot(k)) => Err(OracleError::Ungrounded(format!("s{k}"))),
                }
            };
            let mut atoms = Vec::with_capacity(conj.len());
            for a in conj {
                let relation = match a.relation {
                    Sym::Id(id) if (id as usize) < nr => id,
                    Sym::Id(id) => return Err(OracleError::RelationOutOfRange { id, len: nr }),
                    Sym::Slot(k) => return Err(OracleError::Ungrounded(format!("r{k}"))),
                };
                atoms.push(CAtom {
                    relation,
                    head: slot(a.head)?,
                    tail: slot(a.tail)?,
                    negated: a.negated,
                });
            }
            Ok(Conjunction {
                atoms,
                num_vars: vars.len() + 1,
            })
        })
        .collect()
}

fn intersect_sorted(a: &[EntityId], b: &[EntityId]) -> Vec<EntityId> {
    let mut out = Vec::with_capacity(a.len().min(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

struct Search<'a> {
    kg: &'a KnowledgeGraph,
    conj: &'a Conjunction,
    binding: Vec<Option<EntityId>>,
    all: &'a [EntityId],
}

impl Search<'_> {
    fn value(&self, s: Slot) -> Option<EntityId> {
        match s {
            Slot::Const(e) => Some(e),
            Slot::Var(v) => self.binding[v],
        }
    }

    /// Candidate values for unbound variable `v`, before consistency checks.
    fn candidates(&self, v: usize) -> Vec<EntityId> {
        let mut best: Option<Vec<EntityId>> = None;
        let mut fallback: Option<&[EntityId]> = None;
        for a in self.conj.atoms.iter().filter(|a| !a.negated) {
            let list = if a.tail == Slot::Var(v) && a.head != Slot::Var(v) {
                match self.value(a.head) {
                    Some(h) => Some(self.kg.neighbors_unchecked(h, a.relation, Direction::Forward)),
                    None => {
                        let t = self.kg.relation_tails(a.relation);
                        if fallback.map_or(true, |f| t.len() < f.len()) {
                            fallback = Some(t);
                        }
                        None
                    }
                }
            } else if a.head == Slot::Var(v) && a.tail != Slot::Var(v) {
                match self.value(a.tail) {
                    Some(t) => Some(self.kg.neighbors_unchecked(t, a.relation, Direction::Backward)),
                    None => {
                        let h = self.kg.relation_heads(a.relation);
                        if fallback.map_or(true, |f| h.len() < f.len()) {
                            fallback = Some(h);
                        }
                        None
                    }
                }
            } else {
                None
            };
            if let Some(list) = list {
                best = Some(match best {
                    None => list.to_vec(),
                    Some(cur) => intersect_sorted(&cur, list),
                });
            }
        }
        best.or_else(|| fallback.map(<[_]>::to_vec))
            .unwrap_or_else(|| self.all.to_vec())
    }

    /// Checks every atom that touches `v` and has both endpoints bound.
    fn consistent(&self, v: usize) -> bool {
        self.conj.atoms.iter().all(|a| {
            if a.head != Slot::Var(v) && a.tail != Slot::Var(v) {
                return true;
            }
            match (self.value(a.head), self.value(a.tail)) {
                (Some(h), Some(t)) => {
                    self.kg.has_triple(Triple::new(h, a.relation, t)) != a.negated
                }
                _ => true,
            }
        })
    }

    /// Returns whether some completion exists. Completions are recorded in
    /// `answers` keyed by the value of `f`; once `f` is bound the first
    /// witness ends the search below it.
    fn run(&mut self, answers: &mut BTreeSet<EntityId>) -> bool {
        let mut pick: Option<(usize, Vec<EntityId>)> = None;
        for v in 0..self.conj.num_vars {
            if self.binding[v].is_some() {
                continue;
            }
            let c = self.candidates(v);
            if pick.as_ref().map_or(true, |(_, p)| c.len() < p.len()) {
                let empty = c.is_empty();
                pick = Some((v, c));
                if empty {
                    break;
                }
            }
        }
        let Some((v, cands)) = pick else {
            answers.insert(self.binding[0].expect("all variables bound"));
            return true;
        };
        let f_bound = self.binding[0].is_some();
        let mut found = false;
        for c in cands {
            self.binding[v] = Some(c);
            if self.consistent(v) && self.run(answers) {
                found = true;
                if f_bound {
                    break;
                }
            }
        }
        self.binding[v] = None;
        found
    }
}

fn solve(kg: &KnowledgeGraph, conjs: &[Conjunction], fixed_f: Option<EntityId>) -> BTreeSet<EntityId> {
    let all: Vec<EntityId> = (0..kg.num_entities() as EntityId).collect();
    let mut answers = BTreeSet::new();
    for conj in conjs {
        let ground_ok = conj.atoms.iter().all(|a| match (a.head, a.tail) {
            (Slot::Const(h), Slot::Const(t)) => kg.has_triple(Triple::new(h, a.relation, t)) != a.negated,
            _ => true,
        });
        if !ground_ok {
            continue;
        }
        let mut s = Search {
            kg,
            conj,
            binding: alloc::vec![None; conj.num_vars],
            all: &all,
        };
        if let Some(f) = fixed_f {
            s.binding[0] = Some(f);
            if !s.consistent(0) {
                continue;
            }
        }
        s.run(&mut answers);
        if fixed_f.is_some() && !answers.is_empty() {
            break;
        }
    }
    answers
}

/// Whether `kg` entails the query with `f` replaced by `candidate`.
pub fn check_entailment(
    kg: &KnowledgeGraph,
    ast: &QueryAst,
    candidate: EntityId,
) -> Result<bool, OracleError> {
    let conjs = compile(kg, ast)?;
    if candidate as usize >= kg.num_entities() {
        return Err(OracleError::EntityOutOfRange {
            id: candidate,
            len: kg.num_entities(),
        });
    }
    Ok(!solve(kg, &conjs, Some(candidate)).is_empty())
}

/// Sorted answer set of a grounded query.
pub fn answer_set(kg: &KnowledgeGraph, ast: &QueryAst) -> Result<Vec<EntityId>, OracleError> {
    let conjs = compile(kg, ast)?;
    Ok(solve(kg, &conjs, None).into_iter().collect())
}

/// Triple membership through a dense bitmap when the graph is small enough.
struct Membership<'a> {
    kg: &'a KnowledgeGraph,
    bits: Option<Vec<u64>>,
    ne: usize,
    nr: usize,
}

impl<'a> Membership<'a> {
    const DENSE_LIMIT: usize = 1 << 26;

    fn new(kg: &'a KnowledgeGraph) -> Self {
        let (ne, nr) = (kg.num_entities(), kg.num_relations());
        let size = ne.saturating_mul(nr).saturating_mul(ne);
        let bits = (size <= Self::DENSE_LIMIT).then(|| {
            let mut bits = alloc::vec![0u64; size.div_ceil(64)];
            for t in kg.triples() {
                let i = (t.head as usize * nr + t.relation as usize) * ne + t.tail as usize;
                bits[i / 64] |= 1 << (i % 64);
            }
            bits
        });
        Self { kg, bits, ne, nr }
    }

    fn holds(&self, h: EntityId, r: RelationId, t: EntityId) -> bool {
        match &self.bits {
            Some(bits) => {
                let i = (h as usize * self.nr + r as usize) * self.ne + t as usize;
                bits[i / 64] >> (i % 64) & 1 == 1
            }
            None => self.kg.has_triple(Triple::new(h, r, t)),
        }
    }
}

/// Reference answer set: for every candidate and every joint assignment of
/// all existential variables, the query holds when some conjunction has all
/// its positive atoms present and all its negated atoms absent.
pub fn answer_set_naive(
    kg: &KnowledgeGraph,
    ast: &QueryAst,
    budget: u64,
) -> Result<Vec<EntityId>, OracleError> {
    let ne = kg.num_entities();
    let vars = ast.existentials();
    let needed = (ne as u128).checked_pow(vars.len() as u32).unwrap_or(u128::MAX);
    if needed > u128::from(budget) {
        return Err(OracleError::BudgetExceeded { needed, budget });
    }
    let nr = kg.num_relations();
    let mut conjs: Vec<Vec<(RelationId, Term, Term, bool)>> = Vec::new();
    for conj in ast.dnf() {
        let mut atoms = Vec::new();
        for a in conj {
            let r = match a.relation {
                Sym::Id(id) if (id as usize) < nr => id,
                Sym::Id(id) => return Err(OracleError::RelationOutOfRange { id, len: nr }),
                Sym::Slot(k) => return Err(OracleError::Ungrounded(format!("r{k}"))),
            };
            for t in [a.head, a.tail] {
                match t {
                    Term::Const(Sym::Slot(k)) => return Err(OracleError::Ungrounded(format!("s{k}"))),
                    Term::Const(Sym::Id(id)) if id as usize >= ne => {
                        return Err(OracleError::EntityOutOfRange { id, len: ne })
                    }
                    _ => {}
                }
            }
            atoms.push((r, a.head, a.tail, a.negated));
        }
        conjs.push(atoms);
    }
    let member = Membership::new(kg);
    let mut assignment = alloc::vec![0 as EntityId; vars.len()];
    let mut answers = Vec::new();
    for candidate in 0..ne as EntityId {
        let value = |t: Term, assignment: &[EntityId]| -> EntityId {
            match t {
                Term::Free => candidate,
                Term::Const(s) => s.id().expect("checked grounded"),
                Term::Var(k) => {
                    assignment[vars.iter().position(|&v| v == k).expect("collected above")]
                }
            }
        };
        assignment.iter_mut().for_each(|x| *x = 0);
        let entailed = loop {
            let holds = conjs.iter().any(|atoms| {
                atoms.iter().all(|&(r, h, t, neg)| {
                    member.holds(value(h, &assignment), r, value(t, &assignment)) != neg
                })
            });
            if holds {
                break true;
            }
            // odometer step over E^vars
            let mut i = 0;
            loop {
                if i == assignment.len() {
                    break;
                }
                assignment[i] += 1;
                if (assignment[i] as usize) < ne {
                    break;
                }
                assignment[i] = 0;
                i += 1;
            }
            if i == assignment.len() {
                break false;
            }
        };
        if entailed {
            answers.push(candidate);
        }
    }
    Ok(answers)
}

/// `A(big) \ A(small)`, both sorted.
fn difference(big: &[EntityId], small: &[EntityId]) -> Vec<EntityId> {
    big.iter()
        .copied()
        .filter(|e| small.binary_search(e).is_err())
        .collect()
}

/// Answers on the validation graph that are not answers on the training
/// graph; the held-out answers used when sampling validation queries.
pub fn valid_only_answers(splits: &GraphSplit, ast: &QueryAst) -> Result<Vec<EntityId>, OracleError> {
    Ok(difference(
        &answer_set(&splits.valid, ast)?,
        &answer_set(&splits.train, ast)?,
    ))
}

pub fn answer_split(splits: &GraphSplit, ast: &QueryAst) -> Result<AnswerSplit, OracleError> {
    let a_id = answer_set(&splits.train, ast)?;
    let a_ood = difference(&answer_set(&splits.test, ast)?, &answer_set(&splits.valid, ast)?);
    Ok(AnswerSplit { a_id, a_ood })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{GraphSplit, Vocab};
    use crate::syntax::parse_efo;
    use alloc::sync::Arc;
    use alloc::vec;

    // entities a=0 b=1 c=2 d=3, relations r1=0 r2=1
    fn graph(edges: &[(u32, u32, u32)]) -> KnowledgeGraph {
        KnowledgeGraph::new(
            Arc::new(Vocab::numbered(4)),
            Arc::new(Vocab::numbered(2)),
            edges.iter().map(|&(h, r, t)| Triple::new(h, r, t)),
        )
        .unwrap()
    }

    #[test]
    fn two_p_entailment() {
        let kg = graph(&[(0, 0, 1), (1, 1, 2)]);
        let q = parse_efo("(r:0(s:0,e1))&(r:1(e1,f))").unwrap();
        assert!(check_entailment(&kg, &q, 2).unwrap());
        assert!(!check_entailment(&kg, &q, 1).unwrap());
        assert_eq!(answer_set(&kg, &q).unwrap(), vec![2]);
    }

    #[test]
    fn two_in_negation() {
        let kg = graph(&[(0, 0, 1), (0, 0, 2), (3, 1, 2)]);
        let q = parse_efo("(r:0(s:0,f))&(!(r:1(s:3,f)))").unwrap();
        assert!(check_entailment(&kg, &q, 1).unwrap());
        assert!(!check_entailment(&kg, &q, 2).unwrap());
        assert_eq!(answer_set(&kg, &q).unwrap(), vec![1]);
        assert_eq!(answer_set_naive(&kg, &q, DEFAULT_NAIVE_BUDGET).unwrap(), vec![1]);
    }

    #[test]
    fn absent_relation_gives_empty() {
        let kg = graph(&[(0, 0, 1)]);
        let q = parse_efo("r:1(s:0,f)").unwrap();
        assert!(answer_set(&kg, &q).unwrap().is_empty());
    }

    #[test]
    fn errors() {
        let kg = graph(&[(0, 0, 1)]);
        assert_eq!(
            answer_set(&kg, &parse_efo("r1(s:0,f)").unwrap()).unwrap_err(),
            OracleError::Ungrounded("r1".into())
        );
        assert!(matches!(
            answer_set(&kg, &parse_efo("r:0(s:9,f)").unwrap()),
            Err(OracleError::EntityOutOfRange { id: 9, .. })
        ));
        assert!(matches!(
            check_entailment(&kg, &parse_efo("r:0(s:0,f)").unwrap(), 4),
            Err(OracleError::EntityOutOfRange { id: 4, .. })
        ));
        let big = KnowledgeGraph::new(
            Arc::new(Vocab::numbered(10_000)),
            Arc::new(Vocab::numbered(1)),
            [Triple::new(0, 0, 1)],
        )
        .unwrap();
        let q = parse_efo("(r:0(s:0,e1))&(r:0(e1,e2))&(r:0(e2,e3))&(r:0(e3,f))").unwrap();
        assert!(matches!(
            answer_set_naive(&big, &q, DEFAULT_NAIVE_BUDGET),
            Err(OracleError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn validation_only_answers_are_excluded() {
        let ents = Arc::new(Vocab::numbered(4));
        let rels = Arc::new(Vocab::numbered(1));
        let s = GraphSplit::from_edge_sets(
            ents,
            rels,
            &[Triple::new(0, 0, 1)],
            &[Triple::new(0, 0, 2)],
            &[Triple::new(0, 0, 3)],
        )
        .unwrap();
        let q = parse_efo("r:0(s:0,f)").unwrap();
        let split = answer_split(&s, &q).unwrap();
        assert_eq!(split.a_id, vec![1]);
        assert_eq!(split.a_ood, vec![3]);
        assert_eq!(valid_only_answers(&s, &q).unwrap(), vec![2]);
    }

    #[test]
    fn existential_leaf_and_cycle() {
        let kg = graph(&[(0, 0, 1), (2, 1, 1), (3, 1, 2)]);
        let q = parse_efo("(r:0(s:0,f))&(r:1(e1,f))").unwrap();
        assert_eq!(answer_set(&kg, &q).unwrap(), vec![1]);
        let q = parse_efo("(r:1(e1,e2))&(r:1(e2,f))").unwrap();
        assert_eq!(answer_set(&kg, &q).unwrap(), vec![1]);
        assert_eq!(answer_set_naive(&kg, &q, 100).unwrap(), vec![1]);
    }
}
