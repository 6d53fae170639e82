use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use super::SyntaxError;
use crate::kg::{EntityId, RelationId};

/// A relation or constant symbol: either a template slot (`r3`, `s1`) or a
/// grounded vocabulary id (`r:17`, `s:204`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sym {
    Slot(u32),
    Id(u32),
}

impl Sym {
    pub fn id(self) -> Option<u32> {
        match self {
            Sym::Id(id) => Some(id),
            Sym::Slot(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Const(Sym),
    /// Existential `e<k>`, `k >= 1`.
    Var(u32),
    Free,
}

impl Term {
    pub fn is_variable(self) -> bool {
        matches!(self, Term::Var(_) | Term::Free)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Atom {
    pub relation: Sym,
    pub head: Term,
    pub tail: Term,
    pub negated: bool,
}

impl Atom {
    pub fn new(relation: Sym, head: Term, tail: Term) -> Self {
        Self {
            relation,
            head,
            tail,
            negated: false,
        }
    }

    pub fn negate(mut self) -> Self {
        self.negated = !self.negated;
        self
    }

    pub(crate) fn map_terms(self, f: &mut impl FnMut(Term) -> Term) -> Self {
        Self {
            head: f(self.head),
            tail: f(self.tail),
            ..self
        }
    }
}

/// Surface formula tree. Negation lives on atoms, which keeps every tree
/// inside the EFO fragment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Atom(Atom),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    pub fn atom(relation: Sym, head: Term, tail: Term) -> Self {
        Formula::Atom(Atom::new(relation, head, tail))
    }

    pub(crate) fn for_each_atom<'a>(&'a self, f: &mut impl FnMut(&'a Atom)) {
        match self {
            Formula::Atom(a) => f(a),
            Formula::And(cs) | Formula::Or(cs) => cs.iter().for_each(|c| c.for_each_atom(f)),
        }
    }

    pub(crate) fn map_atoms(&self, f: &mut impl FnMut(Atom) -> Atom) -> Formula {
        match self {
            Formula::Atom(a) => Formula::Atom(f(*a)),
            Formula::And(cs) => Formula::And(cs.iter().map(|c| c.map_atoms(f)).collect()),
            Formula::Or(cs) => Formula::Or(cs.iter().map(|c| c.map_atoms(f)).collect()),
        }
    }

    fn dnf(&self) -> Vec<Vec<Atom>> {
        match self {
            Formula::Atom(a) => alloc::vec![alloc::vec![*a]],
            Formula::Or(cs) => cs.iter().flat_map(Formula::dnf).collect(),
            Formula::And(cs) => cs.iter().fold(alloc::vec![Vec::new()], |acc, c| {
                let rhs = c.dnf();
                let mut out = Vec::with_capacity(acc.len() * rhs.len());
                for l in &acc {
                    for r in &rhs {
                        let mut conj = l.clone();
                        conj.extend_from_slice(r);
                        out.push(conj);
                    }
                }
                out
            }),
        }
    }
}

/// Slot -> id assignment for a template.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Grounding {
    pub relations: BTreeMap<u32, RelationId>,
    pub constants: BTreeMap<u32, EntityId>,
}

/// A validated EFO query with a single free variable `f`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QueryAst {
    root: Formula,
}

impl QueryAst {
    /// Wraps `root` after checking that `f` occurs in every conjunction of
    /// the DNF expansion and that variable indices are positive.
    pub fn new(root: Formula) -> Result<Self, SyntaxError> {
        let mut bad_index = false;
        root.for_each_atom(&mut |a| {
            if matches!(a.head, Term::Var(0)) || matches!(a.tail, Term::Var(0)) {
                bad_index = true;
            }
        });
        if bad_index {
            return Err(SyntaxError::InvalidVariableIndex);
        }
        let q = Self { root };
        let free_everywhere = q
            .dnf()
            .iter()
            .all(|c| c.iter().any(|a| a.head == Term::Free || a.tail == Term::Free));
        if !free_everywhere {
            return Err(SyntaxError::MissingFreeVariable);
        }
        Ok(q)
    }

    pub(crate) fn new_unchecked(root: Formula) -> Self {
        Self { root }
    }

    pub fn root(&self) -> &Formula {
        &self.root
    }

    /// Atoms in surface (left-to-right) order.
    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        self.root.for_each_atom(&mut |a| out.push(a));
        out
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms().len()
    }

    /// Disjunctive normal form: one atom list per conjunction. Atoms keep
    /// their surface order inside each conjunction.
    pub fn dnf(&self) -> Vec<Vec<Atom>> {
        self.root.dnf()
    }

    pub fn is_disjunctive(&self) -> bool {
        self.dnf().len() > 1
    }

    /// Existential indices, sorted.
    pub fn existentials(&self) -> Vec<u32> {
        let mut set = BTreeSet::new();
        self.root.for_each_atom(&mut |a| {
            for t in [a.head, a.tail] {
                if let Term::Var(k) = t {
                    set.insert(k);
                }
            }
        });
        set.into_iter().collect()
    }

    pub fn relation_slots(&self) -> Vec<u32> {
        let mut set = BTreeSet::new();
        self.root.for_each_atom(&mut |a| {
            if let Sym::Slot(k) = a.relation {
                set.insert(k);
            }
        });
        set.into_iter().collect()
    }

    pub fn constant_slots(&self) -> Vec<u32> {
        let mut set = BTreeSet::new();
        self.root.for_each_atom(&mut |a| {
            for t in [a.head, a.tail] {
                if let Term::Const(Sym::Slot(k)) = t {
                    set.insert(k);
                }
            }
        });
        set.into_iter().collect()
    }

    pub fn is_grounded(&self) -> bool {
        self.relation_slots().is_empty() && self.constant_slots().is_empty()
    }

    pub fn has_negation(&self) -> bool {
        self.atoms().iter().any(|a| a.negated)
    }

    /// Replaces every slot with its id from `grounding`.
    pub fn ground(&self, grounding: &Grounding) -> Result<QueryAst, SyntaxError> {
        let mut missing = None;
        let root = self.root.map_atoms(&mut |a| {
            let relation = match a.relation {
                Sym::Slot(k) => match grounding.relations.get(&k) {
                    Some(&id) => Sym::Id(id),
                    None => {
                        missing.get_or_insert(format!("r{k}"));
                        a.relation
                    }
                },
                id => id,
            };
            let a = a.map_terms(&mut |t| match t {
                Term::Const(Sym::Slot(k)) => match grounding.constants.get(&k) {
                    Some(&id) => Term::Const(Sym::Id(id)),
                    None => {
                        missing.get_or_insert(format!("s{k}"));
                        t
                    }
                },
                t => t,
            });
            Atom { relation, ..a }
        });
        match missing {
            Some(slot) => Err(SyntaxError::Ungrounded(slot)),
            None => Ok(QueryAst { root }),
        }
    }

    /// Renames existentials to `e1, e2, ...` in order of first occurrence.
    pub fn canonical(&self) -> QueryAst {
        let mut map = BTreeMap::new();
        self.root.for_each_atom(&mut |a| {
            for t in [a.head, a.tail] {
                if let Term::Var(k) = t {
                    let next = map.len() as u32 + 1;
                    map.entry(k).or_insert(next);
                }
            }
        });
        let root = self
            .root
            .map_atoms(&mut |a| a.map_terms(&mut |t| match t {
                Term::Var(k) => Term::Var(map[&k]),
                t => t,
            }));
        QueryAst { root }
    }

    /// Structural equality up to renaming of existentials.
    pub fn alpha_eq(&self, other: &QueryAst) -> bool {
        self.canonical() == other.canonical()
    }
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::serialize_efo(self))
    }
}

impl fmt::Display for Sym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // callers prefix the class letter
        match self {
            Sym::Slot(k) => write!(f, "{k}"),
            Sym::Id(id) => write!(f, ":{id}"),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(s) => write!(f, "s{s}"),
            Term::Var(k) => write!(f, "e{k}"),
            Term::Free => f.write_str("f"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_efo;
    use alloc::string::ToString;

    #[test]
    fn dnf_distributes_and_over_or() {
        let q = parse_efo("((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))").unwrap();
        let d = q.dnf();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].len(), 2);
        assert_eq!(d[0][0].relation, Sym::Slot(1));
        assert_eq!(d[1][0].relation, Sym::Slot(2));
        assert_eq!(d[1][1].relation, Sym::Slot(3));
    }

    #[test]
    fn grounding_replaces_slots() {
        let q = parse_efo("(r1(s1,e1))&(r2(e1,f))").unwrap();
        let mut g = Grounding::default();
        g.relations.insert(1, 4);
        g.constants.insert(1, 9);
        assert_eq!(q.ground(&g).unwrap_err(), SyntaxError::Ungrounded("r2".into()));
        g.relations.insert(2, 0);
        let grounded = q.ground(&g).unwrap();
        assert!(grounded.is_grounded());
        assert_eq!(grounded.to_string(), "(r:4(s:9,e1))&(r:0(e1,f))");
    }

    #[test]
    fn canonical_renames_by_first_use() {
        let a = parse_efo("(r2(e2,f))&(r1(s1,e2))").unwrap();
        let b = parse_efo("(r2(e1,f))&(r1(s1,e1))").unwrap();
        assert_ne!(a, b);
        assert!(a.alpha_eq(&b));
    }

    #[test]
    fn missing_free_variable_in_a_disjunct() {
        assert_eq!(
            parse_efo("(r1(s1,f))|(r2(s2,e1))").unwrap_err(),
            SyntaxError::MissingFreeVariable
        );
    }
}
