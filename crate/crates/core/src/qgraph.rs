//! Query graphs and the one-hop adjacency attention mask.
//!
//! Every surface atom `r(h,t)` becomes a relation node wired `h -> r -> t`;
//! a negated atom routes through a negation node, `h -> r -> n -> t`. A query
//! with several DNF conjunctions gets one disjoint subgraph per conjunction;
//! edges that would enter `f` enter a shared union node instead, followed by
//! a single edge `u -> f`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use thiserror::Error;

use crate::syntax::{Formula, QueryAst, Sym, Term, Token, TokenSymbol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Constant(Sym),
    Existential(u32),
    Free,
    Union,
    /// Relation node of the `atom`-th surface atom.
    Relation { atom: usize, relation: Sym },
    Negation { atom: usize },
}

impl NodeKind {
    pub fn kind_name(&self) -> &'static str {
        match self {
            NodeKind::Constant(_) => "constant",
            NodeKind::Existential(_) => "existential",
            NodeKind::Free => "free",
            NodeKind::Union => "union",
            NodeKind::Relation { .. } => "relation",
            NodeKind::Negation { .. } => "negation",
        }
    }

    pub fn label(&self) -> String {
        let mut s = String::new();
        let _ = match self {
            NodeKind::Constant(c) => write!(s, "s{c}"),
            NodeKind::Existential(k) => write!(s, "e{k}"),
            NodeKind::Free => write!(s, "f"),
            NodeKind::Union => write!(s, "u"),
            NodeKind::Relation { relation, .. } => write!(s, "r{relation}"),
            NodeKind::Negation { .. } => write!(s, "n"),
        };
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryGraph {
    pub nodes: Vec<NodeKind>,
    /// Directed `(src, dst)` node index pairs.
    pub edges: Vec<(usize, usize)>,
    /// DNF conjunction each node belongs to; `None` for `f` and `u`.
    pub conjunction: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QGraphError {
    #[error("token {position} does not correspond to any node of the query graph")]
    Unmappable { position: usize },
}

impl QueryGraph {
    pub fn node_index(&self, kind: NodeKind) -> Option<usize> {
        self.nodes.iter().position(|&n| n == kind)
    }

    /// Every copy of `kind`, one per conjunction it appears in.
    pub fn node_copies(&self, kind: NodeKind) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i] == kind).collect()
    }

    pub fn free_node(&self) -> usize {
        self.node_index(NodeKind::Free).expect("every query graph has f")
    }

    /// Text dump: `node_id kind label` per node, then `src dst` per edge.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "{i} {} {}", n.kind_name(), n.label());
        }
        for (a, b) in &self.edges {
            let _ = writeln!(s, "{a} {b}");
        }
        s
    }

    fn adjacent(&self, a: usize, b: usize) -> bool {
        a == b
            || self
                .edges
                .iter()
                .any(|&(x, y)| (x == a && y == b) || (x == b && y == a))
    }
}

/// Surface-atom indices of each DNF conjunction, in template order.
fn conjunction_atoms(f: &Formula, next: &mut usize) -> Vec<Vec<usize>> {
    match f {
        Formula::Atom(_) => {
            *next += 1;
            alloc::vec![alloc::vec![*next - 1]]
        }
        Formula::Or(cs) => cs.iter().flat_map(|c| conjunction_atoms(c, next)).collect(),
        Formula::And(cs) => cs.iter().fold(alloc::vec![Vec::new()], |acc, c| {
            let rhs = conjunction_atoms(c, next);
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

pub fn build_query_graph(ast: &QueryAst) -> QueryGraph {
    let atoms = ast.atoms();
    let conjunctions = conjunction_atoms(ast.root(), &mut 0);
    let mut nodes = Vec::new();
    let mut owner = Vec::new();
    for (c, members) in conjunctions.iter().enumerate() {
        for &i in members {
            for t in [atoms[i].head, atoms[i].tail] {
                if let Term::Const(k) = t {
                    if !nodes.iter().zip(&owner).any(|(&n, &o)| n == NodeKind::Constant(k) && o == Some(c)) {
                        nodes.push(NodeKind::Constant(k));
                        owner.push(Some(c));
                    }
                }
            }
        }
    }
    for (c, members) in conjunctions.iter().enumerate() {
        for &i in members {
            for t in [atoms[i].head, atoms[i].tail] {
                if let Term::Var(k) = t {
                    if !nodes.iter().zip(&owner).any(|(&n, &o)| n == NodeKind::Existential(k) && o == Some(c)) {
                        nodes.push(NodeKind::Existential(k));
                        owner.push(Some(c));
                    }
                }
            }
        }
    }
    let free = nodes.len();
    nodes.push(NodeKind::Free);
    owner.push(None);
    let sink = if conjunctions.len() > 1 {
        nodes.push(NodeKind::Union);
        owner.push(None);
        nodes.len() - 1
    } else {
        free
    };
    let mut relation_nodes = Vec::new();
    for (c, members) in conjunctions.iter().enumerate() {
        for &i in members {
            relation_nodes.push((c, i, nodes.len()));
            nodes.push(NodeKind::Relation {
                atom: i,
                relation: atoms[i].relation,
            });
            owner.push(Some(c));
        }
    }
    let index = |nodes: &[NodeKind], owner: &[Option<usize>], t: Term, c: usize| -> usize {
        let kind = match t {
            Term::Const(k) => NodeKind::Constant(k),
            Term::Var(k) => NodeKind::Existential(k),
            Term::Free => return sink,
        };
        (0..nodes.len())
            .find(|&n| nodes[n] == kind && owner[n] == Some(c))
            .expect("term nodes inserted above")
    };
    let mut edges = Vec::new();
    for (c, i, r) in relation_nodes {
        let a = atoms[i];
        edges.push((index(&nodes, &owner, a.head, c), r));
        let tail = index(&nodes, &owner, a.tail, c);
        if a.negated {
            nodes.push(NodeKind::Negation { atom: i });
            owner.push(Some(c));
            let n = nodes.len() - 1;
            edges.push((r, n));
            edges.push((n, tail));
        } else {
            edges.push((r, tail));
        }
    }
    if sink != free {
        edges.push((sink, free));
    }
    QueryGraph { nodes, edges, conjunction: owner }
}

/// Square boolean matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMatrix {
    pub n: usize,
    pub data: Vec<bool>,
}

impl BoolMatrix {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j]
    }
}

/// Graph nodes behind each token, one per conjunction copy; empty for
/// parentheses and operators.
pub fn token_nodes(tokens: &[Token], graph: &QueryGraph) -> Result<Vec<Vec<usize>>, QGraphError> {
    let mut next_atom = 0;
    tokens
        .iter()
        .enumerate()
        .map(|(position, t)| {
            let kind = match t.symbol {
                TokenSymbol::Relation(relation) => {
                    next_atom += 1;
                    NodeKind::Relation {
                        atom: next_atom - 1,
                        relation,
                    }
                }
                TokenSymbol::Constant(c) => NodeKind::Constant(c),
                TokenSymbol::Existential(k) => NodeKind::Existential(k),
                TokenSymbol::Free => NodeKind::Free,
                _ => return Ok(Vec::new()),
            };
            let copies = graph.node_copies(kind);
            if copies.is_empty() {
                return Err(QGraphError::Unmappable { position });
            }
            Ok(copies)
        })
        .collect()
}

/// `mask[i][j]` holds when token `i` may attend to token `j`: their nodes
/// coincide or share an edge in some copy, or either token is structural.
pub fn adjacency_mask(tokens: &[Token], graph: &QueryGraph) -> Result<BoolMatrix, QGraphError> {
    let map = token_nodes(tokens, graph)?;
    let n = tokens.len();
    let mut data = alloc::vec![true; n * n];
    for i in 0..n {
        for j in 0..n {
            if !map[i].is_empty() && !map[j].is_empty() {
                data[i * n + j] = map[i].iter().any(|&a| map[j].iter().any(|&b| graph.adjacent(a, b)));
            }
        }
    }
    Ok(BoolMatrix { n, data })
}
