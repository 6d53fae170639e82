//! Lisp-like set-operator syntax: `(p,(r),(X))` projects set `X` over
//! relation `r`, `(i,..)` intersects, `(u,..)` unions, `(n,X)` complements,
//! and `(s1)` is an anchor entity.
//!
//! The syntax only reaches tree-shaped queries in which every existential
//! feeds exactly one atom and negation wraps a projection from an anchor.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::ast::{Atom, Formula, QueryAst, Sym, Term};
use super::efo::{parse_symbol, Symbol};
use super::SyntaxError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LispExpr {
    Anchor(Sym),
    Project { relation: Sym, input: Box<LispExpr> },
    Intersect(Vec<LispExpr>),
    Union(Vec<LispExpr>),
    Negate(Box<LispExpr>),
}

impl fmt::Display for LispExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, op: &str, xs: &[LispExpr]| {
            write!(f, "({op}")?;
            for x in xs {
                write!(f, ",{x}")?;
            }
            f.write_str(")")
        };
        match self {
            LispExpr::Anchor(s) => write!(f, "(s{s})"),
            LispExpr::Project { relation, input } => write!(f, "(p,(r{relation}),{input})"),
            LispExpr::Intersect(xs) => list(f, "i", xs),
            LispExpr::Union(xs) => list(f, "u", xs),
            LispExpr::Negate(x) => write!(f, "(n,{x})"),
        }
    }
}

enum Node {
    Leaf(usize, String),
    Op(String, Vec<Node>),
}

struct Reader<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, byte: u8) -> Result<(), SyntaxError> {
        self.skip_ws();
        match self.src.get(self.pos) {
            Some(&b) if b == byte => {
                self.pos += 1;
                Ok(())
            }
            _ if byte == b')' => Err(SyntaxError::UnbalancedParens(self.pos)),
            Some(&b) => Err(SyntaxError::UnexpectedChar {
                pos: self.pos,
                ch: b as char,
            }),
            None => Err(SyntaxError::UnexpectedEnd),
        }
    }

    fn node(&mut self) -> Result<Node, SyntaxError> {
        self.eat(b'(')?;
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b':')
        {
            self.pos += 1;
        }
        let word = core::str::from_utf8(&self.src[start..self.pos])
            .unwrap_or("")
            .to_string();
        if word.is_empty() {
            return Err(match self.src.get(self.pos) {
                Some(&b) => SyntaxError::UnexpectedChar {
                    pos: self.pos,
                    ch: b as char,
                },
                None => SyntaxError::UnexpectedEnd,
            });
        }
        let mut args = Vec::new();
        loop {
            self.skip_ws();
            match self.src.get(self.pos) {
                Some(b',') => {
                    self.pos += 1;
                    args.push(self.node()?);
                }
                _ => break,
            }
        }
        self.eat(b')')?;
        Ok(if args.is_empty() {
            Node::Leaf(start, word)
        } else {
            Node::Op(word, args)
        })
    }
}

fn to_expr(node: Node) -> Result<LispExpr, SyntaxError> {
    match node {
        Node::Leaf(pos, w) => match w.as_str() {
            "p" => Err(arity('p', "2", 0)),
            "n" => Err(arity('n', "1", 0)),
            "i" => Err(arity('i', "at least 2", 0)),
            "u" => Err(arity('u', "at least 2", 0)),
            _ => match parse_symbol(&w) {
                Some(Symbol::Term(Term::Const(s))) => Ok(LispExpr::Anchor(s)),
                Some(Symbol::Relation(_)) => Err(SyntaxError::Malformed(
                    "a relation may only appear as the first argument of p",
                )),
                _ => Err(SyntaxError::UnknownSymbol { pos, text: w }),
            },
        },
        Node::Op(op, args) => match op.as_str() {
            "p" => {
                if args.len() != 2 {
                    return Err(arity('p', "2", args.len()));
                }
                let mut it = args.into_iter();
                let relation = match it.next() {
                    Some(Node::Leaf(pos, w)) => match parse_symbol(&w) {
                        Some(Symbol::Relation(s)) => s,
                        _ => return Err(SyntaxError::UnknownSymbol { pos, text: w }),
                    },
                    _ => {
                        return Err(SyntaxError::Malformed(
                            "first argument of p must be a relation",
                        ))
                    }
                };
                let input = to_expr(it.next().expect("arity checked"))?;
                Ok(LispExpr::Project {
                    relation,
                    input: Box::new(input),
                })
            }
            "n" => {
                if args.len() != 1 {
                    return Err(arity('n', "1", args.len()));
                }
                let inner = to_expr(args.into_iter().next().expect("arity checked"))?;
                Ok(LispExpr::Negate(Box::new(inner)))
            }
            "i" | "u" => {
                if args.len() < 2 {
                    return Err(arity(op.as_bytes()[0] as char, "at least 2", args.len()));
                }
                let xs = args.into_iter().map(to_expr).collect::<Result<Vec<_>, _>>()?;
                Ok(if op == "i" {
                    LispExpr::Intersect(xs)
                } else {
                    LispExpr::Union(xs)
                })
            }
            _ => Err(SyntaxError::UnknownOperator(op)),
        },
    }
}

fn arity(op: char, expected: &'static str, found: usize) -> SyntaxError {
    SyntaxError::Arity {
        op,
        expected,
        found,
    }
}

/// Output slot of a partially compiled set; replaced once the set is bound
/// to a variable. `e0` is never a valid user variable.
const HOLE: Term = Term::Var(0);

fn fill(formula: Formula, with: Term) -> Formula {
    formula.map_atoms(&mut |a| {
        a.map_terms(&mut |t| if t == HOLE { with } else { t })
    })
}

fn conj(mut parts: Vec<Formula>) -> Formula {
    if parts.len() == 1 {
        parts.pop().expect("len checked")
    } else {
        Formula::And(parts)
    }
}

/// Compiles `expr` into conjuncts whose answer variable is [`HOLE`].
/// Existentials are numbered innermost-first.
fn compile(expr: &LispExpr, next_var: &mut u32) -> Result<Vec<Formula>, SyntaxError> {
    match expr {
        LispExpr::Anchor(_) => Err(SyntaxError::Malformed(
            "an anchor must be projected before it can be combined",
        )),
        LispExpr::Project { relation, input } => match **input {
            LispExpr::Anchor(s) => Ok(alloc::vec![Formula::atom(*relation, Term::Const(s), HOLE)]),
            ref inner => {
                let parts = compile(inner, next_var)?;
                let v = Term::Var(*next_var);
                *next_var += 1;
                let mut out: Vec<Formula> = parts.into_iter().map(|p| fill(p, v)).collect();
                out.push(Formula::atom(*relation, v, HOLE));
                Ok(out)
            }
        },
        LispExpr::Intersect(xs) => {
            let mut out = Vec::new();
            for x in xs {
                out.extend(compile(x, next_var)?);
            }
            Ok(out)
        }
        LispExpr::Union(xs) => {
            let mut branches = Vec::with_capacity(xs.len());
            for x in xs {
                branches.push(conj(compile(x, next_var)?));
            }
            Ok(alloc::vec![Formula::Or(branches)])
        }
        LispExpr::Negate(x) => {
            if !matches!(**x, LispExpr::Project { .. }) {
                return Err(SyntaxError::NotExpressible(
                    "negation must wrap a projection to stay in the EFO fragment",
                ));
            }
            let mut parts = compile(x, next_var)?;
            match parts.last_mut() {
                Some(Formula::Atom(a)) if !a.negated => *a = a.negate(),
                _ => {
                    return Err(SyntaxError::NotExpressible(
                        "negation must wrap a projection to stay in the EFO fragment",
                    ))
                }
            }
            Ok(parts)
        }
    }
}

/// Parses a Lisp-like query and compiles it to an EFO AST. The outermost set
/// becomes the free variable `f`.
pub fn parse_lisp(text: &str) -> Result<QueryAst, SyntaxError> {
    if text.trim().is_empty() {
        return Err(SyntaxError::Empty);
    }
    let mut r = Reader {
        src: text.as_bytes(),
        pos: 0,
    };
    let node = r.node()?;
    r.skip_ws();
    if r.pos < r.src.len() {
        return Err(if r.src[r.pos] == b')' {
            SyntaxError::UnbalancedParens(r.pos)
        } else {
            SyntaxError::UnexpectedChar {
                pos: r.pos,
                ch: r.src[r.pos] as char,
            }
        });
    }
    let expr = to_expr(node)?;
    let mut next_var = 1;
    let root = fill(conj(compile(&expr, &mut next_var)?), Term::Free);
    QueryAst::new(root)
}

struct Converter {
    existential_uses: alloc::collections::BTreeMap<u32, usize>,
    consumed: usize,
}

impl Converter {
    fn contributions(
        &mut self,
        node: &Formula,
        target: Term,
        scope: &Formula,
    ) -> Result<Vec<LispExpr>, SyntaxError> {
        match node {
            Formula::Atom(a) if a.tail == target => Ok(alloc::vec![self.project(a, scope)?]),
            Formula::Atom(_) => Ok(Vec::new()),
            Formula::And(cs) => {
                let mut out = Vec::new();
                for c in cs {
                    out.extend(self.contributions(c, target, scope)?);
                }
                Ok(out)
            }
            Formula::Or(cs) => {
                let mut branches = Vec::with_capacity(cs.len());
                for c in cs {
                    branches.push(self.contributions(c, target, c)?);
                }
                if branches.iter().all(Vec::is_empty) {
                    Ok(Vec::new())
                } else if branches.iter().any(Vec::is_empty) {
                    Err(SyntaxError::NotExpressible(
                        "a disjunction mixes branches for different variables",
                    ))
                } else {
                    Ok(alloc::vec![LispExpr::Union(
                        branches.into_iter().map(intersect).collect()
                    )])
                }
            }
        }
    }

    fn project(&mut self, atom: &Atom, scope: &Formula) -> Result<LispExpr, SyntaxError> {
        self.consumed += 1;
        let input = match atom.head {
            Term::Const(s) => LispExpr::Anchor(s),
            Term::Var(k) => {
                if atom.negated {
                    return Err(SyntaxError::NotExpressible(
                        "negation over a projected set",
                    ));
                }
                let uses = self.existential_uses.entry(k).or_insert(0);
                *uses += 1;
                if *uses > 1 {
                    return Err(SyntaxError::NotExpressible(
                        "an existential feeds more than one atom (multi-edge or cycle)",
                    ));
                }
                let parts = self.contributions(scope, Term::Var(k), scope)?;
                if parts.is_empty() {
                    return Err(SyntaxError::NotExpressible(
                        "an existential has no defining atom",
                    ));
                }
                intersect(parts)
            }
            Term::Free => {
                return Err(SyntaxError::NotExpressible(
                    "the free variable cannot be an atom head",
                ))
            }
        };
        let p = LispExpr::Project {
            relation: atom.relation,
            input: Box::new(input),
        };
        Ok(if atom.negated {
            LispExpr::Negate(Box::new(p))
        } else {
            p
        })
    }
}

fn intersect(mut parts: Vec<LispExpr>) -> LispExpr {
    if parts.len() == 1 {
        parts.pop().expect("len checked")
    } else {
        LispExpr::Intersect(parts)
    }
}

/// Builds the set-operator tree for `ast`, or reports why it has none.
pub fn to_lisp_expr(ast: &QueryAst) -> Result<LispExpr, SyntaxError> {
    let mut c = Converter {
        existential_uses: Default::default(),
        consumed: 0,
    };
    let root = ast.root();
    let parts = c.contributions(root, Term::Free, root)?;
    if parts.is_empty() {
        return Err(SyntaxError::NotExpressible("no atom ends in the free variable"));
    }
    if c.consumed != ast.num_atoms() {
        return Err(SyntaxError::NotExpressible(
            "some atoms do not lie on a path into the free variable",
        ));
    }
    Ok(intersect(parts))
}

pub fn convert_to_lisp(ast: &QueryAst) -> Result<String, SyntaxError> {
    to_lisp_expr(ast).map(|e| e.to_string())
}
