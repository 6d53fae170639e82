//! Query syntax: the EFO formula language, the Lisp-like set-operator
//! language, tokenization, and atom permutations.
//!
//! EFO strings look like `((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))`. Relations
//! `r<k>` and constants `s<k>` are template slots; grounded queries write
//! vocabulary ids instead, as `r:17(s:204,f)`. Existentials are `e<k>` and
//! the free variable is always `f`.
//!
//! The AST keeps the surface tree (grouping and operand order), so
//! `serialize_efo(parse_efo(s)) == s` for every template string. The DNF view
//! used by the oracle is derived on demand with [`QueryAst::dnf`].

mod ast;
mod efo;
mod lisp;
mod permute;
pub mod templates;
mod token;

use alloc::string::String;
use thiserror::Error;

pub use ast::{Atom, Formula, Grounding, QueryAst, Sym, Term};
pub use efo::{parse_efo, serialize_efo};
pub use lisp::{convert_to_lisp, parse_lisp, to_lisp_expr, LispExpr};
pub use permute::{conjunction_groups, permute_atoms, reverse_permutation};
pub use templates::{Features, QueryType};
pub use token::{tokenize, Token, TokenKind, TokenSymbol};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxError {
    #[error("empty query text")]
    Empty,
    #[error("unbalanced parentheses at byte {0}")]
    UnbalancedParens(usize),
    #[error("unexpected character {ch:?} at byte {pos}")]
    UnexpectedChar { pos: usize, ch: char },
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unknown symbol {text:?} at byte {pos}")]
    UnknownSymbol { pos: usize, text: String },
    #[error("the free variable f does not occur in every conjunction")]
    MissingFreeVariable,
    #[error("variable index must be positive (e0 is invalid)")]
    InvalidVariableIndex,
    #[error("disjunction under negation at byte {0} is outside the EFO fragment")]
    DisjunctionUnderNegation(usize),
    #[error("negation at byte {0} must apply to a single atom")]
    NegationOfCompound(usize),
    #[error("operator {op:?} expects {expected} argument(s), found {found}")]
    Arity {
        op: char,
        expected: &'static str,
        found: usize,
    },
    #[error("unknown operator {0:?}")]
    UnknownOperator(String),
    #[error("{0}")]
    Malformed(&'static str),
    #[error("not expressible in Lisp-like syntax: {0}")]
    NotExpressible(&'static str),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(&'static str),
    #[error("placeholder {0} has no grounding")]
    Ungrounded(String),
}
