//! Core algorithms for existential first-order (EFO) query answering over
//! knowledge graphs.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure: file
//! formats, the command line, and parallel orchestration live in the `efoent`
//! companion crate.
//!
//! Layout:
//!
//! * [`kg`]: triple store, vocabularies, nested train/valid/test splits.
//! * [`syntax`]: EFO and Lisp-like query syntax, tokenization, atom permutation,
//!   and the 55 query templates.
//! * [`qgraph`]: query graphs and the adjacency attention mask.
//! * [`oracle`]: exact answer sets and the ID/OOD answer split.
//! * [`sampler`]: grounded query generation and dataset assembly.
//! * [`autodiff`]: dense tensors, a reverse-mode tape, loss and Adam.
//! * [`model`]: the transformer encoder with absolute, relative and
//!   logic-aware relative positional encodings.
//! * [`eval`]: filtered ranking, MRR and the four-cell report; [`train`] runs
//!   the optimisation loop.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod eval;
pub mod kg;
pub mod model;
pub mod oracle;
pub mod qgraph;
pub mod rng;
pub mod sampler;
pub mod syntax;
pub mod train;

pub use kg::{Direction, EntityId, GraphSplit, KnowledgeGraph, RelationId, Triple, Vocab};
pub use oracle::{answer_set, answer_set_naive, answer_split, check_entailment, AnswerSplit};
pub use syntax::{parse_efo, parse_lisp, QueryAst};
