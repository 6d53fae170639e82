//! Reordering of conjuncts.
//!
//! A conjunction group is a maximal cluster of nested `&` nodes; its slots
//! are the non-`&` children (atoms or disjunctions) in surface order. Groups
//! are numbered in pre-order, so the groups inside a disjunctive slot come
//! after the group that contains the slot.

use alloc::vec::Vec;

use super::ast::{Formula, QueryAst};
use super::SyntaxError;

fn slots<'a>(f: &'a Formula, out: &mut Vec<&'a Formula>) {
    match f {
        Formula::And(cs) => cs.iter().for_each(|c| slots(c, out)),
        other => out.push(other),
    }
}

fn group_sizes(f: &Formula, out: &mut Vec<usize>) {
    match f {
        Formula::Atom(_) => {}
        Formula::Or(cs) => cs.iter().for_each(|c| group_sizes(c, out)),
        Formula::And(_) => {
            let mut s = Vec::new();
            slots(f, &mut s);
            out.push(s.len());
            for slot in s {
                group_sizes(slot, out);
            }
        }
    }
}

/// Slot count of every conjunction group, in pre-order.
pub fn conjunction_groups(ast: &QueryAst) -> Vec<usize> {
    let mut out = Vec::new();
    group_sizes(ast.root(), &mut out);
    out
}

fn refill(shape: &Formula, items: &mut impl Iterator<Item = Formula>) -> Formula {
    match shape {
        Formula::And(cs) => Formula::And(cs.iter().map(|c| refill(c, items)).collect()),
        _ => items.next().expect("slot count preserved"),
    }
}

fn rebuild<'p>(
    f: &Formula,
    perms: &mut impl Iterator<Item = &'p Vec<usize>>,
) -> Result<Formula, SyntaxError> {
    match f {
        Formula::Atom(_) => Ok(f.clone()),
        Formula::Or(cs) => cs
            .iter()
            .map(|c| rebuild(c, perms))
            .collect::<Result<_, _>>()
            .map(Formula::Or),
        Formula::And(_) => {
            let perm = perms
                .next()
                .ok_or(SyntaxError::InvalidPermutation("fewer permutations than groups"))?;
            let mut s = Vec::new();
            slots(f, &mut s);
            if perm.len() != s.len() {
                return Err(SyntaxError::InvalidPermutation("length differs from group size"));
            }
            let mut seen = alloc::vec![false; s.len()];
            for &p in perm {
                if p >= s.len() || core::mem::replace(&mut seen[p], true) {
                    return Err(SyntaxError::InvalidPermutation("not a permutation"));
                }
            }
            let mut inner = s
                .into_iter()
                .map(|slot| rebuild(slot, perms).map(Some))
                .collect::<Result<Vec<_>, _>>()?;
            let mut ordered = perm.iter().map(|&p| inner[p].take().expect("checked distinct"));
            Ok(refill(f, &mut ordered))
        }
    }
}

/// Reorders the slots of every conjunction group: new slot `k` of group `g`
/// is old slot `perms[g][k]`. The nesting shape of each group is kept.
pub fn permute_atoms(ast: &QueryAst, perms: &[Vec<usize>]) -> Result<QueryAst, SyntaxError> {
    let mut it = perms.iter();
    let root = rebuild(ast.root(), &mut it)?;
    if it.next().is_some() {
        return Err(SyntaxError::InvalidPermutation("more permutations than groups"));
    }
    Ok(QueryAst::new_unchecked(root))
}

/// Reverses the slot order of every conjunction group.
pub fn reverse_permutation(ast: &QueryAst) -> QueryAst {
    let perms: Vec<Vec<usize>> = conjunction_groups(ast)
        .into_iter()
        .map(|n| (0..n).rev().collect())
        .collect();
    permute_atoms(ast, &perms).expect("reversal is a valid permutation")
}
