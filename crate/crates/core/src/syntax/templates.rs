//! The 55 benchmark query types: 23 seen during training and 32 held out
//! for evaluation.

use super::ast::QueryAst;
use super::efo::parse_efo;
use super::token::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Features {
    /// Several relation edges share the same endpoints.
    pub mul: bool,
    pub cyc: bool,
    /// An existential variable with no anchored path into it.
    pub exi: bool,
    pub neg: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QueryType {
    pub id: usize,
    pub name: &'static str,
    pub features: Features,
    /// Longest chain of relation projections.
    pub depth: usize,
    pub formula: &'static str,
    pub seen: bool,
}

impl QueryType {
    /// The ungrounded template AST.
    pub fn template(&self) -> QueryAst {
        parse_efo(self.formula).expect("built-in templates parse")
    }
}

const fn qt(id: usize, name: &'static str, f: [bool; 4], depth: usize, formula: &'static str) -> QueryType {
    QueryType {
        id,
        name,
        features: Features {
            mul: f[0],
            cyc: f[1],
            exi: f[2],
            neg: f[3],
        },
        depth,
        formula,
        seen: id < SEEN_COUNT,
    }
}

pub const SEEN_COUNT: usize = 23;
pub const UNSEEN_COUNT: usize = 32;

static TYPES: [QueryType; SEEN_COUNT + UNSEEN_COUNT] = [
    qt(0, "1p", [false, false, false, false], 1, "r1(s1,f)"),
    qt(1, "2p", [false, false, false, false], 2, "(r1(s1,e1))&(r2(e1,f))"),
    qt(2, "3p", [false, false, false, false], 3, "(r1(s1,e1))&(r2(e1,e2))&(r3(e2,f))"),
    qt(3, "2i", [false, false, false, false], 1, "(r1(s1,f))&(r2(s2,f))"),
    qt(4, "3i", [false, false, false, false], 1, "(r1(s1,f))&(r2(s2,f))&(r3(s3,f))"),
    qt(5, "ip", [false, false, false, false], 2, "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,f))"),
    qt(6, "pi", [false, false, false, false], 2, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,f))"),
    qt(7, "2in", [false, false, false, true], 1, "(r1(s1,f))&(!(r2(s2,f)))"),
    qt(8, "3in", [false, false, false, true], 1, "(r1(s1,f))&(r2(s2,f))&(!(r3(s3,f)))"),
    qt(9, "inp", [false, false, false, true], 2, "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f))"),
    qt(10, "pin", [false, false, false, true], 2, "(r1(s1,e1))&(r2(e1,f))&(!(r3(s2,f)))"),
    qt(11, "pni", [false, false, false, true], 2, "(r1(s1,e1))&(!(r2(e1,f)))&(r3(s2,f))"),
    qt(12, "2u", [false, false, false, false], 1, "(r1(s1,f))|(r2(s2,f))"),
    qt(13, "up", [false, false, false, false], 2, "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))"),
    qt(14, "2m", [true, false, false, false], 2, "(r1(s1,e1))&(r2(e1,f))&(r3(e1,f))"),
    qt(15, "2nm", [true, false, false, true], 2, "(r1(s1,e1))&(r2(e1,f))&(!(r3(e1,f)))"),
    qt(16, "3mp", [true, false, false, false], 3, "(r1(s1,e1))&(r2(e1,e2))&(r3(e2,f))&(r4(e1,e2))"),
    qt(17, "3pm", [true, false, false, false], 3, "(r1(s1,e1))&(r2(e1,e2))&(r3(e2,f))&(r4(e2,f))"),
    qt(18, "im", [true, false, false, false], 2, "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,f))&(r4(e1,f))"),
    qt(19, "2il", [false, false, true, false], 1, "(r1(s1,f))&(r2(e1,f))"),
    qt(20, "3il", [false, false, true, false], 1, "(r1(s1,f))&(r2(s2,f))&(r3(e1,f))"),
    qt(21, "3c", [false, true, false, false], 3, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(r5(e1,e2))"),
    qt(22, "3cm", [true, true, false, false], 3, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(r5(e1,e2))&(r6(e1,f))"),
    qt(23, "2pi", [false, false, false, false], 2, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))"),
    qt(24, "2pu", [false, false, false, false], 2, "((r1(s1,e1))&(r3(e1,f)))|((r2(s2,e2))&(r4(e2,f)))"),
    qt(25, "ui", [false, false, false, false], 2, "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))&(r4(s3,f))"),
    qt(26, "iu", [false, false, false, false], 2, "((r1(s1,e1))&(r2(s2,e1))&(r3(e1,f)))|(r4(s3,f))"),
    qt(27, "upi", [false, false, false, false], 2, "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))&(r4(s3,e2))&(r5(e2,f))"),
    qt(28, "ipu", [false, false, false, false], 2, "((r1(s1,e1))&(r2(s2,e1))&(r3(e1,f)))|((r4(s3,e2))&(r5(e2,f)))"),
    qt(29, "i2p", [false, false, false, false], 3, "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,e2))&(r4(e2,f))"),
    qt(30, "u2p", [false, false, false, false], 3, "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,e2))&(r4(e2,f))"),
    qt(31, "2pin", [false, false, false, true], 2, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(!(r5(s3,f)))"),
    qt(32, "2pni", [false, false, false, true], 2, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(!(r4(e2,f)))"),
    qt(33, "pn3i", [false, false, false, true], 2, "(r1(s1,e1))&(!(r2(e1,f)))&(r3(s2,f))&(r4(s3,f))"),
    qt(34, "in2p", [false, false, false, true], 3, "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,e2))&(r4(e2,f))"),
    qt(35, "inu", [false, false, false, true], 2, "((r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f)))|(r4(s3,f))"),
    qt(36, "inpu", [false, false, false, true], 2, "((r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f)))|((r4(s3,e2))&(r5(e2,f)))"),
    qt(37, "upni", [false, false, false, true], 2, "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))&(r4(s3,e2))&(!(r5(e2,f)))"),
    qt(38, "unpi", [false, false, false, true], 2, "((r1(s1,e1))|(r2(s2,e1)))&(!(r3(e1,f)))&(r4(s3,e2))&(r5(e2,f))"),
    qt(39, "imp", [true, false, false, false], 3, "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,e2))&(r4(e2,f))&(r5(e1,e2))"),
    qt(40, "ipm", [true, false, false, false], 3, "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,e2))&(r4(e2,f))&(r5(e2,f))"),
    qt(41, "3im", [true, false, false, false], 2, "(r1(s1,e1))&(r2(s2,e1))&(r3(s3,e1))&(r4(e1,f))&(r5(e1,f))"),
    qt(42, "pil", [false, false, true, false], 2, "(r1(s1,e1))&(r2(e1,f))&(r3(e2,f))"),
    qt(43, "ilp", [false, false, true, false], 2, "(r1(s1,e1))&(r2(e2,e1))&(r3(e1,f))"),
    qt(44, "p3il", [false, false, true, false], 2, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(r5(e3,f))"),
    qt(45, "i3c", [false, true, false, false], 3, "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,f))&(r4(s3,e2))&(r5(e2,f))&(r6(e1,e2))"),
    qt(46, "i3cm", [true, true, false, false], 3, "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,f))&(r4(s3,e2))&(r5(e2,f))&(r6(e1,e2))&(r7(e1,f))"),
    qt(47, "3inl", [false, false, true, true], 1, "(r1(s1,f))&(!(r2(s2,f)))&(r3(e1,f))"),
    qt(48, "pinl", [false, false, true, true], 2, "(r1(s1,e1))&(r2(e1,f))&(!(r3(s2,f)))&(r4(e2,f))"),
    qt(49, "inm", [true, false, false, true], 2, "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f))&(r4(e1,f))"),
    qt(50, "inmp", [true, false, false, true], 3, "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,e2))&(r4(e2,f))&(r5(e1,e2))"),
    qt(51, "inpm", [true, false, false, true], 3, "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f))&(r4(e2,f))&(r5(e2,f))"),
    qt(52, "3nmp", [true, false, false, true], 3, "(r1(s1,e1))&(r2(e1,e2))&(r3(e2,f))&(!(r4(e1,e2)))"),
    qt(53, "3cn", [false, true, false, true], 3, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(!(r4(e2,f)))&(r5(e1,e2))"),
    qt(54, "3cnm", [true, true, false, true], 3, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(r5(e1,e2))&(!(r6(e1,f)))"),
];

pub fn all() -> &'static [QueryType] {
    &TYPES
}

pub fn seen() -> impl Iterator<Item = &'static QueryType> {
    TYPES.iter().filter(|t| t.seen)
}

pub fn unseen() -> impl Iterator<Item = &'static QueryType> {
    TYPES.iter().filter(|t| !t.seen)
}

pub fn by_name(name: &str) -> Option<&'static QueryType> {
    TYPES.iter().find(|t| t.name == name)
}

/// Longest token sequence over every template.
pub fn max_token_len() -> usize {
    TYPES
        .iter()
        .map(|t| tokenize(&t.template()).len())
        .max()
        .unwrap_or(0)
}
