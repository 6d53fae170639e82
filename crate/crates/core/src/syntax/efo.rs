use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use super::ast::{Atom, Formula, QueryAst, Sym, Term};
use super::SyntaxError;

/// Parses an EFO query string.
///
/// `&` and `|` are left-associative with equal precedence; a run of the same
/// operator becomes one n-ary node. Parentheses group: `((a)&(b))&(c)` keeps
/// its inner conjunction as a child. `!` must be followed by a parenthesized
/// single atom.
pub fn parse_efo(text: &str) -> Result<QueryAst, SyntaxError> {
    if text.trim().is_empty() {
        return Err(SyntaxError::Empty);
    }
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let root = p.formula()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(if p.src[p.pos] == b')' {
            SyntaxError::UnbalancedParens(p.pos)
        } else {
            SyntaxError::UnexpectedChar {
                pos: p.pos,
                ch: p.src[p.pos] as char,
            }
        });
    }
    QueryAst::new(root)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Op {
    And,
    Or,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, byte: u8) -> Result<(), SyntaxError> {
        match self.peek() {
            Some(b) if b == byte => {
                self.pos += 1;
                Ok(())
            }
            _ if byte == b')' => Err(SyntaxError::UnbalancedParens(self.pos)),
            Some(b) => Err(SyntaxError::UnexpectedChar {
                pos: self.pos,
                ch: b as char,
            }),
            None => Err(SyntaxError::UnexpectedEnd),
        }
    }

    fn formula(&mut self) -> Result<Formula, SyntaxError> {
        let mut children = alloc::vec![self.unit()?];
        let mut op: Option<Op> = None;
        loop {
            let next = match self.peek() {
                Some(b'&') => Op::And,
                Some(b'|') => Op::Or,
                _ => break,
            };
            self.pos += 1;
            match op {
                Some(cur) if cur != next => {
                    let folded = node(cur, core::mem::take(&mut children));
                    children.push(folded);
                }
                _ => {}
            }
            op = Some(next);
            children.push(self.unit()?);
        }
        Ok(match op {
            None => children.pop().expect("one unit parsed"),
            Some(op) => node(op, children),
        })
    }

    fn unit(&mut self) -> Result<Formula, SyntaxError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.formula()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(b'!') => {
                let at = self.pos;
                self.pos += 1;
                self.expect(b'(')?;
                let inner = self.formula()?;
                self.expect(b')')?;
                match inner {
                    Formula::Atom(a) if !a.negated => Ok(Formula::Atom(a.negate())),
                    Formula::Atom(_) | Formula::And(_) => Err(SyntaxError::NegationOfCompound(at)),
                    Formula::Or(_) => Err(SyntaxError::DisjunctionUnderNegation(at)),
                }
            }
            Some(_) => self.atom().map(Formula::Atom),
            None => Err(SyntaxError::UnexpectedEnd),
        }
    }

    fn word(&mut self) -> (usize, &str) {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b':')
        {
            self.pos += 1;
        }
        // ascii-only by construction
        (start, core::str::from_utf8(&self.src[start..self.pos]).unwrap_or(""))
    }

    fn atom(&mut self) -> Result<Atom, SyntaxError> {
        let (at, w) = self.word();
        if w.is_empty() {
            return Err(match self.src.get(self.pos) {
                Some(&b) => SyntaxError::UnexpectedChar {
                    pos: self.pos,
                    ch: b as char,
                },
                None => SyntaxError::UnexpectedEnd,
            });
        }
        let relation = match parse_symbol(w) {
            Some(Symbol::Relation(s)) => s,
            _ => return Err(unknown(at, w)),
        };
        self.expect(b'(')?;
        let head = self.term()?;
        self.expect(b',')?;
        let tail = self.term()?;
        self.expect(b')')?;
        Ok(Atom::new(relation, head, tail))
    }

    fn term(&mut self) -> Result<Term, SyntaxError> {
        let (at, w) = self.word();
        if w.is_empty() {
            return match self.src.get(self.pos) {
                Some(&b) => Err(SyntaxError::UnexpectedChar {
                    pos: self.pos,
                    ch: b as char,
                }),
                None => Err(SyntaxError::UnexpectedEnd),
            };
        }
        match parse_symbol(w) {
            Some(Symbol::Term(t)) => Ok(t),
            _ => Err(unknown(at, w)),
        }
    }
}

fn node(op: Op, children: Vec<Formula>) -> Formula {
    match op {
        Op::And => Formula::And(children),
        Op::Or => Formula::Or(children),
    }
}

fn unknown(pos: usize, text: &str) -> SyntaxError {
    SyntaxError::UnknownSymbol {
        pos,
        text: text.to_string(),
    }
}

pub(crate) enum Symbol {
    Relation(Sym),
    Term(Term),
}

/// Classifies `r3`, `r:17`, `s1`, `s:204`, `e2`, `f`.
pub(crate) fn parse_symbol(w: &str) -> Option<Symbol> {
    if w == "f" {
        return Some(Symbol::Term(Term::Free));
    }
    let (class, rest) = w.split_at(1);
    let sym = |rest: &str| -> Option<Sym> {
        if let Some(id) = rest.strip_prefix(':') {
            digits(id).map(Sym::Id)
        } else {
            digits(rest).map(Sym::Slot)
        }
    };
    match class {
        "r" => sym(rest).map(Symbol::Relation),
        "s" => sym(rest).map(|s| Symbol::Term(Term::Const(s))),
        "e" => digits(rest).map(|k| Symbol::Term(Term::Var(k))),
        _ => None,
    }
}

fn digits(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Receives the surface symbols of a formula in order. Shared by the string
/// serializer and the tokenizer so the two can never drift apart.
pub(crate) trait Sink {
    fn open(&mut self);
    fn close(&mut self);
    fn and(&mut self);
    fn or(&mut self);
    fn not(&mut self);
    fn comma(&mut self);
    fn relation(&mut self, relation: Sym);
    fn term(&mut self, term: Term);
}

pub(crate) fn emit(formula: &Formula, sink: &mut impl Sink) {
    match formula {
        Formula::Atom(a) => {
            if a.negated {
                sink.not();
                sink.open();
            }
            sink.relation(a.relation);
            sink.open();
            sink.term(a.head);
            sink.comma();
            sink.term(a.tail);
            sink.close();
            if a.negated {
                sink.close();
            }
        }
        Formula::And(cs) | Formula::Or(cs) => {
            let is_and = matches!(formula, Formula::And(_));
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    if is_and {
                        sink.and();
                    } else {
                        sink.or();
                    }
                }
                sink.open();
                emit(c, sink);
                sink.close();
            }
        }
    }
}

struct StringSink(String);

impl Sink for StringSink {
    fn open(&mut self) {
        self.0.push('(');
    }
    fn close(&mut self) {
        self.0.push(')');
    }
    fn and(&mut self) {
        self.0.push('&');
    }
    fn or(&mut self) {
        self.0.push('|');
    }
    fn not(&mut self) {
        self.0.push('!');
    }
    fn comma(&mut self) {
        self.0.push(',');
    }
    fn relation(&mut self, relation: Sym) {
        let _ = write!(self.0, "r{relation}");
    }
    fn term(&mut self, term: Term) {
        let _ = write!(self.0, "{term}");
    }
}

pub fn serialize_efo(ast: &QueryAst) -> String {
    let mut sink = StringSink(String::new());
    emit(ast.root(), &mut sink);
    sink.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::templates;

    #[test]
    fn two_in_parses_into_one_conjunction() {
        let q = parse_efo("(r1(s1,f))&(!(r2(s2,f)))").unwrap();
        let dnf = q.dnf();
        assert_eq!(dnf.len(), 1);
        assert_eq!(dnf[0].len(), 2);
        assert!(!dnf[0][0].negated);
        assert!(dnf[0][1].negated);
        assert_eq!(dnf[0][1].head, Term::Const(Sym::Slot(2)));
        assert_eq!(dnf[0][1].tail, Term::Free);
    }

    #[test]
    fn two_u_is_two_conjunctions() {
        let q = parse_efo("(r1(s1,f))|(r2(s2,f))").unwrap();
        let dnf = q.dnf();
        assert_eq!(dnf.len(), 2);
        assert!(dnf.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_efo("(r1(s1,e1))&(r2(e1,f)"),
            Err(SyntaxError::UnbalancedParens(_))
        ));
        assert!(matches!(
            parse_efo("(r1(s1,f)))"),
            Err(SyntaxError::UnbalancedParens(_))
        ));
        assert!(matches!(
            parse_efo("x1(s1,f)"),
            Err(SyntaxError::UnknownSymbol { .. })
        ));
        assert!(matches!(
            parse_efo("r1(q1,f)"),
            Err(SyntaxError::UnknownSymbol { .. })
        ));
        assert_eq!(parse_efo("r1(s1,e1)").unwrap_err(), SyntaxError::MissingFreeVariable);
        assert!(matches!(
            parse_efo("(r3(s3,f))&(!((r1(s1,f))|(r2(s2,f))))"),
            Err(SyntaxError::DisjunctionUnderNegation(_))
        ));
        assert!(matches!(
            parse_efo("!((r1(s1,f))&(r2(s2,f)))"),
            Err(SyntaxError::NegationOfCompound(_))
        ));
        assert_eq!(parse_efo("  ").unwrap_err(), SyntaxError::Empty);
        assert_eq!(parse_efo("r1(s1,e0)&(r2(e0,f))").unwrap_err(), SyntaxError::InvalidVariableIndex);
    }

    #[test]
    fn one_p_serializes_bare() {
        let q = parse_efo("r1(s1,f)").unwrap();
        assert_eq!(serialize_efo(&q), "r1(s1,f)");
        // redundant outer parentheses are dropped
        assert_eq!(serialize_efo(&parse_efo("(r1(s1,f))").unwrap()), "r1(s1,f)");
    }

    #[test]
    fn grounded_symbols_round_trip() {
        let s = "(r:17(s:204,e1))&(!(r:3(e1,f)))&(r:0(s:0,f))";
        assert_eq!(serialize_efo(&parse_efo(s).unwrap()), s);
    }

    #[test]
    fn every_template_round_trips_verbatim() {
        for qt in templates::all() {
            let ast = parse_efo(qt.formula).unwrap();
            let once = serialize_efo(&ast);
            assert_eq!(once, qt.formula, "{}", qt.name);
            let twice = serialize_efo(&parse_efo(&once).unwrap());
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn whitespace_is_ignored() {
        let q = parse_efo(" ( r1 ( s1 , e1 ) ) & ( r2 ( e1 , f ) ) ").unwrap();
        assert_eq!(serialize_efo(&q), "(r1(s1,e1))&(r2(e1,f))");
    }

    #[test]
    fn mixed_operators_fold_left() {
        let q = parse_efo("(r1(s1,f))&(r2(s2,f))|(r3(s3,f))").unwrap();
        assert_eq!(serialize_efo(&q), "((r1(s1,f))&(r2(s2,f)))|(r3(s3,f))");
    }
}
