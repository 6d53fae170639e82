use alloc::vec::Vec;

use super::ast::{QueryAst, Sym, Term};
use super::efo::{emit, Sink};

/// The six token classes seen by the encoder's type-aware attention biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenKind {
    Parenthesis,
    Entity,
    Relation,
    Conjunction,
    Disjunction,
    Negation,
}

impl TokenKind {
    pub const COUNT: usize = 6;

    pub const ALL: [TokenKind; 6] = [
        TokenKind::Parenthesis,
        TokenKind::Entity,
        TokenKind::Relation,
        TokenKind::Conjunction,
        TokenKind::Disjunction,
        TokenKind::Negation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenSymbol {
    Open,
    Close,
    And,
    Or,
    Not,
    Relation(Sym),
    Constant(Sym),
    Existential(u32),
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Token {
    pub kind: TokenKind,
    pub symbol: TokenSymbol,
    pub is_free_variable: bool,
}

impl Token {
    fn new(kind: TokenKind, symbol: TokenSymbol) -> Self {
        Self {
            kind,
            symbol,
            is_free_variable: matches!(symbol, TokenSymbol::Free),
        }
    }
}

struct TokenSink(Vec<Token>);

impl Sink for TokenSink {
    fn open(&mut self) {
        self.0.push(Token::new(TokenKind::Parenthesis, TokenSymbol::Open));
    }
    fn close(&mut self) {
        self.0.push(Token::new(TokenKind::Parenthesis, TokenSymbol::Close));
    }
    fn and(&mut self) {
        self.0.push(Token::new(TokenKind::Conjunction, TokenSymbol::And));
    }
    fn or(&mut self) {
        self.0.push(Token::new(TokenKind::Disjunction, TokenSymbol::Or));
    }
    fn not(&mut self) {
        self.0.push(Token::new(TokenKind::Negation, TokenSymbol::Not));
    }
    // argument order is positional inside the atom's parentheses
    fn comma(&mut self) {}
    fn relation(&mut self, relation: Sym) {
        self.0
            .push(Token::new(TokenKind::Relation, TokenSymbol::Relation(relation)));
    }
    fn term(&mut self, term: Term) {
        let symbol = match term {
            Term::Const(s) => TokenSymbol::Constant(s),
            Term::Var(k) => TokenSymbol::Existential(k),
            Term::Free => TokenSymbol::Free,
        };
        self.0.push(Token::new(TokenKind::Entity, symbol));
    }
}

/// Linearizes `ast` into the symbols of its EFO string, commas dropped.
pub fn tokenize(ast: &QueryAst) -> Vec<Token> {
    let mut sink = TokenSink(Vec::new());
    emit(ast.root(), &mut sink);
    sink.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse_efo, templates};
    use alloc::collections::BTreeSet;
    use TokenKind::*;

    #[test]
    fn two_in_token_kinds() {
        let toks = tokenize(&parse_efo("(r1(s1,f))&(!(r2(s2,f)))").unwrap());
        let kinds: Vec<_> = toks.iter().map(|t| t.kind).collect();
        assert_eq!(
            kinds,
            [
                Parenthesis, Relation, Parenthesis, Entity, Entity, Parenthesis, Parenthesis,
                Conjunction, Parenthesis, Negation, Parenthesis, Relation, Parenthesis, Entity,
                Entity, Parenthesis, Parenthesis, Parenthesis
            ]
        );
        assert_eq!(toks.iter().filter(|t| t.is_free_variable).count(), 2);
    }

    #[test]
    fn one_p_and_two_u() {
        let toks = tokenize(&parse_efo("r1(s1,f)").unwrap());
        assert_eq!(toks.len(), 5);
        assert_eq!(toks.iter().filter(|t| t.is_free_variable).count(), 1);
        let toks = tokenize(&parse_efo("(r1(s1,f))|(r2(s2,f))").unwrap());
        assert_eq!(toks.iter().filter(|t| t.kind == Disjunction).count(), 1);
    }

    #[test]
    fn corpus_uses_all_six_kinds_and_counts_negations() {
        let mut kinds = BTreeSet::new();
        for qt in templates::all() {
            let ast = qt.template();
            let toks = tokenize(&ast);
            kinds.extend(toks.iter().map(|t| t.kind));
            let negs = toks.iter().filter(|t| t.kind == Negation).count();
            assert_eq!(negs, ast.atoms().iter().filter(|a| a.negated).count());
            for t in &toks {
                assert!(!t.is_free_variable || t.kind == Entity);
            }
            // token count = surface length minus commas, with multi-char symbols as one
            let commas = qt.formula.matches(',').count();
            assert_eq!(commas, ast.num_atoms());
        }
        assert_eq!(kinds.len(), TokenKind::COUNT);
    }
}
