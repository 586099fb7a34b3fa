//! Parse trees and their bracketed serialization.
//!
//! Internal nodes render as `(α left right)`, leaves as `(α w)` or
//! `(α wa/wb)` with ε written `<eps>`. Tokens escape `/ ( ) \` and spaces
//! with a backslash. A full tree is wrapped in `(S …)`.

use crate::corpus::{Vocabulary, EPS_TOKEN};
use crate::error::{Error, Result};
use crate::grammar::Emission;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub a: (usize, usize),
    /// Second stream, synchronous trees only.
    pub b: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Leaf(Emission),
    Branch(Box<ParseTree>, Box<ParseTree>),
}

/// A derivation below the start symbol: `symbol` is the nonterminal the
/// start rule rewrote to.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParseTree {
    pub symbol: usize,
    pub span: Span,
    pub node: Node,
}

impl ParseTree {
    pub fn leaf(symbol: usize, span: Span, emission: Emission) -> Self {
        Self {
            symbol,
            span,
            node: Node::Leaf(emission),
        }
    }

    pub fn branch(symbol: usize, left: ParseTree, right: ParseTree) -> Self {
        let span = Span {
            a: (left.span.a.0, right.span.a.1),
            b: match (left.span.b, right.span.b) {
                (Some(l), Some(r)) => Some((l.0, r.1)),
                _ => None,
            },
        };
        Self {
            symbol,
            span,
            node: Node::Branch(Box::new(left), Box::new(right)),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.node, Node::Leaf(_))
    }

    pub fn children(&self) -> Option<(&ParseTree, &ParseTree)> {
        match &self.node {
            Node::Branch(l, r) => Some((l, r)),
            Node::Leaf(_) => None,
        }
    }

    /// Pre-order traversal of every node.
    pub fn nodes(&self) -> Vec<&ParseTree> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(t) = stack.pop() {
            out.push(t);
            if let Some((l, r)) = t.children() {
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    pub fn leaves(&self) -> Vec<Emission> {
        self.nodes()
            .into_iter()
            .filter_map(|n| match n.node {
                Node::Leaf(e) => Some(e),
                Node::Branch(..) => None,
            })
            .collect()
    }

    pub fn n_leaves(&self) -> usize {
        match &self.node {
            Node::Leaf(_) => 1,
            Node::Branch(l, r) => l.n_leaves() + r.n_leaves(),
        }
    }

    /// A lone leaf has depth 1.
    pub fn depth(&self) -> usize {
        match &self.node {
            Node::Leaf(_) => 1,
            Node::Branch(l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Token ids read off the leaves of each stream, ε skipped.
    pub fn yields(&self) -> (Vec<u32>, Vec<u32>) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for e in self.leaves() {
            match e {
                Emission::Word(w) => a.push(w),
                Emission::Pair { source, target } => {
                    a.extend(source);
                    b.extend(target);
                }
            }
        }
        (a, b)
    }

    pub fn render(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        self.render_into(vocab, &mut out);
        out
    }

    fn render_into(&self, vocab: &Vocabulary, out: &mut String) {
        out.push('(');
        out.push_str(&self.symbol.to_string());
        out.push(' ');
        match &self.node {
            Node::Leaf(e) => out.push_str(&render_emission(*e, vocab)),
            Node::Branch(l, r) => {
                l.render_into(vocab, out);
                out.push(' ');
                r.render_into(vocab, out);
            }
        }
        out.push(')');
    }

    /// The full tree, start symbol included.
    pub fn render_with_start(&self, vocab: &Vocabulary) -> String {
        format!("(S {})", self.render(vocab))
    }

    /// Reads a tree written by [`ParseTree::render`] or
    /// [`ParseTree::render_with_start`]; spans are recomputed from the leaves.
    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut p = Reader {
            chars: text.chars().collect(),
            pos: 0,
            vocab,
        };
        p.skip_ws();
        let tree = if text.trim_start().starts_with("(S ") {
            p.expect('(')?;
            p.expect('S')?;
            p.skip_ws();
            let t = p.node(&mut (0, 0))?;
            p.skip_ws();
            p.expect(')')?;
            t
        } else {
            p.node(&mut (0, 0))?
        };
        p.skip_ws();
        if p.pos != p.chars.len() {
            return Err(p.error("trailing input"));
        }
        Ok(tree)
    }
}

pub fn escape_token(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    for ch in token.chars() {
        if matches!(ch, '/' | '(' | ')' | ' ' | '\\') {
            out.push('\\');
        }
        out.push(ch);
    }
    out
}

pub fn render_emission(e: Emission, vocab: &Vocabulary) -> String {
    let word = |w: Option<u32>| match w {
        Some(w) if Some(w) != vocab.eps_id() => escape_token(vocab.token(w)),
        _ => EPS_TOKEN.to_string(),
    };
    match e {
        Emission::Word(w) => escape_token(vocab.token(w)),
        Emission::Pair { source, target } => format!("{}/{}", word(source), word(target)),
    }
}

struct Reader<'v> {
    chars: Vec<char>,
    pos: usize,
    vocab: &'v Vocabulary,
}

impl Reader<'_> {
    fn error(&self, what: &str) -> Error {
        Error::Invalid(format!("malformed tree at offset {}: {what}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos] == ' ' {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.chars.get(self.pos) == Some(&c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected '{c}'")))
        }
    }

    /// Reads an escaped token up to an unescaped space, `)` or `/`.
    fn token(&mut self) -> String {
        let mut out = String::new();
        while let Some(&c) = self.chars.get(self.pos) {
            match c {
                '\\' => {
                    if let Some(&next) = self.chars.get(self.pos + 1) {
                        out.push(next);
                        self.pos += 2;
                    } else {
                        self.pos += 1;
                    }
                }
                ' ' | ')' | '/' | '(' => break,
                _ => {
                    out.push(c);
                    self.pos += 1;
                }
            }
        }
        out
    }

    fn word(&self, token: &str) -> Result<u32> {
        self.vocab
            .lookup(token)
            .ok_or_else(|| self.error(&format!("token {token:?} not in vocabulary")))
    }

    /// `cursor` tracks the next position in each stream.
    fn node(&mut self, cursor: &mut (usize, usize)) -> Result<ParseTree> {
        self.expect('(')?;
        let sym_text = self.token();
        let symbol: usize = sym_text
            .parse()
            .map_err(|_| self.error(&format!("bad symbol {sym_text:?}")))?;
        self.skip_ws();
        let tree = if self.chars.get(self.pos) == Some(&'(') {
            let left = self.node(cursor)?;
            self.skip_ws();
            let right = self.node(cursor)?;
            ParseTree::branch(symbol, left, right)
        } else {
            let first = self.token();
            if self.chars.get(self.pos) == Some(&'/') {
                self.pos += 1;
                let second = self.token();
                let side = |t: &str| -> Result<Option<u32>> {
                    if t == EPS_TOKEN {
                        Ok(None)
                    } else {
                        self.word(t).map(Some)
                    }
                };
                let (source, target) = (side(&first)?, side(&second)?);
                let span = Span {
                    a: (cursor.0, cursor.0 + source.is_some() as usize),
                    b: Some((cursor.1, cursor.1 + target.is_some() as usize)),
                };
                cursor.0 = span.a.1;
                cursor.1 = span.b.unwrap().1;
                ParseTree::leaf(symbol, span, Emission::Pair { source, target })
            } else {
                let w = self.word(&first)?;
                let span = Span {
                    a: (cursor.0, cursor.0 + 1),
                    b: None,
                };
                cursor.0 += 1;
                ParseTree::leaf(symbol, span, Emission::Word(w))
            }
        };
        self.skip_ws();
        self.expect(')')?;
        Ok(tree)
    }
}
