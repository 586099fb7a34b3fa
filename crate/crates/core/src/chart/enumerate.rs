//! Exhaustive derivation enumeration for small inputs, written without the
//! lattice so it can serve as a reference for the dynamic programs.

use std::collections::HashMap;

use super::{ChartInput, ParseTree, Span};
use crate::error::{Error, Result};
use crate::grammar::{terminal_logprob, Emission, RuleTable};
use crate::numeric::NEG_INF;

type Derivations = Vec<(ParseTree, f64)>;

struct Enumerator<'a> {
    table: &'a RuleTable,
    a: &'a [u32],
    b: Option<&'a [u32]>,
    limit: usize,
    memo: HashMap<(Span, usize), std::rc::Rc<Derivations>>,
}

impl Enumerator<'_> {
    fn leaf(&self, span: Span) -> Option<Emission> {
        let (i, j) = span.a;
        match (self.b, span.b) {
            (None, None) => (j - i == 1).then(|| Emission::Word(self.a[i])),
            (Some(b), Some((k, l))) => {
                let src = match j - i {
                    0 => None,
                    1 => Some(self.a[i]),
                    _ => return None,
                };
                let tgt = match l - k {
                    0 => None,
                    1 => Some(b[k]),
                    _ => return None,
                };
                (src.is_some() || tgt.is_some()).then_some(Emission::Pair { source: src, target: tgt })
            }
            _ => None,
        }
    }

    fn size(span: Span) -> usize {
        (span.a.1 - span.a.0) + span.b.map_or(0, |(k, l)| l - k)
    }

    fn halves(span: Span) -> Vec<(Span, Span)> {
        let (i, j) = span.a;
        let mut out = Vec::new();
        match span.b {
            None => {
                for m in i + 1..j {
                    out.push((Span { a: (i, m), b: None }, Span { a: (m, j), b: None }));
                }
            }
            Some((k, l)) => {
                for m in i..=j {
                    for n in k..=l {
                        let left = Span { a: (i, m), b: Some((k, n)) };
                        let right = Span { a: (m, j), b: Some((n, l)) };
                        if Self::size(left) > 0 && Self::size(right) > 0 {
                            out.push((left, right));
                        }
                    }
                }
            }
        }
        out
    }

    fn derive(&mut self, span: Span, symbol: usize) -> Result<std::rc::Rc<Derivations>> {
        if let Some(d) = self.memo.get(&(span, symbol)) {
            return Ok(d.clone());
        }
        let topo = &self.table.topology;
        let mut out = Vec::new();
        if topo.is_preterminal(symbol) {
            if let Some(e) = self.leaf(span) {
                let lp = terminal_logprob(self.table, symbol, e)?;
                if lp > NEG_INF {
                    out.push((ParseTree::leaf(symbol, span, e), lp));
                }
            }
        } else {
            let n = topo.n_symbols();
            for (ls, rs) in Self::halves(span) {
                for b in 0..n {
                    let left = self.derive(ls, b)?;
                    if left.is_empty() {
                        continue;
                    }
                    for c in 0..n {
                        let rule = self.table.binary[self.table.binary_index(symbol, b, c)];
                        if rule == NEG_INF {
                            continue;
                        }
                        let right = self.derive(rs, c)?;
                        for (lt, lp) in left.iter() {
                            for (rt, rp) in right.iter() {
                                out.push((ParseTree::branch(symbol, lt.clone(), rt.clone()), rule + lp + rp));
                                if out.len() > self.limit {
                                    return Err(Error::LimitExceeded(self.limit));
                                }
                            }
                        }
                    }
                }
            }
        }
        let out = std::rc::Rc::new(out);
        self.memo.insert((span, symbol), out.clone());
        Ok(out)
    }
}

/// Every derivation of `input` with its log-probability (start rule
/// included). Fails with [`Error::LimitExceeded`] once more than `limit`
/// derivations would be produced for any single span and symbol, or in total.
pub fn enumerate_derivations(
    table: &RuleTable,
    input: ChartInput<'_>,
    limit: usize,
) -> Result<Vec<(ParseTree, f64)>> {
    input.check(table)?;
    let (a, b) = match input {
        ChartInput::Sentence(x) => (x, None),
        ChartInput::Pair(a, b) => (a, Some(b)),
    };
    let mut en = Enumerator {
        table,
        a,
        b,
        limit,
        memo: HashMap::new(),
    };
    let root = Span {
        a: (0, a.len()),
        b: b.map(|b| (0, b.len())),
    };
    let mut out = Vec::new();
    for alpha in 0..table.n_symbols() {
        let start = table.start[alpha];
        if start == NEG_INF {
            continue;
        }
        for (t, lp) in en.derive(root, alpha)?.iter() {
            out.push((t.clone(), start + lp));
            if out.len() > limit {
                return Err(Error::LimitExceeded(limit));
            }
        }
    }
    Ok(out)
}
