//! Exact inference over binary-branching derivations.
//!
//! A sentence (PCFG) or sentence pair (SCFG) is turned into a [`Lattice`]
//! of chart items, each with its ordered list of binary splits. Inside,
//! outside and Viterbi passes run over that lattice independent of grammar
//! kind. Synchronous items are span quadruples `(i, j, k, l)` combining
//! monotonically: `(i, m, k, n) + (m, j, n, l)`.

mod enumerate;
mod tree;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grammar::{Emission, GrammarKind, RuleCounts, RuleTable};
use crate::numeric::{log_add_exp, LogAccumulator, NEG_INF};

pub use enumerate::enumerate_derivations;
pub use tree::{escape_token, render_emission, Node, ParseTree, Span};

/// Input to the chart: a sentence or a sentence pair of token ids.
#[derive(Debug, Clone, Copy)]
pub enum ChartInput<'a> {
    Sentence(&'a [u32]),
    Pair(&'a [u32], &'a [u32]),
}

impl<'a> ChartInput<'a> {
    pub fn from_sides(a: &'a [u32], b: Option<&'a [u32]>) -> Self {
        match b {
            Some(b) => ChartInput::Pair(a, b),
            None => ChartInput::Sentence(a),
        }
    }

    fn check(&self, table: &RuleTable) -> Result<()> {
        match (self, table.topology.kind) {
            (ChartInput::Sentence(s), GrammarKind::Pcfg) if s.is_empty() => {
                Err(Error::Empty("sentence".into()))
            }
            (ChartInput::Pair(a, b), GrammarKind::Scfg) if a.is_empty() || b.is_empty() => {
                Err(Error::Empty("sentence pair side".into()))
            }
            (ChartInput::Sentence(_), GrammarKind::Pcfg) | (ChartInput::Pair(..), GrammarKind::Scfg) => {
                Ok(())
            }
            _ => Err(Error::Invalid("input shape does not match grammar kind".into())),
        }
    }
}

/// Chart items in bottom-up order with their splits and leaf emissions.
#[derive(Debug, Clone)]
pub(crate) struct Lattice {
    spans: Vec<Span>,
    order: Vec<usize>,
    splits: Vec<Vec<(u32, u32)>>,
    leaves: Vec<Option<Emission>>,
    root: usize,
}

impl Lattice {
    fn sentence(x: &[u32]) -> Self {
        let n = x.len();
        let idx = |i: usize, j: usize| i * (n + 1) + j;
        let size = (n + 1) * (n + 1);
        let mut spans = vec![Span { a: (0, 0), b: None }; size];
        let mut splits = vec![Vec::new(); size];
        let mut leaves = vec![None; size];
        let mut order = Vec::new();
        for width in 1..=n {
            for i in 0..=n - width {
                let j = i + width;
                let it = idx(i, j);
                spans[it] = Span { a: (i, j), b: None };
                if width == 1 {
                    leaves[it] = Some(Emission::Word(x[i]));
                }
                splits[it] = (i + 1..j).map(|m| (idx(i, m) as u32, idx(m, j) as u32)).collect();
                order.push(it);
            }
        }
        Self {
            spans,
            order,
            splits,
            leaves,
            root: idx(0, n),
        }
    }

    fn pair(xa: &[u32], xb: &[u32]) -> Self {
        let (na, nb) = (xa.len(), xb.len());
        let idx = |i: usize, j: usize, k: usize, l: usize| ((i * (na + 1) + j) * (nb + 1) + k) * (nb + 1) + l;
        let size = (na + 1) * (na + 1) * (nb + 1) * (nb + 1);
        let mut spans = vec![Span { a: (0, 0), b: None }; size];
        let mut splits = vec![Vec::new(); size];
        let mut leaves = vec![None; size];
        let mut order = Vec::new();
        for weight in 1..=na + nb {
            for wa in 0..=weight.min(na) {
                let wb = weight - wa;
                if wb > nb {
                    continue;
                }
                for i in 0..=na - wa {
                    let j = i + wa;
                    for k in 0..=nb - wb {
                        let l = k + wb;
                        let it = idx(i, j, k, l);
                        spans[it] = Span {
                            a: (i, j),
                            b: Some((k, l)),
                        };
                        leaves[it] = match (wa, wb) {
                            (1, 0) => Some(Emission::pair(Some(xa[i]), None)),
                            (0, 1) => Some(Emission::pair(None, Some(xb[k]))),
                            (1, 1) => Some(Emission::pair(Some(xa[i]), Some(xb[k]))),
                            _ => None,
                        };
                        let mut s = Vec::new();
                        for m in i..=j {
                            for n in k..=l {
                                let left = (m - i) + (n - k);
                                let right = (j - m) + (l - n);
                                if left >= 1 && right >= 1 {
                                    s.push((idx(i, m, k, n) as u32, idx(m, j, n, l) as u32));
                                }
                            }
                        }
                        splits[it] = s;
                        order.push(it);
                    }
                }
            }
        }
        Self {
            spans,
            order,
            splits,
            leaves,
            root: idx(0, na, 0, nb),
        }
    }

    fn new(input: ChartInput<'_>) -> Self {
        match input {
            ChartInput::Sentence(x) => Self::sentence(x),
            ChartInput::Pair(a, b) => Self::pair(a, b),
        }
    }
}

/// Log inside scores for every item and symbol.
#[derive(Debug, Clone)]
pub struct InsideChart {
    lattice: Lattice,
    n_symbols: usize,
    values: Vec<f64>,
    /// `log p(x)`; `-inf` when nothing derives the input.
    pub log_marginal: f64,
}

impl InsideChart {
    /// Inside log score of `symbol` over `span`, `-inf` if the span is not
    /// an item of this chart.
    pub fn value(&self, span: Span, symbol: usize) -> f64 {
        self.lattice
            .order
            .iter()
            .find(|&&it| self.lattice.spans[it] == span)
            .map_or(NEG_INF, |&it| self.values[it * self.n_symbols + symbol])
    }

    pub fn n_items(&self) -> usize {
        self.lattice.order.len()
    }
}

fn leaf_score_map(table: &RuleTable, lattice: &Lattice) -> Result<HashMap<usize, Vec<f64>>> {
    let mut by_emission: HashMap<Emission, Vec<f64>> = HashMap::new();
    let mut out = HashMap::new();
    for &it in &lattice.order {
        if let Some(e) = lattice.leaves[it] {
            let scores = match by_emission.get(&e) {
                Some(s) => s.clone(),
                None => {
                    let s = table.leaf_scores(e)?;
                    by_emission.insert(e, s.clone());
                    s
                }
            };
            out.insert(it, scores);
        }
    }
    Ok(out)
}

/// Writes `exp(v - max)` into `out` and returns the max (`-inf` when every
/// entry is `-inf`, in which case `out` is zeroed).
fn scale_into(v: &[f64], out: &mut [f64]) -> f64 {
    let max = v.iter().copied().fold(NEG_INF, f64::max);
    if max == NEG_INF {
        out.iter_mut().for_each(|x| *x = 0.0);
    } else {
        for (o, &x) in out.iter_mut().zip(v) {
            *o = (x - max).exp();
        }
    }
    max
}

/// Inside scores with each item's vector also kept as `exp(v - max)`.
struct Scaled {
    n: usize,
    max: Vec<f64>,
    prob: Vec<f64>,
}

impl Scaled {
    fn new(items: usize, n: usize) -> Self {
        Self {
            n,
            max: vec![NEG_INF; items],
            prob: vec![0.0; items * n],
        }
    }

    fn set(&mut self, it: usize, v: &[f64]) {
        let n = self.n;
        self.max[it] = scale_into(v, &mut self.prob[it * n..(it + 1) * n]);
    }

    fn row(&self, it: usize) -> &[f64] {
        &self.prob[it * self.n..(it + 1) * self.n]
    }
}

/// Sums `exp(mL + mR - shift) l'_B r'_C` over the splits of an item into
/// `m[B·N + C]`. Returns the shift, `-inf` if no split is derivable.
fn split_mass(splits: &[(u32, u32)], sc: &Scaled, m: &mut [f64]) -> f64 {
    let n = sc.n;
    m.iter_mut().for_each(|x| *x = 0.0);
    let shift = splits
        .iter()
        .map(|&(l, r)| sc.max[l as usize] + sc.max[r as usize])
        .fold(NEG_INF, f64::max);
    if shift == NEG_INF {
        return shift;
    }
    for &(l, r) in splits {
        let (l, r) = (l as usize, r as usize);
        let w = (sc.max[l] + sc.max[r] - shift).exp();
        if w == 0.0 {
            continue;
        }
        let (lrow, rrow) = (sc.row(l), sc.row(r));
        for b in 0..n {
            let lb = w * lrow[b];
            if lb == 0.0 {
                continue;
            }
            let mrow = &mut m[b * n..(b + 1) * n];
            for c in 0..n {
                mrow[c] += lb * rrow[c];
            }
        }
    }
    shift
}

pub fn inside(table: &RuleTable, input: ChartInput<'_>) -> Result<InsideChart> {
    input.check(table)?;
    let lattice = Lattice::new(input);
    let (values, _, _) = inside_pass(table, &lattice)?;
    let n = table.n_symbols();
    let root = lattice.root;
    let mut z = LogAccumulator::default();
    for (alpha, &s) in table.start.iter().enumerate() {
        z.add(s + values[root * n + alpha]);
    }
    Ok(InsideChart {
        lattice,
        n_symbols: n,
        values,
        log_marginal: z.value(),
    })
}

type InsidePass = (Vec<f64>, Scaled, HashMap<usize, Vec<f64>>);

fn inside_pass(table: &RuleTable, lattice: &Lattice) -> Result<InsidePass> {
    let n = table.n_symbols();
    let ni = table.topology.n_internal;
    let leaf_scores = leaf_score_map(table, lattice)?;
    let items = lattice.spans.len();
    let mut values = vec![NEG_INF; items * n];
    let mut sc = Scaled::new(items, n);
    let mut m = vec![0.0; n * n];
    for &it in &lattice.order {
        if let Some(scores) = leaf_scores.get(&it) {
            values[it * n + ni..(it + 1) * n].copy_from_slice(scores);
        }
        let shift = split_mass(&lattice.splits[it], &sc, &mut m);
        if shift > NEG_INF {
            for a in 0..ni {
                let p = &table.binary_prob[a * n * n..(a + 1) * n * n];
                let s: f64 = p.iter().zip(&m).map(|(x, y)| x * y).sum();
                if s > 0.0 {
                    values[it * n + a] = shift + s.ln();
                }
            }
        }
        sc.set(it, &values[it * n..(it + 1) * n]);
    }
    Ok((values, sc, leaf_scores))
}

pub fn inside_pcfg(table: &RuleTable, sentence: &[u32]) -> Result<(f64, InsideChart)> {
    let chart = inside(table, ChartInput::Sentence(sentence))?;
    Ok((chart.log_marginal, chart))
}

pub fn inside_scfg(table: &RuleTable, a: &[u32], b: &[u32]) -> Result<(f64, InsideChart)> {
    let chart = inside(table, ChartInput::Pair(a, b))?;
    Ok((chart.log_marginal, chart))
}

/// `log p(x)`, `-inf` when nothing derives the input.
pub fn log_marginal(table: &RuleTable, input: ChartInput<'_>) -> Result<f64> {
    Ok(inside(table, input)?.log_marginal)
}

/// Posterior expected count of every rule, which is also the gradient of
/// `log p(x)` with respect to each rule log-probability. Returns `log p(x)`
/// alongside.
pub fn expected_rule_counts(table: &RuleTable, input: ChartInput<'_>) -> Result<(f64, RuleCounts)> {
    input.check(table)?;
    let lattice = Lattice::new(input);
    let (inside, sc, leaf_scores) = inside_pass(table, &lattice)?;
    let n = table.n_symbols();
    let ni = table.topology.n_internal;
    let root = lattice.root;
    let mut zacc = LogAccumulator::default();
    for (alpha, &s) in table.start.iter().enumerate() {
        zacc.add(s + inside[root * n + alpha]);
    }
    let z = zacc.value();
    if z == NEG_INF {
        return Err(Error::NoParse);
    }

    let mut counts = RuleCounts::zeros(&table.topology);
    let mut outside = vec![NEG_INF; inside.len()];
    for alpha in 0..n {
        outside[root * n + alpha] = table.start[alpha];
        counts.start[alpha] = (table.start[alpha] + inside[root * n + alpha] - z).exp();
    }

    let mut obuf = vec![0.0; ni];
    let mut m = vec![0.0; n * n];
    let mut q = vec![0.0; n * n];
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for &it in lattice.order.iter().rev() {
        if let (Some(e), Some(scores)) = (lattice.leaves[it], leaf_scores.get(&it)) {
            for (p, &s) in scores.iter().enumerate() {
                let post = (outside[it * n + ni + p] + s - z).exp();
                counts.add_emission(table, p, e, post)?;
            }
        }
        let splits = &lattice.splits[it];
        if splits.is_empty() {
            continue;
        }
        let mo = scale_into(&outside[it * n..it * n + ni], &mut obuf);
        if mo == NEG_INF {
            continue;
        }
        let shift = split_mass(splits, &sc, &mut m);
        if shift == NEG_INF {
            continue;
        }
        // q[B,C] = Σ_A o'_A P[A,B,C]; counts[A,B,C] += o'_A P[A,B,C] m[B,C]
        let factor = (mo + shift - z).exp();
        q.iter_mut().for_each(|x| *x = 0.0);
        for (a, &oa) in obuf.iter().enumerate() {
            if oa == 0.0 {
                continue;
            }
            let p = &table.binary_prob[a * n * n..(a + 1) * n * n];
            let cnt = &mut counts.binary[a * n * n..(a + 1) * n * n];
            for k in 0..n * n {
                let w = oa * p[k];
                q[k] += w;
                cnt[k] += factor * w * m[k];
            }
        }
        for &(l, r) in splits {
            let (l, r) = (l as usize, r as usize);
            if sc.max[l] == NEG_INF || sc.max[r] == NEG_INF {
                continue;
            }
            let (lrow, rrow) = (sc.row(l), sc.row(r));
            left.iter_mut().for_each(|x| *x = 0.0);
            right.iter_mut().for_each(|x| *x = 0.0);
            for b in 0..n {
                let qrow = &q[b * n..(b + 1) * n];
                let mut acc = 0.0;
                for c in 0..n {
                    acc += qrow[c] * rrow[c];
                    right[c] += lrow[b] * qrow[c];
                }
                left[b] = acc;
            }
            for b in 0..n {
                if left[b] > 0.0 {
                    let slot = &mut outside[l * n + b];
                    *slot = log_add_exp(*slot, mo + sc.max[r] + left[b].ln());
                }
                if right[b] > 0.0 {
                    let slot = &mut outside[r * n + b];
                    *slot = log_add_exp(*slot, mo + sc.max[l] + right[b].ln());
                }
            }
        }
    }
    if counts.binary.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("expected binary counts".into()));
    }
    Ok((z, counts))
}

#[derive(Debug, Clone, Copy)]
enum Back {
    None,
    Leaf,
    Split { left: u32, right: u32, b: u32, c: u32 },
}

/// Highest-probability derivation. Ties go to the lowest split, then the
/// lowest left child symbol, then the lowest right child symbol.
pub fn viterbi_parse(table: &RuleTable, input: ChartInput<'_>) -> Result<(ParseTree, f64)> {
    input.check(table)?;
    let lattice = Lattice::new(input);
    let n = table.n_symbols();
    let ni = table.topology.n_internal;
    let leaf_scores = leaf_score_map(table, &lattice)?;
    let mut best = vec![NEG_INF; lattice.spans.len() * n];
    let mut back = vec![Back::None; lattice.spans.len() * n];
    let mut finite_l = Vec::new();
    let mut finite_r = Vec::new();
    for &it in &lattice.order {
        if let Some(scores) = leaf_scores.get(&it) {
            for (p, &s) in scores.iter().enumerate() {
                best[it * n + ni + p] = s;
                back[it * n + ni + p] = Back::Leaf;
            }
        }
        for &(l, r) in &lattice.splits[it] {
            let (lu, ru) = (l as usize, r as usize);
            finite_l.clear();
            finite_r.clear();
            finite_l.extend((0..n).filter(|&b| best[lu * n + b] > NEG_INF));
            finite_r.extend((0..n).filter(|&c| best[ru * n + c] > NEG_INF));
            for a in 0..ni {
                let mut top = best[it * n + a];
                let mut arg = back[it * n + a];
                for &b in &finite_l {
                    let lb = best[lu * n + b];
                    let base = (a * n + b) * n;
                    for &c in &finite_r {
                        let cand = table.binary[base + c] + lb + best[ru * n + c];
                        if cand > top {
                            top = cand;
                            arg = Back::Split {
                                left: l,
                                right: r,
                                b: b as u32,
                                c: c as u32,
                            };
                        }
                    }
                }
                best[it * n + a] = top;
                back[it * n + a] = arg;
            }
        }
    }
    let root = lattice.root;
    let mut top = NEG_INF;
    let mut arg = None;
    for alpha in 0..n {
        let cand = table.start[alpha] + best[root * n + alpha];
        if cand > top {
            top = cand;
            arg = Some(alpha);
        }
    }
    let alpha = arg.ok_or(Error::NoParse)?;
    let tree = build_tree(&lattice, &back, n, root, alpha);
    Ok((tree, top))
}

fn build_tree(lattice: &Lattice, back: &[Back], n: usize, item: usize, symbol: usize) -> ParseTree {
    match back[item * n + symbol] {
        Back::Leaf => ParseTree::leaf(
            symbol,
            lattice.spans[item],
            lattice.leaves[item].expect("leaf item"),
        ),
        Back::Split { left, right, b, c } => ParseTree::branch(
            symbol,
            build_tree(lattice, back, n, left as usize, b as usize),
            build_tree(lattice, back, n, right as usize, c as usize),
        ),
        Back::None => unreachable!("backpointer for an underivable item"),
    }
}

/// Log-probability of a specific derivation under `table`.
pub fn tree_logprob(table: &RuleTable, tree: &ParseTree) -> Result<f64> {
    fn walk(table: &RuleTable, t: &ParseTree) -> Result<f64> {
        match &t.node {
            Node::Leaf(e) => crate::grammar::terminal_logprob(table, t.symbol, *e),
            Node::Branch(l, r) => {
                if t.symbol >= table.topology.n_internal {
                    return Err(Error::Invalid(format!("preterminal {} has children", t.symbol)));
                }
                Ok(table.binary[table.binary_index(t.symbol, l.symbol, r.symbol)]
                    + walk(table, l)?
                    + walk(table, r)?)
            }
        }
    }
    Ok(table.start[tree.symbol] + walk(table, tree)?)
}

#[cfg(test)]
mod tests;
