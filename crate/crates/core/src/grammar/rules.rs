//! Per-left-hand-side log-probability tables and their gradients.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpTrace};
use super::{
    GrammarKind, GrammarParams, GrammarTopology, ParamMode, Tensor, TensorMap, MLP_BINARY,
    MLP_KIND, MLP_SOURCE, MLP_START, MLP_TARGET, MLP_TERM,
};
use crate::error::{Error, Result};
use crate::numeric::{log_add_exp, log_softmax_backward, log_softmax_in_place, NEG_INF};

pub const N_KINDS: usize = 4;

/// Kind of a synchronous terminal emission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmissionKind {
    /// `w^a/w^b`, both words drawn.
    Pair = 0,
    /// `w^a/ε`.
    Delete = 1,
    /// `ε/w^b`.
    Insert = 2,
    /// `w/w`, the target copies the source.
    Copy = 3,
}

/// An observed terminal: a word (PCFG) or a word pair where `None` is ε.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Emission {
    Word(u32),
    Pair {
        source: Option<u32>,
        target: Option<u32>,
    },
}

impl Emission {
    pub fn pair(source: Option<u32>, target: Option<u32>) -> Self {
        Emission::Pair { source, target }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Terminals {
    /// `emit[p·V + w] = log p(α_p → w)`.
    Pcfg { emit: Vec<f64> },
    Scfg {
        /// `kind[p·4 + k] = log p(k | α_p)`.
        kind: Vec<f64>,
        /// `source[p·V + w] = log p(w^a | α_p, k)` for k ∈ {pair, delete, copy}.
        source: Vec<f64>,
        /// Keyed by the conditioning source word (the ε id for the insert
        /// route): `rows[w^a][p·V + w^b] = log p(w^b | α_p, k, w^a)`.
        target: BTreeMap<u32, Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleTable {
    pub topology: GrammarTopology,
    /// `log p(S → α)` for every nonterminal.
    pub start: Vec<f64>,
    /// `binary[(A·N + B)·N + C] = log p(A → B C)` for internal `A`.
    pub binary: Vec<f64>,
    /// `exp` of `binary`, used by the chart's scaled contractions.
    pub binary_prob: Vec<f64>,
    pub terminals: Terminals,
}

/// Gradients (posterior expected counts) with the same layout as a
/// [`RuleTable`]. Target rows are only present where mass was assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleCounts {
    pub start: Vec<f64>,
    pub binary: Vec<f64>,
    pub terminals: Terminals,
}

fn masked_log_softmax(mut logits: Vec<f64>, eps: Option<u32>) -> Vec<f64> {
    if let Some(e) = eps {
        logits[e as usize] = NEG_INF;
    }
    log_softmax_in_place(&mut logits);
    logits
}

fn dot_rows(out: &Tensor, h: &[f64]) -> Vec<f64> {
    let n = out.shape[0];
    (0..n)
        .map(|r| out.row(r).iter().zip(h).map(|(a, b)| a * b).sum())
        .collect()
}

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}

/// Normalized tables for every rule. Synchronous grammars get target rows
/// for every vocabulary word; use [`materialize_rules_for`] when only a
/// handful of source words matter.
pub fn materialize_rules(params: &GrammarParams) -> Result<RuleTable> {
    let words: BTreeSet<u32> = (0..params.topology.vocab_size as u32).collect();
    materialize_rules_for(params, &words)
}

/// Like [`materialize_rules`] but computes synchronous target rows only for
/// the listed source words (plus ε). Each row is still normalized over the
/// full vocabulary.
pub fn materialize_rules_for(params: &GrammarParams, source_words: &BTreeSet<u32>) -> Result<RuleTable> {
    let topo = params.topology;
    let n = topo.n_symbols();
    let ni = topo.n_internal;
    let np = topo.n_preterminal;
    let v = topo.vocab_size;
    let d = topo.dim;
    let tensors = &params.tensors;

    let start;
    let mut binary = vec![NEG_INF; ni * n * n];
    match params.mode {
        ParamMode::Tabular => {
            start = masked_log_softmax(params.tensor("start.logits").data.clone(), None);
            let logits = params.tensor("binary.logits");
            for a in 0..ni {
                let row = masked_log_softmax(logits.row(a).to_vec(), None);
                binary[a * n * n..(a + 1) * n * n].copy_from_slice(&row);
            }
        }
        ParamMode::Neural => {
            let h = Mlp::new(tensors, MLP_START, d)
                .forward(&params.tensor("start.query").data)
                .output;
            start = masked_log_softmax(dot_rows(params.tensor("start.out"), &h), None);
            let mlp = Mlp::new(tensors, MLP_BINARY, d);
            let embed = params.tensor("nt.embed");
            let out = params.tensor("binary.out");
            for a in 0..ni {
                let h = mlp.forward(embed.row(a)).output;
                let row = masked_log_softmax(dot_rows(out, &h), None);
                binary[a * n * n..(a + 1) * n * n].copy_from_slice(&row);
            }
        }
    }
    check_finite("start", &start)?;
    check_finite("binary", &binary)?;

    let terminals = match topo.kind {
        GrammarKind::Pcfg => {
            let mut emit = vec![NEG_INF; np * v];
            for p in 0..np {
                let row = match params.mode {
                    ParamMode::Tabular => params.tensor("term.logits").row(p).to_vec(),
                    ParamMode::Neural => {
                        let h = Mlp::new(tensors, MLP_TERM, d)
                            .forward(params.tensor("nt.embed").row(ni + p))
                            .output;
                        dot_rows(params.tensor("term.out"), &h)
                    }
                };
                emit[p * v..(p + 1) * v].copy_from_slice(&masked_log_softmax(row, None));
            }
            check_finite("terminal", &emit)?;
            Terminals::Pcfg { emit }
        }
        GrammarKind::Scfg => {
            let eps = topo.eps_id.expect("validated topology");
            let mut kind = vec![0.0; np * N_KINDS];
            let mut source = vec![NEG_INF; np * v];
            for p in 0..np {
                let (k_row, s_row) = match params.mode {
                    ParamMode::Tabular => (
                        params.tensor("kind.logits").row(p).to_vec(),
                        params.tensor("source.logits").row(p).to_vec(),
                    ),
                    ParamMode::Neural => {
                        let hk = Mlp::new(tensors, MLP_KIND, d)
                            .forward(params.tensor("kind.embed").row(p))
                            .output;
                        let hs = Mlp::new(tensors, MLP_SOURCE, d)
                            .forward(params.tensor("source.embed").row(p))
                            .output;
                        (
                            dot_rows(params.tensor("kind.out"), &hk),
                            dot_rows(params.tensor("source.out"), &hs),
                        )
                    }
                };
                kind[p * N_KINDS..(p + 1) * N_KINDS]
                    .copy_from_slice(&masked_log_softmax(k_row, None));
                source[p * v..(p + 1) * v].copy_from_slice(&masked_log_softmax(s_row, Some(eps)));
            }
            check_finite("kind", &kind)?;
            check_finite("source", &source)?;
            let mut target = BTreeMap::new();
            for &w in source_words.iter().chain(std::iter::once(&eps)) {
                if w as usize >= v {
                    return Err(Error::Invalid(format!("source word {w} outside vocabulary")));
                }
                let row = target_row(params, w)?;
                target.insert(w, row);
            }
            Terminals::Scfg {
                kind,
                source,
                target,
            }
        }
    };
    let binary_prob = binary.iter().map(|x| x.exp()).collect();
    Ok(RuleTable {
        topology: topo,
        start,
        binary,
        binary_prob,
        terminals,
    })
}

fn target_input(params: &GrammarParams, p: usize, word: u32) -> Vec<f64> {
    params
        .tensor("target.embed")
        .row(p)
        .iter()
        .zip(params.tensor("target.word").row(word as usize))
        .map(|(a, b)| a + b)
        .collect()
}

fn target_row(params: &GrammarParams, word: u32) -> Result<Vec<f64>> {
    let topo = params.topology;
    let v = topo.vocab_size;
    let eps = topo.eps_id;
    let mut rows = vec![NEG_INF; topo.n_preterminal * v];
    for p in 0..topo.n_preterminal {
        let logits = match params.mode {
            ParamMode::Tabular => params
                .tensor("target.logits")
                .row(p * v + word as usize)
                .to_vec(),
            ParamMode::Neural => {
                let h = Mlp::new(&params.tensors, MLP_TARGET, topo.dim)
                    .forward(&target_input(params, p, word))
                    .output;
                dot_rows(params.tensor("target.out"), &h)
            }
        };
        rows[p * v..(p + 1) * v].copy_from_slice(&masked_log_softmax(logits, eps));
    }
    check_finite("target", &rows)?;
    Ok(rows)
}

impl RuleTable {
    pub fn n_symbols(&self) -> usize {
        self.topology.n_symbols()
    }

    #[inline]
    pub fn binary_index(&self, a: usize, b: usize, c: usize) -> usize {
        let n = self.n_symbols();
        (a * n + b) * n + c
    }

    fn eps(&self) -> Option<u32> {
        self.topology.eps_id
    }

    fn normalize(&self, emission: Emission) -> Result<Emission> {
        let v = self.topology.vocab_size as u32;
        let check = |w: u32| -> Result<u32> {
            if w >= v {
                Err(Error::InvalidEmission(format!("word id {w} outside vocabulary")))
            } else {
                Ok(w)
            }
        };
        match (self.topology.kind, emission) {
            (GrammarKind::Pcfg, Emission::Word(w)) => Ok(Emission::Word(check(w)?)),
            (GrammarKind::Scfg, Emission::Pair { source, target }) => {
                let eps = self.eps();
                let norm = |w: Option<u32>| -> Result<Option<u32>> {
                    match w {
                        Some(w) if Some(w) == eps => Ok(None),
                        Some(w) => Ok(Some(check(w)?)),
                        None => Ok(None),
                    }
                };
                let (source, target) = (norm(source)?, norm(target)?);
                if source.is_none() && target.is_none() {
                    return Err(Error::InvalidEmission("ε/ε emits nothing".into()));
                }
                Ok(Emission::Pair { source, target })
            }
            (kind, e) => Err(Error::InvalidEmission(format!(
                "{e:?} does not match a {kind:?} grammar"
            ))),
        }
    }

    fn target_rows(&self, word: u32) -> Result<&[f64]> {
        match &self.terminals {
            Terminals::Scfg { target, .. } => target.get(&word).map(Vec::as_slice).ok_or_else(|| {
                Error::Invalid(format!("target distribution for source word {word} not materialized"))
            }),
            Terminals::Pcfg { .. } => Err(Error::InvalidEmission("not a synchronous grammar".into())),
        }
    }

    /// Log-probability of every derivation route generating `emission` from
    /// preterminal index `p` (0-based among preterminals).
    pub(crate) fn routes(&self, p: usize, emission: Emission) -> Result<Vec<(EmissionKind, f64)>> {
        let v = self.topology.vocab_size;
        match (&self.terminals, emission) {
            (Terminals::Pcfg { emit }, Emission::Word(w)) => {
                Ok(vec![(EmissionKind::Pair, emit[p * v + w as usize])])
            }
            (
                Terminals::Scfg { kind, source, .. },
                Emission::Pair { source: wa, target: wb },
            ) => {
                let k = |kind_id: EmissionKind| kind[p * N_KINDS + kind_id as usize];
                let mut routes = Vec::with_capacity(2);
                match (wa, wb) {
                    (Some(a), Some(b)) => {
                        let src = source[p * v + a as usize];
                        if a == b {
                            routes.push((EmissionKind::Copy, k(EmissionKind::Copy) + src));
                        }
                        let tgt = self.target_rows(a)?[p * v + b as usize];
                        routes.push((EmissionKind::Pair, k(EmissionKind::Pair) + src + tgt));
                    }
                    (Some(a), None) => routes.push((
                        EmissionKind::Delete,
                        k(EmissionKind::Delete) + source[p * v + a as usize],
                    )),
                    (None, Some(b)) => {
                        let eps = self.eps().expect("validated topology");
                        let tgt = self.target_rows(eps)?[p * v + b as usize];
                        routes.push((EmissionKind::Insert, k(EmissionKind::Insert) + tgt));
                    }
                    (None, None) => unreachable!("normalized emission"),
                }
                Ok(routes)
            }
            _ => unreachable!("normalized emission"),
        }
    }

    /// `log p(α → emission)` for every preterminal, summing over routes.
    pub(crate) fn leaf_scores(&self, emission: Emission) -> Result<Vec<f64>> {
        let emission = self.normalize(emission)?;
        (0..self.topology.n_preterminal)
            .map(|p| {
                Ok(self
                    .routes(p, emission)?
                    .into_iter()
                    .fold(NEG_INF, |acc, (_, lp)| log_add_exp(acc, lp)))
            })
            .collect()
    }
}

/// `log p(α → emission)`. A synchronous identical pair `w/w` sums its copy
/// and pair routes since the emission kind is not observed.
pub fn terminal_logprob(table: &RuleTable, symbol: usize, emission: Emission) -> Result<f64> {
    if !table.topology.is_preterminal(symbol) {
        return Err(Error::InvalidEmission(format!("symbol {symbol} is not a preterminal")));
    }
    let emission = table.normalize(emission)?;
    let p = symbol - table.topology.n_internal;
    Ok(table
        .routes(p, emission)?
        .into_iter()
        .fold(NEG_INF, |acc, (_, lp)| log_add_exp(acc, lp)))
}

impl RuleCounts {
    pub fn zeros(topology: &GrammarTopology) -> Self {
        let n = topology.n_symbols();
        let np = topology.n_preterminal;
        let v = topology.vocab_size;
        let terminals = match topology.kind {
            GrammarKind::Pcfg => Terminals::Pcfg {
                emit: vec![0.0; np * v],
            },
            GrammarKind::Scfg => Terminals::Scfg {
                kind: vec![0.0; np * N_KINDS],
                source: vec![0.0; np * v],
                target: BTreeMap::new(),
            },
        };
        Self {
            start: vec![0.0; n],
            binary: vec![0.0; topology.n_internal * n * n],
            terminals,
        }
    }

    /// Adds `weight` worth of posterior mass for `emission` at preterminal
    /// index `p`, split across its routes in proportion to their probability.
    pub(crate) fn add_emission(
        &mut self,
        table: &RuleTable,
        p: usize,
        emission: Emission,
        weight: f64,
    ) -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        let emission = table.normalize(emission)?;
        let routes = table.routes(p, emission)?;
        let total = routes.iter().fold(NEG_INF, |acc, r| log_add_exp(acc, r.1));
        let v = table.topology.vocab_size;
        match (&mut self.terminals, emission) {
            (Terminals::Pcfg { emit }, Emission::Word(w)) => emit[p * v + w as usize] += weight,
            (
                Terminals::Scfg {
                    kind,
                    source,
                    target,
                },
                Emission::Pair { source: wa, target: wb },
            ) => {
                for (route, lp) in routes {
                    let share = weight * (lp - total).exp();
                    kind[p * N_KINDS + route as usize] += share;
                    match route {
                        EmissionKind::Copy | EmissionKind::Delete => {
                            source[p * v + wa.unwrap() as usize] += share;
                        }
                        EmissionKind::Pair => {
                            let a = wa.unwrap();
                            source[p * v + a as usize] += share;
                            let np = table.topology.n_preterminal;
                            target.entry(a).or_insert_with(|| vec![0.0; np * v])
                                [p * v + wb.unwrap() as usize] += share;
                        }
                        EmissionKind::Insert => {
                            let eps = table.topology.eps_id.unwrap();
                            let np = table.topology.n_preterminal;
                            target.entry(eps).or_insert_with(|| vec![0.0; np * v])
                                [p * v + wb.unwrap() as usize] += share;
                        }
                    }
                }
            }
            _ => unreachable!("normalized emission"),
        }
        Ok(())
    }

    pub fn add_scaled(&mut self, other: &RuleCounts, scale: f64) {
        let axpy = |acc: &mut [f64], x: &[f64]| {
            for (a, b) in acc.iter_mut().zip(x) {
                *a += scale * b;
            }
        };
        axpy(&mut self.start, &other.start);
        axpy(&mut self.binary, &other.binary);
        match (&mut self.terminals, &other.terminals) {
            (Terminals::Pcfg { emit: a }, Terminals::Pcfg { emit: b }) => axpy(a, b),
            (
                Terminals::Scfg {
                    kind: ka,
                    source: sa,
                    target: ta,
                },
                Terminals::Scfg {
                    kind: kb,
                    source: sb,
                    target: tb,
                },
            ) => {
                axpy(ka, kb);
                axpy(sa, sb);
                for (w, row) in tb {
                    match ta.get_mut(w) {
                        Some(acc) => axpy(acc, row),
                        None => {
                            ta.insert(*w, row.iter().map(|x| x * scale).collect());
                        }
                    }
                }
            }
            _ => panic!("mixing grammar kinds"),
        }
    }

    /// Total terminal-emission count (PCFG) or per-kind totals (SCFG).
    pub fn kind_totals(&self) -> [f64; N_KINDS] {
        let mut totals = [0.0; N_KINDS];
        match &self.terminals {
            Terminals::Pcfg { emit } => totals[0] = emit.iter().sum(),
            Terminals::Scfg { kind, .. } => {
                for row in kind.chunks(N_KINDS) {
                    for (t, x) in totals.iter_mut().zip(row) {
                        *t += x;
                    }
                }
            }
        }
        totals
    }

    fn check_shape(&self, topo: &GrammarTopology) -> Result<()> {
        let zero = RuleCounts::zeros(topo);
        let shape_err = |name: &str, expected: usize, found: usize| Error::Shape {
            name: name.to_string(),
            expected: vec![expected],
            found: vec![found],
        };
        if self.start.len() != zero.start.len() {
            return Err(shape_err("start", zero.start.len(), self.start.len()));
        }
        if self.binary.len() != zero.binary.len() {
            return Err(shape_err("binary", zero.binary.len(), self.binary.len()));
        }
        let row = topo.n_preterminal * topo.vocab_size;
        match (&self.terminals, &zero.terminals) {
            (Terminals::Pcfg { emit }, Terminals::Pcfg { emit: z }) if emit.len() != z.len() => {
                Err(shape_err("terminal", z.len(), emit.len()))
            }
            (Terminals::Pcfg { .. }, Terminals::Pcfg { .. }) => Ok(()),
            (
                Terminals::Scfg {
                    kind,
                    source,
                    target,
                },
                Terminals::Scfg { .. },
            ) => {
                if kind.len() != topo.n_preterminal * N_KINDS {
                    return Err(shape_err("kind", topo.n_preterminal * N_KINDS, kind.len()));
                }
                if source.len() != row {
                    return Err(shape_err("source", row, source.len()));
                }
                for (w, r) in target {
                    if r.len() != row || *w as usize >= topo.vocab_size {
                        return Err(shape_err("target", row, r.len()));
                    }
                }
                Ok(())
            }
            _ => Err(Error::Invalid("gradient table kind does not match grammar".into())),
        }
    }
}

/// Chain rule from rule log-probability gradients back to raw parameters.
pub fn backprop_params(params: &GrammarParams, grads: &RuleCounts) -> Result<TensorMap> {
    let topo = params.topology;
    grads.check_shape(&topo)?;
    let mut out = GrammarParams::zeros(&topo, params.mode).tensors;
    let n = topo.n_symbols();
    let ni = topo.n_internal;
    let np = topo.n_preterminal;
    let v = topo.vocab_size;
    let d = topo.dim;
    let eps = topo.eps_id;

    // Shared step: recompute normalized row from logits, return the logit
    // gradient for that row.
    let logit_grad = |logits: Vec<f64>, mask: Option<u32>, g: &[f64]| -> Vec<f64> {
        let logp = masked_log_softmax(logits, mask);
        let mut gl = vec![0.0; logp.len()];
        log_softmax_backward(&logp, g, &mut gl);
        gl
    };

    match params.mode {
        ParamMode::Tabular => {
            let gl = logit_grad(params.tensor("start.logits").data.clone(), None, &grads.start);
            out.get_mut("start.logits").unwrap().data = gl;
            let logits = params.tensor("binary.logits");
            for a in 0..ni {
                let g = &grads.binary[a * n * n..(a + 1) * n * n];
                if g.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let gl = logit_grad(logits.row(a).to_vec(), None, g);
                out.get_mut("binary.logits").unwrap().row_mut(a).copy_from_slice(&gl);
            }
            match &grads.terminals {
                Terminals::Pcfg { emit } => {
                    for p in 0..np {
                        let g = &emit[p * v..(p + 1) * v];
                        let gl = logit_grad(params.tensor("term.logits").row(p).to_vec(), None, g);
                        out.get_mut("term.logits").unwrap().row_mut(p).copy_from_slice(&gl);
                    }
                }
                Terminals::Scfg {
                    kind,
                    source,
                    target,
                } => {
                    for p in 0..np {
                        let g = &kind[p * N_KINDS..(p + 1) * N_KINDS];
                        let gl = logit_grad(params.tensor("kind.logits").row(p).to_vec(), None, g);
                        out.get_mut("kind.logits").unwrap().row_mut(p).copy_from_slice(&gl);
                        let g = &source[p * v..(p + 1) * v];
                        let gl = logit_grad(params.tensor("source.logits").row(p).to_vec(), eps, g);
                        out.get_mut("source.logits").unwrap().row_mut(p).copy_from_slice(&gl);
                    }
                    for (&w, rows) in target {
                        for p in 0..np {
                            let g = &rows[p * v..(p + 1) * v];
                            if g.iter().all(|&x| x == 0.0) {
                                continue;
                            }
                            let r = p * v + w as usize;
                            let gl = logit_grad(params.tensor("target.logits").row(r).to_vec(), eps, g);
                            out.get_mut("target.logits").unwrap().row_mut(r).copy_from_slice(&gl);
                        }
                    }
                }
            }
        }
        ParamMode::Neural => {
            let t = &params.tensors;
            // (mlp prefix, input, output tensor, mask, row gradient) → input gradient
            let head = |prefix: &str,
                            input: &[f64],
                            out_name: &str,
                            mask: Option<u32>,
                            g: &[f64],
                            out: &mut TensorMap|
             -> Option<Vec<f64>> {
                if g.iter().all(|&x| x == 0.0) {
                    return None;
                }
                let mlp = Mlp::new(t, prefix, d);
                let trace: MlpTrace = mlp.forward(input);
                let out_t = params.tensor(out_name);
                let gl = logit_grad(dot_rows(out_t, &trace.output), mask, g);
                let mut gh = vec![0.0; d];
                {
                    let gu = out.get_mut(out_name).unwrap();
                    for (r, &glr) in gl.iter().enumerate() {
                        if glr == 0.0 {
                            continue;
                        }
                        let urow = out_t.row(r);
                        for j in 0..d {
                            gh[j] += glr * urow[j];
                        }
                        for (gu_j, h_j) in gu.row_mut(r).iter_mut().zip(&trace.output) {
                            *gu_j += glr * h_j;
                        }
                    }
                }
                Some(mlp.backward(prefix, &trace, &gh, out))
            };
            let add_row = |out: &mut TensorMap, name: &str, row: usize, g: &[f64]| {
                for (a, b) in out.get_mut(name).unwrap().row_mut(row).iter_mut().zip(g) {
                    *a += b;
                }
            };

            if let Some(gx) = head(
                MLP_START,
                &params.tensor("start.query").data,
                "start.out",
                None,
                &grads.start,
                &mut out,
            ) {
                add_row_flat(&mut out, "start.query", &gx);
            }
            for a in 0..ni {
                let g = &grads.binary[a * n * n..(a + 1) * n * n];
                let input = params.tensor("nt.embed").row(a).to_vec();
                if let Some(gx) = head(MLP_BINARY, &input, "binary.out", None, g, &mut out) {
                    add_row(&mut out, "nt.embed", a, &gx);
                }
            }
            match &grads.terminals {
                Terminals::Pcfg { emit } => {
                    for p in 0..np {
                        let g = &emit[p * v..(p + 1) * v];
                        let input = params.tensor("nt.embed").row(ni + p).to_vec();
                        if let Some(gx) = head(MLP_TERM, &input, "term.out", None, g, &mut out) {
                            add_row(&mut out, "nt.embed", ni + p, &gx);
                        }
                    }
                }
                Terminals::Scfg {
                    kind,
                    source,
                    target,
                } => {
                    for p in 0..np {
                        let g = &kind[p * N_KINDS..(p + 1) * N_KINDS];
                        let input = params.tensor("kind.embed").row(p).to_vec();
                        if let Some(gx) = head(MLP_KIND, &input, "kind.out", None, g, &mut out) {
                            add_row(&mut out, "kind.embed", p, &gx);
                        }
                        let g = &source[p * v..(p + 1) * v];
                        let input = params.tensor("source.embed").row(p).to_vec();
                        if let Some(gx) = head(MLP_SOURCE, &input, "source.out", eps, g, &mut out) {
                            add_row(&mut out, "source.embed", p, &gx);
                        }
                    }
                    for (&w, rows) in target {
                        for p in 0..np {
                            let g = &rows[p * v..(p + 1) * v];
                            let input = target_input(params, p, w);
                            if let Some(gx) = head(MLP_TARGET, &input, "target.out", eps, g, &mut out) {
                                add_row(&mut out, "target.embed", p, &gx);
                                add_row(&mut out, "target.word", w as usize, &gx);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn add_row_flat(out: &mut TensorMap, name: &str, g: &[f64]) {
    for (a, b) in out.get_mut(name).unwrap().data.iter_mut().zip(g) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::init_params;

    fn sums_to_one(row: &[f64]) -> bool {
        let s: f64 = row.iter().map(|x| x.exp()).sum();
        (s - 1.0).abs() < 1e-6
    }

    fn assert_normalized(table: &RuleTable) {
        let n = table.n_symbols();
        let v = table.topology.vocab_size;
        assert!(sums_to_one(&table.start));
        for row in table.binary.chunks(n * n) {
            assert!(sums_to_one(row));
        }
        match &table.terminals {
            Terminals::Pcfg { emit } => emit.chunks(v).for_each(|r| assert!(sums_to_one(r))),
            Terminals::Scfg {
                kind,
                source,
                target,
            } => {
                kind.chunks(N_KINDS).for_each(|r| assert!(sums_to_one(r)));
                source.chunks(v).for_each(|r| assert!(sums_to_one(r)));
                for rows in target.values() {
                    rows.chunks(v).for_each(|r| assert!(sums_to_one(r)));
                }
            }
        }
    }

    #[test]
    fn tables_are_normalized() {
        let topos = [
            GrammarTopology::pcfg(2, 3, 5, 4),
            GrammarTopology::scfg(2, 2, 6, 4, 1),
        ];
        for topo in topos {
            for mode in [ParamMode::Neural, ParamMode::Tabular] {
                for seed in 0..3 {
                    let params = init_params(&topo, mode, seed).unwrap();
                    assert_normalized(&materialize_rules(&params).unwrap());
                }
            }
        }
    }

    #[test]
    fn zero_params_give_uniform_tables() {
        let topo = GrammarTopology::scfg(2, 2, 4, 3, 1);
        for mode in [ParamMode::Neural, ParamMode::Tabular] {
            let table = materialize_rules(&GrammarParams::zeros(&topo, mode)).unwrap();
            let n = 4.0f64;
            assert!(table.start.iter().all(|x| (x + n.ln()).abs() < 1e-12));
            assert!(table.binary.iter().all(|x| (x + (n * n).ln()).abs() < 1e-12));
            if let Terminals::Scfg { source, kind, .. } = &table.terminals {
                assert!(kind.iter().all(|x| (x + 4f64.ln()).abs() < 1e-12));
                // three real words, epsilon masked
                for (i, x) in source.iter().enumerate() {
                    if i % 4 == 1 {
                        assert_eq!(*x, NEG_INF);
                    } else {
                        assert!((x + 3f64.ln()).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn hand_set_logits_match_softmax() {
        let topo = GrammarTopology::pcfg(2, 2, 3, 1);
        let mut params = GrammarParams::zeros(&topo, ParamMode::Tabular);
        params.tensor_mut("start.logits").data = vec![1.0, 0.0, -1.0, 2.0];
        params.tensor_mut("term.logits").data = vec![0.5, 0.25, -0.75, 3.0, 1.0, 0.0];
        let t = materialize_rules(&params).unwrap();
        let z: f64 = [1.0f64, 0.0, -1.0, 2.0].iter().map(|x| x.exp()).sum();
        for (i, x) in [1.0f64, 0.0, -1.0, 2.0].iter().enumerate() {
            assert!((t.start[i] - (x.exp() / z).ln()).abs() < 1e-12);
        }
        let z: f64 = [3.0f64, 1.0, 0.0].iter().map(|x| x.exp()).sum();
        assert!((terminal_logprob(&t, 3, Emission::Word(0)).unwrap() - (3f64.exp() / z).ln()).abs() < 1e-12);
    }

    #[test]
    fn emission_routes() {
        let topo = GrammarTopology::scfg(1, 1, 4, 2, 1);
        let params = init_params(&topo, ParamMode::Tabular, 4).unwrap();
        let t = materialize_rules(&params).unwrap();
        let Terminals::Scfg { kind, source, target } = &t.terminals else {
            panic!()
        };
        let del = terminal_logprob(&t, 1, Emission::pair(Some(2), None)).unwrap();
        assert!((del - (kind[EmissionKind::Delete as usize] + source[2])).abs() < 1e-12);
        let ins = terminal_logprob(&t, 1, Emission::pair(None, Some(3))).unwrap();
        assert!((ins - (kind[EmissionKind::Insert as usize] + target[&1][3])).abs() < 1e-12);
        let same = terminal_logprob(&t, 1, Emission::pair(Some(2), Some(2))).unwrap();
        let copy = kind[EmissionKind::Copy as usize] + source[2];
        let pair = kind[EmissionKind::Pair as usize] + source[2] + target[&2][2];
        assert!((same - log_add_exp(copy, pair)).abs() < 1e-12);
        // ε written with its vocabulary id is the same as None
        let del2 = terminal_logprob(&t, 1, Emission::pair(Some(2), Some(1))).unwrap();
        assert_eq!(del, del2);
        assert!(matches!(
            terminal_logprob(&t, 1, Emission::pair(None, None)),
            Err(Error::InvalidEmission(_))
        ));
        assert!(terminal_logprob(&t, 0, Emission::pair(Some(2), None)).is_err());
    }

    #[test]
    fn route_restrictions_are_structural() {
        // delete and copy never put mass on a second word; the pair route
        // never emits ε on either side.
        let topo = GrammarTopology::scfg(1, 2, 5, 2, 1);
        let params = init_params(&topo, ParamMode::Neural, 1).unwrap();
        let t = materialize_rules(&params).unwrap();
        let Terminals::Scfg { source, target, .. } = &t.terminals else {
            panic!()
        };
        for p in 0..2 {
            assert_eq!(source[p * 5 + 1], NEG_INF);
            for rows in target.values() {
                assert_eq!(rows[p * 5 + 1], NEG_INF);
            }
        }
    }

    #[test]
    fn pcfg_word_out_of_range() {
        let topo = GrammarTopology::pcfg(1, 1, 3, 2);
        let t = materialize_rules(&init_params(&topo, ParamMode::Tabular, 0).unwrap()).unwrap();
        assert!(terminal_logprob(&t, 1, Emission::Word(3)).is_err());
        assert!(terminal_logprob(&t, 1, Emission::pair(Some(1), None)).is_err());
    }

    #[test]
    fn zero_gradient_backprop() {
        for topo in [GrammarTopology::pcfg(2, 2, 4, 3), GrammarTopology::scfg(1, 2, 4, 3, 1)] {
            for mode in [ParamMode::Neural, ParamMode::Tabular] {
                let params = init_params(&topo, mode, 2).unwrap();
                let g = backprop_params(&params, &RuleCounts::zeros(&topo)).unwrap();
                assert!(g.values().all(|t| t.data.iter().all(|&x| x == 0.0)));
            }
        }
    }

    #[test]
    fn backprop_rejects_shape_mismatch() {
        let topo = GrammarTopology::pcfg(2, 2, 4, 3);
        let params = init_params(&topo, ParamMode::Tabular, 2).unwrap();
        let mut g = RuleCounts::zeros(&topo);
        g.start.push(0.0);
        assert!(matches!(backprop_params(&params, &g), Err(Error::Shape { .. })));
    }

    #[test]
    fn terminal_only_gradient_touches_terminal_parameters() {
        let topo = GrammarTopology::pcfg(2, 2, 4, 3);
        let params = init_params(&topo, ParamMode::Neural, 2).unwrap();
        let mut g = RuleCounts::zeros(&topo);
        if let Terminals::Pcfg { emit } = &mut g.terminals {
            emit[1] = 1.0;
        }
        let grads = backprop_params(&params, &g).unwrap();
        for (name, t) in &grads {
            let touched = t.data.iter().any(|&x| x != 0.0);
            let allowed = name.starts_with("mlp.term") || name == "term.out" || name == "nt.embed";
            assert!(allowed || !touched, "{name} received gradient");
        }
        assert!(grads["term.out"].data.iter().any(|&x| x != 0.0));
    }
}

/// Sign pattern of every ReLU pre-activation evaluated when materializing
/// rules for `source_words`. Two parameter settings with equal patterns lie
/// in the same linear region of every perceptron, so finite differences
/// between them see no kink. Empty for tabular grammars.
pub fn relu_pattern(params: &GrammarParams, source_words: &BTreeSet<u32>) -> Vec<bool> {
    let mut out = Vec::new();
    if params.mode == ParamMode::Tabular {
        return out;
    }
    let topo = params.topology;
    let (ni, d) = (topo.n_internal, topo.dim);
    let tensors = &params.tensors;
    let mut push = |prefix: &str, x: &[f64]| {
        let trace = Mlp::new(tensors, prefix, d).forward(x);
        out.extend(Mlp::relu_signature(&trace));
    };
    push(MLP_START, &params.tensor("start.query").data);
    for a in 0..ni {
        push(MLP_BINARY, params.tensor("nt.embed").row(a));
    }
    match topo.kind {
        GrammarKind::Pcfg => {
            for p in 0..topo.n_preterminal {
                push(MLP_TERM, params.tensor("nt.embed").row(ni + p));
            }
        }
        GrammarKind::Scfg => {
            let eps = topo.eps_id.expect("validated topology");
            for p in 0..topo.n_preterminal {
                push(MLP_KIND, params.tensor("kind.embed").row(p));
                push(MLP_SOURCE, params.tensor("source.embed").row(p));
                for &w in source_words.iter().chain(std::iter::once(&eps)) {
                    push(MLP_TARGET, &target_input(params, p, w));
                }
            }
        }
    }
    out
}
