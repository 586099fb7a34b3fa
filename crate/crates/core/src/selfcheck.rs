//! Built-in consistency suites on tiny random grammars: chart results
//! against brute-force enumeration, analytic gradients against central
//! finite differences, emission-count conservation and reference mutual
//! information values.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chart::{enumerate_derivations, expected_rule_counts, inside, tree_logprob, viterbi_parse, ChartInput};
use crate::corpus::{Dataset, DatasetKind, Example};
use crate::grammar::{
    init_params, materialize_rules, relu_pattern, GrammarKind, GrammarParams, GrammarTopology, ParamMode, RuleCounts,
    RuleTable, Terminals,
};
use crate::miner::mutual_information;
use crate::numeric::log_sum_exp;
use crate::trainer::{eval_nll, mean_nll_gradient};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub checks: usize,
    /// First failure, or a short summary.
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfcheckConfig {
    pub n_pcfg: usize,
    pub n_scfg: usize,
    pub n_gradient: usize,
    pub seed: u64,
}

impl Default for SelfcheckConfig {
    fn default() -> Self {
        Self {
            n_pcfg: 200,
            n_scfg: 100,
            n_gradient: 20,
            seed: 0,
        }
    }
}

pub const ORACLE_TOL: f64 = 1e-9;
pub const CONSERVATION_TOL: f64 = 1e-8;
pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-4;
/// Absolute slack for coordinates whose gradient is near zero, where the
/// `O(h²)` truncation error of the central difference dominates.
pub const FD_ABS_TOL: f64 = 1e-7;

struct Suite {
    name: &'static str,
    checks: usize,
    failure: Option<String>,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checks: 0,
            failure: None,
        }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok && self.failure.is_none() {
            self.failure = Some(detail());
        }
    }

    fn finish(self) -> SuiteResult {
        SuiteResult {
            name: self.name.to_string(),
            passed: self.failure.is_none(),
            checks: self.checks,
            detail: self.failure.unwrap_or_else(|| format!("{} checks", self.checks)),
        }
    }
}

/// A random tabular grammar with at most four nonterminals.
fn random_table(kind: GrammarKind, rng: &mut ChaCha8Rng) -> RuleTable {
    let ni = rng.gen_range(1..=2);
    let np = rng.gen_range(1..=4 - ni);
    let topo = match kind {
        GrammarKind::Pcfg => GrammarTopology::pcfg(ni, np, rng.gen_range(2..=5), 1),
        GrammarKind::Scfg => GrammarTopology::scfg(ni, np, rng.gen_range(3..=5), 1, 1),
    };
    let mut params = init_params(&topo, ParamMode::Tabular, rng.gen()).expect("valid topology");
    // widen the logits so rule probabilities are far from uniform
    for t in params.tensors.values_mut() {
        t.data.iter_mut().for_each(|x| *x *= 3.0);
    }
    materialize_rules(&params).expect("finite tabular rules")
}

fn random_words(rng: &mut ChaCha8Rng, len: usize, lo: u32, hi: u32) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}

fn random_sentence(rng: &mut ChaCha8Rng, max_len: usize, lo: u32, hi: u32) -> Vec<u32> {
    let len = rng.gen_range(1..=max_len);
    random_words(rng, len, lo, hi)
}

/// Expected start, binary and per-preterminal leaf counts by enumeration.
fn enumerated_counts(t: &RuleTable, input: ChartInput<'_>) -> Option<(f64, f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let derivs = enumerate_derivations(t, input, 2_000_000).ok()?;
    let z = log_sum_exp(&derivs.iter().map(|d| d.1).collect::<Vec<_>>());
    let best = derivs.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
    let n = t.n_symbols();
    let ni = t.topology.n_internal;
    let mut start = vec![0.0; n];
    let mut binary = vec![0.0; ni * n * n];
    let mut leaves = vec![0.0; t.topology.n_preterminal];
    for (tree, lp) in &derivs {
        let w = (lp - z).exp();
        start[tree.symbol] += w;
        for node in tree.nodes() {
            match node.children() {
                Some((l, r)) => binary[t.binary_index(node.symbol, l.symbol, r.symbol)] += w,
                None => leaves[node.symbol - ni] += w,
            }
        }
    }
    Some((z, best, start, binary, leaves))
}

fn leaf_mass(c: &RuleCounts, np: usize) -> Vec<f64> {
    match &c.terminals {
        Terminals::Pcfg { emit } => emit.chunks(emit.len() / np).map(|r| r.iter().sum()).collect(),
        Terminals::Scfg { kind, .. } => kind.chunks(kind.len() / np).map(|r| r.iter().sum()).collect(),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn compare_chart(suite: &mut Suite, t: &RuleTable, input: ChartInput<'_>, label: &str) {
    let Some((z, best, start, binary, leaves)) = enumerated_counts(t, input) else {
        suite.check(false, || format!("{label}: enumeration limit exceeded"));
        return;
    };
    let chart = inside(t, input).expect("valid input");
    suite.check((chart.log_marginal - z).abs() <= ORACLE_TOL || chart.log_marginal == z, || {
        format!("{label}: inside {} vs enumeration {z}", chart.log_marginal)
    });
    if z == f64::NEG_INFINITY {
        return;
    }
    match viterbi_parse(t, input) {
        Ok((tree, score)) => {
            suite.check((score - best).abs() <= ORACLE_TOL, || format!("{label}: viterbi {score} vs max {best}"));
            let lp = tree_logprob(t, &tree).unwrap_or(f64::NAN);
            suite.check((lp - score).abs() <= ORACLE_TOL, || format!("{label}: viterbi tree scores {lp}, chart {score}"));
        }
        Err(e) => suite.check(false, || format!("{label}: viterbi failed: {e}")),
    }
    let (_, counts) = expected_rule_counts(t, input).expect("parseable input");
    let np = t.topology.n_preterminal;
    let worst = max_abs_diff(&counts.start, &start)
        .max(max_abs_diff(&counts.binary, &binary))
        .max(max_abs_diff(&leaf_mass(&counts, np), &leaves));
    suite.check(worst <= ORACLE_TOL, || format!("{label}: expected counts differ by {worst:e}"));
}

pub fn chart_oracle_suite(config: &SelfcheckConfig) -> SuiteResult {
    let mut suite = Suite::new("chart-oracle");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for g in 0..config.n_pcfg {
        let t = random_table(GrammarKind::Pcfg, &mut rng);
        let v = t.topology.vocab_size as u32;
        for len in 1..=5 {
            let x = random_words(&mut rng, len, 0, v);
            compare_chart(&mut suite, &t, ChartInput::Sentence(&x), &format!("pcfg {g} {x:?}"));
        }
    }
    for g in 0..config.n_scfg {
        let t = random_table(GrammarKind::Scfg, &mut rng);
        let v = t.topology.vocab_size as u32;
        for _ in 0..3 {
            let la = rng.gen_range(1..=3);
            let lb = rng.gen_range(1..=3);
            // word ids from 2 up: 0 is unknown, 1 is ε
            let a = random_words(&mut rng, la, 2, v);
            let b = random_words(&mut rng, lb, 2, v);
            compare_chart(&mut suite, &t, ChartInput::Pair(&a, &b), &format!("scfg {g} {a:?}/{b:?}"));
        }
    }
    suite.finish()
}

pub fn conservation_suite(config: &SelfcheckConfig) -> SuiteResult {
    let mut suite = Suite::new("count-conservation");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    for g in 0..config.n_pcfg.max(1) {
        let kind = if g % 2 == 0 { GrammarKind::Pcfg } else { GrammarKind::Scfg };
        let t = random_table(kind, &mut rng);
        let v = t.topology.vocab_size as u32;
        for _ in 0..3 {
            match kind {
                GrammarKind::Pcfg => {
                    let x = random_sentence(&mut rng, 8, 0, v);
                    let Ok((_, c)) = expected_rule_counts(&t, ChartInput::Sentence(&x)) else { continue };
                    let total = c.kind_totals()[0];
                    suite.check((total - x.len() as f64).abs() <= CONSERVATION_TOL, || {
                        format!("pcfg {g}: emissions {total} for length {}", x.len())
                    });
                }
                GrammarKind::Scfg => {
                    let a = random_sentence(&mut rng, 5, 2, v);
                    let b = random_sentence(&mut rng, 5, 2, v);
                    let Ok((_, c)) = expected_rule_counts(&t, ChartInput::Pair(&a, &b)) else { continue };
                    let [pair, delete, insert, copy] = c.kind_totals();
                    let (sa, sb) = (pair + delete + copy, pair + insert + copy);
                    suite.check(
                        (sa - a.len() as f64).abs() <= CONSERVATION_TOL && (sb - b.len() as f64).abs() <= CONSERVATION_TOL,
                        || format!("scfg {g}: streams {sa}/{sb} for lengths {}/{}", a.len(), b.len()),
                    );
                }
            }
        }
    }
    suite.finish()
}

fn random_neural(kind: GrammarKind, rng: &mut ChaCha8Rng) -> (GrammarParams, Dataset) {
    let dim = rng.gen_range(2..=8);
    let v = rng.gen_range(4..=6);
    let (topo, ds_kind) = match kind {
        GrammarKind::Pcfg => (GrammarTopology::pcfg(2, 2, v, dim), DatasetKind::Single),
        GrammarKind::Scfg => (GrammarTopology::scfg(2, 2, v, dim, 1), DatasetKind::Pair),
    };
    let params = init_params(&topo, ParamMode::Neural, rng.gen()).expect("valid topology");
    let examples = (0..3)
        .map(|i| {
            let (side_a, side_b) = match kind {
                GrammarKind::Pcfg => (random_sentence(rng, 4, 0, v as u32), None),
                GrammarKind::Scfg => (
                    random_sentence(rng, 3, 2, v as u32),
                    Some(random_sentence(rng, 3, 2, v as u32)),
                ),
            };
            Example {
                id: format!("g{i}"),
                label: 0,
                side_a,
                side_b,
                parent: None,
            }
        })
        .collect();
    let dataset = Dataset {
        examples,
        labels: vec!["x".into()],
        kind: ds_kind,
    };
    (params, dataset)
}

/// Central-difference check of the mean-NLL gradient on a random sample of
/// coordinates. Coordinates whose step crosses a ReLU kink are skipped.
pub fn gradient_suite(config: &SelfcheckConfig) -> SuiteResult {
    let mut suite = Suite::new("gradient-fd");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9d);
    let mut skipped = 0;
    for g in 0..config.n_gradient {
        let kind = if g % 2 == 0 { GrammarKind::Pcfg } else { GrammarKind::Scfg };
        let (params, data) = random_neural(kind, &mut rng);
        let refs: Vec<&Example> = data.examples.iter().collect();
        let analytic = mean_nll_gradient(&params, &refs).expect("finite gradient");
        let words: BTreeSet<u32> = data.examples.iter().flat_map(|e| e.side_a.iter().copied()).collect();
        let names: Vec<String> = params.tensors.keys().cloned().collect();
        for _ in 0..24 {
            let name = &names[rng.gen_range(0..names.len())];
            let i = rng.gen_range(0..params.tensor(name).data.len());
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.tensor_mut(name).data[i] += FD_STEP;
            minus.tensor_mut(name).data[i] -= FD_STEP;
            if relu_pattern(&plus, &words) != relu_pattern(&minus, &words) {
                skipped += 1;
                continue;
            }
            let fp = eval_nll(&plus, &data).expect("finite").mean;
            let fm = eval_nll(&minus, &data).expect("finite").mean;
            let fd = (fp - fm) / (2.0 * FD_STEP);
            let an = analytic.grads[name].data[i];
            let tol = FD_REL_TOL * fd.abs().max(an.abs()) + FD_ABS_TOL;
            suite.check((fd - an).abs() <= tol, || {
                format!("grammar {g} {name}[{i}]: analytic {an:e} vs finite difference {fd:e}")
            });
        }
    }
    let mut r = suite.finish();
    if r.passed {
        r.detail = format!("{} checks, {skipped} kink-crossing coordinates skipped", r.checks);
    }
    r
}

pub fn mutual_information_suite() -> SuiteResult {
    let mut suite = Suite::new("mutual-information");
    let sym = mutual_information(&[2.0, 2.0], &[2.0, 2.0]).unwrap_or(f64::NAN);
    suite.check(sym == 0.0, || format!("symmetric table gives {sym}"));
    let flat = mutual_information(&[5.0, 5.0], &[0.0, 0.0]).unwrap_or(f64::NAN);
    suite.check(flat == 0.0, || format!("balanced always-on feature gives {flat}"));
    let r = mutual_information(&[4.0, 0.0], &[1.0, 5.0]).unwrap_or(f64::NAN);
    suite.check((r - 0.1787).abs() <= 1e-3, || format!("reference table gives {r}"));
    suite.finish()
}

pub fn run_selfcheck(config: &SelfcheckConfig) -> Vec<SuiteResult> {
    vec![
        chart_oracle_suite(config),
        gradient_suite(config),
        conservation_suite(config),
        mutual_information_suite(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        let cfg = SelfcheckConfig {
            n_pcfg: 20,
            n_scfg: 10,
            n_gradient: 3,
            seed: 7,
        };
        let results = run_selfcheck(&cfg);
        assert_eq!(results.len(), 4);
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
            assert!(r.checks > 0, "{}", r.name);
        }
    }
}
