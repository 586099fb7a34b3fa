use super::*;
use crate::grammar::{init_params, materialize_rules, GrammarTopology, ParamMode, Terminals};
use crate::numeric::log_sum_exp;

fn random_table(topo: GrammarTopology, seed: u64) -> RuleTable {
    let params = init_params(&topo, ParamMode::Tabular, seed).unwrap();
    materialize_rules(&params).unwrap()
}

fn pcfg_table(seed: u64) -> RuleTable {
    random_table(GrammarTopology::pcfg(2, 2, 3, 1), seed)
}

fn scfg_table(seed: u64) -> RuleTable {
    // vocabulary: 0 = unk, 1 = eps, 2.. words
    random_table(GrammarTopology::scfg(2, 2, 4, 1, 1), seed)
}

/// S → B (0.5) | P (0.5), B → P P (1.0), P → a (1.0).
fn toy_table() -> RuleTable {
    let topo = GrammarTopology::pcfg(1, 1, 1, 1);
    let half = 0.5f64.ln();
    let mut binary = vec![NEG_INF; 4];
    binary[(0 * 2 + 1) * 2 + 1] = 0.0;
    RuleTable {
        topology: topo,
        start: vec![half, half],
        binary_prob: binary.iter().map(|x| x.exp()).collect(),
        binary,
        terminals: Terminals::Pcfg { emit: vec![0.0] },
    }
}

fn inputs_pcfg() -> Vec<Vec<u32>> {
    vec![vec![0], vec![1, 2], vec![2, 0, 1], vec![1, 1, 2, 0], vec![0, 1, 2, 2, 1]]
}

fn inputs_scfg() -> Vec<(Vec<u32>, Vec<u32>)> {
    vec![
        (vec![2], vec![2]),
        (vec![2], vec![3]),
        (vec![2, 3], vec![3]),
        (vec![3], vec![2, 2]),
        (vec![2, 3], vec![2, 3]),
        (vec![3, 2, 2], vec![2, 3]),
    ]
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn toy_grammar_marginal() {
    let t = toy_table();
    let (z, _) = inside_pcfg(&t, &[0, 0]).unwrap();
    assert!((z - 0.5f64.ln()).abs() < 1e-12);
    let (z1, _) = inside_pcfg(&t, &[0]).unwrap();
    assert!((z1 - 0.5f64.ln()).abs() < 1e-12);
    let (z3, _) = inside_pcfg(&t, &[0, 0, 0]).unwrap();
    assert_eq!(z3, NEG_INF);
    assert!(matches!(viterbi_parse(&t, ChartInput::Sentence(&[0, 0, 0])), Err(Error::NoParse)));
    assert!(matches!(
        expected_rule_counts(&t, ChartInput::Sentence(&[0, 0, 0])),
        Err(Error::NoParse)
    ));
}

#[test]
fn inside_matches_enumeration() {
    for seed in 0..5 {
        let t = pcfg_table(seed);
        for x in inputs_pcfg() {
            let derivs = enumerate_derivations(&t, ChartInput::Sentence(&x), 1_000_000).unwrap();
            let oracle = log_sum_exp(&derivs.iter().map(|d| d.1).collect::<Vec<_>>());
            let (z, _) = inside_pcfg(&t, &x).unwrap();
            assert!(close(z, oracle, 1e-10), "{x:?}: {z} vs {oracle}");
        }
        let t = scfg_table(seed);
        for (a, b) in inputs_scfg() {
            let derivs = enumerate_derivations(&t, ChartInput::Pair(&a, &b), 1_000_000).unwrap();
            let oracle = log_sum_exp(&derivs.iter().map(|d| d.1).collect::<Vec<_>>());
            let (z, _) = inside_scfg(&t, &a, &b).unwrap();
            assert!(close(z, oracle, 1e-10), "{a:?}/{b:?}: {z} vs {oracle}");
        }
    }
}

#[test]
fn viterbi_matches_enumeration() {
    let check = |t: &RuleTable, input: ChartInput<'_>| {
        let derivs = enumerate_derivations(t, input, 1_000_000).unwrap();
        let best = derivs.iter().map(|d| d.1).fold(NEG_INF, f64::max);
        let (tree, score) = viterbi_parse(t, input).unwrap();
        assert!(close(score, best, 1e-10));
        assert!(close(tree_logprob(t, &tree).unwrap(), score, 1e-10));
        assert!(derivs.iter().any(|(d, _)| *d == tree));
    };
    for seed in 0..5 {
        let t = pcfg_table(seed);
        for x in inputs_pcfg() {
            check(&t, ChartInput::Sentence(&x));
        }
        let t = scfg_table(seed);
        for (a, b) in inputs_scfg() {
            check(&t, ChartInput::Pair(&a, &b));
        }
    }
}

#[test]
fn viterbi_tree_yields_input() {
    let t = scfg_table(9);
    let (a, b) = (vec![3, 2, 2], vec![2, 3]);
    let (tree, _) = viterbi_parse(&t, ChartInput::Pair(&a, &b)).unwrap();
    assert_eq!(tree.yields(), (a.clone(), b.clone()));
    assert_eq!(tree.span, Span { a: (0, 3), b: Some((0, 2)) });
}

/// Rule counts read off enumerated derivations weighted by their posterior.
fn enumerated_counts(t: &RuleTable, input: ChartInput<'_>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let derivs = enumerate_derivations(t, input, 1_000_000).unwrap();
    let z = log_sum_exp(&derivs.iter().map(|d| d.1).collect::<Vec<_>>());
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
    (start, binary, leaves)
}

fn leaf_mass(c: &RuleCounts, np: usize) -> Vec<f64> {
    match &c.terminals {
        Terminals::Pcfg { emit } => emit.chunks(emit.len() / np).map(|r| r.iter().sum()).collect(),
        Terminals::Scfg { kind, .. } => kind.chunks(4).map(|r| r.iter().sum()).collect(),
    }
}

#[test]
fn expected_counts_match_enumeration() {
    let check = |t: &RuleTable, input: ChartInput<'_>| {
        let (start, binary, leaves) = enumerated_counts(t, input);
        let (_, c) = expected_rule_counts(t, input).unwrap();
        for (x, y) in c.start.iter().zip(&start) {
            assert!((x - y).abs() < 1e-9, "start {x} vs {y}");
        }
        for (x, y) in c.binary.iter().zip(&binary) {
            assert!((x - y).abs() < 1e-9, "binary {x} vs {y}");
        }
        for (x, y) in leaf_mass(&c, t.topology.n_preterminal).iter().zip(&leaves) {
            assert!((x - y).abs() < 1e-9, "leaf {x} vs {y}");
        }
    };
    for seed in 0..4 {
        let t = pcfg_table(seed);
        for x in inputs_pcfg() {
            check(&t, ChartInput::Sentence(&x));
        }
        let t = scfg_table(seed);
        for (a, b) in inputs_scfg() {
            check(&t, ChartInput::Pair(&a, &b));
        }
    }
}

#[test]
fn expected_counts_are_log_marginal_gradient() {
    let t = scfg_table(3);
    let (a, b) = (vec![3, 2, 2], vec![2, 3]);
    let (z, c) = expected_rule_counts(&t, ChartInput::Pair(&a, &b)).unwrap();
    let h = 1e-6;
    for k in (0..t.binary.len()).step_by(3) {
        let mut plus = t.clone();
        let mut minus = t.clone();
        plus.binary[k] += h;
        minus.binary[k] -= h;
        plus.binary_prob[k] = plus.binary[k].exp();
        minus.binary_prob[k] = minus.binary[k].exp();
        let fd = (log_marginal(&plus, ChartInput::Pair(&a, &b)).unwrap()
            - log_marginal(&minus, ChartInput::Pair(&a, &b)).unwrap())
            / (2.0 * h);
        assert!((fd - c.binary[k]).abs() < 1e-6, "rule {k}: {fd} vs {}", c.binary[k]);
    }
    assert!(z < 0.0);
}

#[test]
fn enumeration_limit() {
    let t = pcfg_table(0);
    let x = vec![0, 1, 2, 2, 1, 0];
    assert!(matches!(
        enumerate_derivations(&t, ChartInput::Sentence(&x), 10),
        Err(Error::LimitExceeded(10))
    ));
}

#[test]
fn input_kind_must_match() {
    let t = pcfg_table(0);
    assert!(inside(&t, ChartInput::Pair(&[0], &[1])).is_err());
    assert!(inside(&t, ChartInput::Sentence(&[])).is_err());
    let s = scfg_table(0);
    assert!(inside(&s, ChartInput::Sentence(&[2])).is_err());
    assert!(inside(&s, ChartInput::Pair(&[2], &[])).is_err());
}

#[test]
fn inside_value_lookup() {
    let t = toy_table();
    let chart = inside(&t, ChartInput::Sentence(&[0, 0])).unwrap();
    assert_eq!(chart.value(Span { a: (0, 1), b: None }, 1), 0.0);
    assert_eq!(chart.value(Span { a: (0, 2), b: None }, 0), 0.0);
    assert_eq!(chart.value(Span { a: (0, 2), b: None }, 1), NEG_INF);
}
