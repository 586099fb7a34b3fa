use super::*;
use crate::corpus::Example;

fn vocab(words: &[&str], eps: bool) -> Vocabulary {
    let toks: Vec<String> = words.iter().map(|w| w.to_string()).collect();
    Vocabulary::build(std::iter::once(toks.as_slice()), 100, eps).unwrap()
}

/// Direct evaluation of the smoothed MI on a class × {on, off} table.
fn mi_oracle(table: &[[f64; 2]]) -> f64 {
    let smoothed: Vec<[f64; 2]> = table.iter().map(|r| [r[0] + 1.0, r[1] + 1.0]).collect();
    let total: f64 = smoothed.iter().map(|r| r[0] + r[1]).sum();
    let p: Vec<[f64; 2]> = smoothed.iter().map(|r| [r[0] / total, r[1] / total]).collect();
    let py: Vec<f64> = p.iter().map(|r| r[0] + r[1]).collect();
    let pz = [p.iter().map(|r| r[0]).sum::<f64>(), p.iter().map(|r| r[1]).sum::<f64>()];
    let mut mi = 0.0;
    for (y, row) in p.iter().enumerate() {
        for z in 0..2 {
            mi += row[z] * (row[z] / (py[y] * pz[z])).ln();
        }
    }
    mi
}

#[test]
fn mutual_information_reference_values() {
    assert_eq!(mutual_information(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), 0.0);
    assert_eq!(mutual_information(&[5.0, 5.0], &[0.0, 0.0]).unwrap(), 0.0);
    let mi = mutual_information(&[4.0, 0.0], &[1.0, 5.0]).unwrap();
    assert!((mi - 0.1787).abs() < 1e-3, "{mi}");
    assert!((mi - mi_oracle(&[[4.0, 1.0], [0.0, 5.0]])).abs() < 1e-12);
    assert!(mutual_information(&[-1.0, 0.0], &[1.0, 1.0]).is_err());
    assert!(mutual_information(&[1.0], &[1.0, 1.0]).is_err());
}

#[test]
fn mutual_information_invariances_and_bound() {
    let tables = [
        (vec![7.0, 1.0, 0.0], vec![3.0, 9.0, 4.0]),
        (vec![0.0, 0.0, 12.0], vec![12.0, 12.0, 0.0]),
        (vec![100.0, 0.0], vec![0.0, 100.0]),
    ];
    for (on, off) in tables {
        let mi = mutual_information(&on, &off).unwrap();
        let rev_on: Vec<f64> = on.iter().rev().copied().collect();
        let rev_off: Vec<f64> = off.iter().rev().copied().collect();
        assert!((mi - mutual_information(&rev_on, &rev_off).unwrap()).abs() < 1e-12);
        assert!((mi - mutual_information(&off, &on).unwrap()).abs() < 1e-12);
        let table: Vec<[f64; 2]> = on.iter().zip(&off).map(|(&a, &b)| [a, b]).collect();
        assert!((mi - mi_oracle(&table)).abs() < 1e-12);
        assert!(mi >= 0.0 && mi < (on.len() as f64).ln());
    }
}

#[test]
fn stats_majority_and_percentage() {
    let s = FeatureStats::from_counts(vec![3, 3, 1], &[10, 10, 10]).unwrap();
    assert_eq!(s.majority_label, 0);
    assert_eq!(s.total_on, 7);
    assert!((s.pct_majority - 300.0 / 7.0).abs() < 1e-12);
    assert!(s.pct_majority >= 100.0 / 3.0);
    let none = FeatureStats::from_counts(vec![0, 0], &[4, 4]).unwrap();
    assert_eq!((none.total_on, none.pct_majority, none.mi), (0, 0.0, 0.0));
    assert!(FeatureStats::from_counts(vec![5], &[4]).is_err());
}

#[test]
fn extraction_one_candidate_per_node() {
    let v = vocab(&["a", "b"], false);
    let t = ParseTree::parse("(S (7 a))", &v).unwrap();
    let keys = extract_subtrees(&t, &v);
    assert_eq!(keys.len(), 1);
    assert_eq!(keys[0].canonical, "(7 a)");
    assert_eq!((keys[0].n_leaves, keys[0].depth), (1, 1));

    // the two "(5 a)" leaves collapse into one candidate
    let t = ParseTree::parse("(S (0 (1 (5 a) (5 a)) (5 b)))", &v).unwrap();
    let keys = extract_subtrees(&t, &v);
    let canon: Vec<&str> = keys.iter().map(|k| k.canonical.as_str()).collect();
    assert_eq!(canon, vec!["(0 (1 (5 a) (5 a)) (5 b))", "(1 (5 a) (5 a))", "(5 a)", "(5 b)"]);
    assert!(keys.len() <= t.nodes().len());
    let whole = &keys[0];
    assert_eq!((whole.root, whole.n_leaves, whole.depth), (0, 3, 3));
}

#[test]
fn synchronous_subtree_matches_rendering() {
    let v = vocab(&["a", "cat", "jumps", "sits", "dog"], true);
    let t = ParseTree::parse("(S (3 (4 a/a) (77 jumps/sits)))", &v).unwrap();
    let keys = extract_subtrees(&t, &v);
    assert!(keys.iter().any(|k| k.canonical == "(77 jumps/sits)" && k.root == 77));
}

fn corpus_from(trees: &[(&str, usize)], labels: &[&str], v: &Vocabulary) -> ParsedCorpus {
    let examples = trees
        .iter()
        .enumerate()
        .map(|(i, (_, y))| Example {
            id: format!("e{i}"),
            label: *y,
            side_a: vec![0],
            side_b: None,
            parent: None,
        })
        .collect();
    let dataset = Dataset {
        examples,
        labels: labels.iter().map(|s| s.to_string()).collect(),
        kind: DatasetKind::Single,
    };
    let parsed = trees
        .iter()
        .map(|(t, _)| (!t.is_empty()).then(|| ParseTree::parse(t, v).unwrap()))
        .collect();
    ParsedCorpus::new(dataset, parsed, v.clone()).unwrap()
}

#[test]
fn composite_of_disjoint_members() {
    let v = vocab(&["a", "b", "c"], false);
    let mut trees = Vec::new();
    for _ in 0..3 {
        trees.push(("(S (0 (4 a) (5 c)))", 0));
    }
    for _ in 0..4 {
        trees.push(("(S (0 (4 b) (5 c)))", 0));
    }
    for _ in 0..5 {
        trees.push(("(S (0 (5 c) (5 c)))", 1));
    }
    trees.push(("", 1));
    let corpus = corpus_from(&trees, &["neg", "pos"], &v);
    let result = rank_and_group(&corpus, &MiningFilters::default()).unwrap();
    let g = result
        .composites
        .iter()
        .find(|c| c.root == 4)
        .expect("root-4 group");
    assert_eq!(g.members.len(), 2);
    assert_eq!(g.stats.total_on, 7);
    assert_eq!(g.stats.counts, vec![7, 0]);
    assert!(g.stats.total_on >= g.members.iter().map(|m| m.stats.total_on).max().unwrap());
    // members by MI: the 4-example one first
    assert_eq!(g.members[0].key.canonical, "(4 b)");
    for c in &result.composites {
        if c.members.len() == 1 {
            assert_eq!(c.stats, c.members[0].stats);
        }
        assert!(c.members.iter().all(|m| m.key.root == c.root && m.stats.majority_label == c.majority_label));
    }
    for w in result.composites.windows(2) {
        assert!(w[0].stats.mi >= w[1].stats.mi);
    }
    for w in result.ranked.windows(2) {
        assert!(w[0].stats.mi >= w[1].stats.mi);
    }
}

#[test]
fn filters_and_top_k() {
    let v = vocab(&["a", "b", "c"], false);
    let trees = [("(S (0 (4 a) (1 (5 b) (5 c))))", 0), ("(S (0 (5 c) (5 c)))", 1)];
    let corpus = corpus_from(&trees, &["x", "y"], &v);
    let f = MiningFilters {
        min_leaves: 2,
        min_depth: 2,
        max_depth: Some(2),
        top_k: 1000,
    };
    let result = rank_and_group(&corpus, &f).unwrap();
    assert!(result.ranked.iter().all(|r| r.key.n_leaves >= 2 && r.key.depth == 2));
    assert_eq!(result.ranked.len(), 2);
    let top1 = rank_and_group(&corpus, &MiningFilters { top_k: 1, ..Default::default() }).unwrap();
    assert_eq!(top1.ranked.len(), 1);
    assert_eq!(top1.composites.len(), 1);
}

#[test]
fn ranking_is_invariant_to_example_order() {
    let v = vocab(&["a", "b", "c"], false);
    let mut trees = vec![
        ("(S (0 (4 a) (5 c)))", 0),
        ("(S (0 (4 b) (5 c)))", 1),
        ("(S (0 (5 c) (5 c)))", 1),
        ("(S (0 (4 a) (5 b)))", 0),
        ("(S (1 (4 a) (5 a)))", 2),
        ("(S (4 c))", 2),
    ];
    let labels = ["a", "b", "c"];
    let r1 = rank_and_group(&corpus_from(&trees, &labels, &v), &MiningFilters::default()).unwrap();
    trees.reverse();
    let r2 = rank_and_group(&corpus_from(&trees, &labels, &v), &MiningFilters::default()).unwrap();
    assert_eq!(r1, r2);
}

#[test]
fn class_exclusive_rule_ranks_first() {
    let v = vocab(&["a", "b", "c"], false);
    let trees = [
        ("(S (0 (1 (4 a) (5 b)) (5 c)))", 0),
        ("(S (0 (1 (4 b) (5 b)) (4 c)))", 0),
        ("(S (0 (4 a) (5 c)))", 1),
        ("(S (0 (5 a) (4 c)))", 1),
        ("(S (2 (4 a) (5 c)))", 1),
    ];
    let corpus = corpus_from(&trees, &["p", "q"], &v);
    let rules = rank_rule_features(&corpus, RuleFamily::Binary).unwrap();
    assert_eq!(rules[0].rule, "1 -> 4 5");
    assert_eq!(rules[0].stats.counts, vec![2, 0]);
    // exhaustive oracle: no rule scores higher
    for r in &rules {
        assert!(r.stats.mi <= rules[0].stats.mi);
    }
    let post = rules[0].class_posterior();
    assert!((post[0] - 3.0 / 4.0).abs() < 1e-12);
    let starts = rank_rule_features(&corpus, RuleFamily::Start).unwrap();
    assert!(starts.iter().any(|r| r.rule == "S -> 2"));
    let terms = rank_rule_features(&corpus, RuleFamily::Terminal).unwrap();
    assert!(terms.iter().any(|r| r.rule == "4 -> a"));
    // a rule absent from every tree under symmetric class totals
    let absent = FeatureStats::from_counts(vec![0, 0], &[3, 3]).unwrap();
    assert_eq!(absent.mi, 0.0);
}

#[test]
fn report_rows_match_table_shapes() {
    let labels: Vec<String> = ["contradiction", "entailment", "neutral"].iter().map(|s| s.to_string()).collect();
    let stats = FeatureStats::from_counts(vec![1125, 55, 55], &[5000, 5000, 5000]).unwrap();
    let row = format_row(1, &labels[stats.majority_label], "32", &stats);
    assert!(row.starts_with("1\tcontradiction\t32\t"), "{row}");
    assert!(row.ends_with("\t1235\t91.1\t1125\t55\t55"), "{row}");

    let rule = RankedRule {
        family: RuleFamily::Binary,
        rule: "17 -> 49 35".into(),
        stats: FeatureStats::from_counts(vec![1990, 3774, 6397], &[20000, 20000, 20000]).unwrap(),
    };
    let report = format_rule_report(&[rule], &labels);
    let mut lines = report.lines();
    assert_eq!(
        lines.next().unwrap(),
        "rank\tmajority_class\trule\tmi_nats\ttotal_on\tpct_majority\tcontradiction\tentailment\tneutral"
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with("1\tneutral\t17 -> 49 35\t"));
    assert!(row.ends_with("\t12161\t52.6\t1990\t3774\t6397"), "{row}");
}

fn pair_corpus(pairs: &[(&str, &str, usize)], v: &Vocabulary) -> ParsedCorpus {
    let enc = |s: &str| v.encode(&crate::corpus::tokenize(s));
    let examples = pairs
        .iter()
        .enumerate()
        .map(|(i, (a, b, y))| Example {
            id: format!("p{i}"),
            label: *y,
            side_a: enc(a),
            side_b: Some(enc(b)),
            parent: None,
        })
        .collect();
    let dataset = Dataset {
        examples,
        labels: vec!["c".into(), "e".into()],
        kind: DatasetKind::Pair,
    };
    ParsedCorpus::new(dataset, vec![None; pairs.len()], v.clone()).unwrap()
}

#[test]
fn ngram_features_use_substring_semantics() {
    let v = vocab(&["a", "man", "is", "walking", "human", "or", "person", "dog"], true);
    let member = |canon: &str| RankedSubtree {
        key: SubtreeKey {
            canonical: canon.into(),
            root: 9,
            n_leaves: 2,
            depth: 2,
        },
        stats: FeatureStats::from_counts(vec![0, 0], &[1, 1]).unwrap(),
    };
    let composite = CompositeFeature {
        root: 9,
        majority_label: 0,
        members: vec![member("(9 (4 a/a) (5 man/person))")],
        stats: FeatureStats::from_counts(vec![0, 0], &[1, 1]).unwrap(),
    };
    let f = derive_ngram_feature(&composite, &v).unwrap();
    assert_eq!(f.spans[0].render(&v, true), "a man/a person");
    let corpus = pair_corpus(
        &[
            ("a man is walking", "a human or a person", 0),
            ("a dog is walking", "a person", 1),
            ("a man", "a dog", 1),
        ],
        &v,
    );
    let pair = evaluate_feature(&Feature::NgramPair(&f), &corpus).unwrap();
    let target = evaluate_feature(&Feature::NgramTargetOnly(&f), &corpus).unwrap();
    assert_eq!(pair, vec![true, false, false]);
    assert_eq!(target, vec![true, true, false]);

    let deletion = CompositeFeature {
        members: vec![member("(9 (4 man/<eps>) (5 is/<eps>))")],
        ..composite.clone()
    };
    let f = derive_ngram_feature(&deletion, &v).unwrap();
    assert_eq!(f.spans[0].b, Vec::<u32>::new());
    assert_eq!(evaluate_feature(&Feature::NgramTargetOnly(&f), &corpus).unwrap(), vec![true, false, false]);
}

#[test]
fn ngram_rejects_pcfg_composites() {
    let v = vocab(&["a"], false);
    let c = CompositeFeature {
        root: 1,
        majority_label: 0,
        members: vec![RankedSubtree {
            key: SubtreeKey {
                canonical: "(1 a)".into(),
                root: 1,
                n_leaves: 1,
                depth: 1,
            },
            stats: FeatureStats::from_counts(vec![0], &[1]).unwrap(),
        }],
        stats: FeatureStats::from_counts(vec![0], &[1]).unwrap(),
    };
    assert!(derive_ngram_feature(&c, &v).is_err());
}

#[test]
fn document_aggregation_and_empty_feature() {
    let v = vocab(&["a", "b"], false);
    let trees = ["(S (3 a))", "(S (3 b))", "(S (3 a))", "(S (3 a))"];
    let examples: Vec<Example> = (0..4)
        .map(|i| Example {
            id: format!("d{}#{}", i / 3, i % 3),
            label: 0,
            side_a: vec![],
            side_b: None,
            parent: Some(format!("d{}", i / 3)),
        })
        .collect();
    let dataset = Dataset {
        examples,
        labels: vec!["pos".into()],
        kind: DatasetKind::Single,
    };
    let parsed = trees.iter().map(|t| Some(ParseTree::parse(t, &v).unwrap())).collect();
    let corpus = ParsedCorpus::new(dataset, parsed, v.clone()).unwrap();
    assert_eq!(corpus.n_documents(), 2);
    let keys: BTreeSet<String> = ["(3 b)".to_string()].into();
    // fires in sentence 2 of the first document only
    assert_eq!(evaluate_feature(&Feature::Subtrees(&keys), &corpus).unwrap(), vec![true, false]);
    let empty = BTreeSet::new();
    assert_eq!(evaluate_feature(&Feature::Subtrees(&empty), &corpus).unwrap(), vec![false, false]);
}

#[test]
fn single_member_feature_matches_extraction() {
    let v = vocab(&["a", "b", "c"], false);
    let trees = [
        ("(S (0 (4 a) (5 c)))", 0),
        ("(S (0 (4 b) (5 c)))", 1),
        ("(S (1 (4 a) (5 c)))", 1),
        ("", 0),
    ];
    let corpus = corpus_from(&trees, &["x", "y"], &v);
    let keys: BTreeSet<String> = ["(4 a)".to_string()].into();
    let fires = evaluate_feature(&Feature::Subtrees(&keys), &corpus).unwrap();
    let oracle: Vec<bool> = corpus
        .trees
        .iter()
        .map(|t| t.as_ref().is_some_and(|t| t.render(&v).contains("(4 a)")))
        .collect();
    assert_eq!(fires, oracle);
}

#[test]
fn feature_definitions_round_trip() {
    let defs = vec![FeatureDefinition {
        root: 32,
        majority: "contradiction".into(),
        members: vec!["(32 black/white)".into(), "(32 a\\/b/c)".into()],
    }];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("features.jsonl");
    write_feature_definitions(&p, &defs).unwrap();
    assert_eq!(read_feature_definitions(&p).unwrap(), defs);
}
