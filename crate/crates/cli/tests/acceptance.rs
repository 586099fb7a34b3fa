//! Acceptance criteria, one PASS/FAIL line each. Criteria 5 and 6 drive
//! the `shortcut` binary; the rest call the library directly.
//!
//! Set `ACCEPTANCE_ONLY=1,4,9` to run a subset.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shortcut_grammar::chart::{expected_rule_counts, inside, ChartInput};
use shortcut_grammar::corpus::{load_dataset, Dataset, DatasetKind, Example, Vocabulary};
use shortcut_grammar::diagnostics::{
    contrast_error_rate, partition_from_indicator, ContrastSet, ContrastVariant, Predictions,
};
use shortcut_grammar::grammar::{init_params, materialize_rules, GrammarKind, GrammarParams, GrammarTopology, ParamMode};
use shortcut_grammar::miner::{
    evaluate_feature, mutual_information, ngram_feature_from_members, read_feature_definitions, Feature,
    ParsedCorpus,
};
use shortcut_grammar::robust::{build_jtt_manifest, train_biased_lr, LrConfig, RuleFeatureVector};
use shortcut_grammar::selfcheck::{chart_oracle_suite, conservation_suite, gradient_suite, SelfcheckConfig};
use shortcut_grammar::trainer::{read_trees, rules_for_examples, train_mle, TrainConfig};

const SUITE_BUDGET: Duration = Duration::from_secs(120);
const INDUCE_BUDGET: Duration = Duration::from_secs(15 * 60);
const MI_REFERENCE: f64 = 0.1787;
const MI_TOL: f64 = 1e-3;
const CONSERVATION_TOL: f64 = 1e-8;
const PLANTED_PCT: f64 = 80.0;
const PLANTED_JACCARD: f64 = 0.6;
const PLANTED_SEEDS: [u64; 3] = [0, 1, 2];
/// Subtrees kept before grouping when mining the 2,000-example corpus.
const PLANTED_TOP_K: &str = "10";
const LR_GRID_TOL: f64 = 1e-6;
const SCALING_RANGE: (f64, f64) = (6.0, 12.0);
const SCALING_TRIALS: usize = 20;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn selected(n: usize) -> bool {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(v) => v.split(',').any(|s| s.trim() == n.to_string()),
        Err(_) => true,
    }
}

fn shortcut(cwd: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_shortcut"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

// 1 and 2: chart oracle and gradient suites

fn timed_suite(f: impl FnOnce() -> shortcut_grammar::selfcheck::SuiteResult) -> Outcome {
    let t = Instant::now();
    let r = f();
    let el = t.elapsed();
    outcome(
        r.passed && el < SUITE_BUDGET,
        format!("{} checks in {:.1}s: {}", r.checks, el.as_secs_f64(), r.detail),
    )
}

fn criterion_1() -> Outcome {
    timed_suite(|| chart_oracle_suite(&SelfcheckConfig::default()))
}

fn criterion_2() -> Outcome {
    timed_suite(|| gradient_suite(&SelfcheckConfig::default()))
}

// 3: conservation on random grammars and on the trained planted grammar

fn criterion_3(dir: &Path) -> Outcome {
    let r = conservation_suite(&SelfcheckConfig::default());
    if !r.passed {
        return outcome(false, r.detail);
    }
    if !dir.join("induce/checkpoint.json").exists() {
        if let Err(e) = small_pipeline(dir) {
            return outcome(false, e);
        }
    }
    let params = match GrammarParams::load(&dir.join("induce/checkpoint.json")) {
        Ok(p) => p,
        Err(e) => return outcome(false, e.to_string()),
    };
    let vocab = Vocabulary::load(&dir.join("induce/vocab.json")).expect("vocab");
    let ds = load_dataset(&dir.join("train/synth.jsonl"), DatasetKind::Pair)
        .expect("data")
        .encode(&vocab);
    let table = rules_for_examples(&params, &ds.examples).expect("rules");
    let mut worst: f64 = 0.0;
    for e in &ds.examples {
        let b = e.side_b.as_deref().expect("pair");
        let (_, c) = expected_rule_counts(&table, ChartInput::Pair(&e.side_a, b)).expect("parse");
        let [pair, delete, insert, copy] = c.kind_totals();
        worst = worst
            .max((pair + delete + copy - e.side_a.len() as f64).abs())
            .max((pair + insert + copy - b.len() as f64).abs());
    }
    outcome(
        worst <= CONSERVATION_TOL,
        format!(
            "{} random-grammar checks; {} synthetic pairs, worst stream deviation {worst:.2e}",
            r.checks,
            ds.len()
        ),
    )
}

// 4: mutual information reference values

/// Add-one smoothed MI written out cell by cell.
fn mi_oracle(table: [[f64; 2]; 2]) -> f64 {
    let s = table.map(|row| row.map(|c| c + 1.0));
    let n: f64 = s.iter().flatten().sum();
    let mut mi = 0.0;
    for y in 0..2 {
        for z in 0..2 {
            let p = s[y][z] / n;
            let py = (s[y][0] + s[y][1]) / n;
            let pz = (s[0][z] + s[1][z]) / n;
            mi += p * (p / (py * pz)).ln();
        }
    }
    mi
}

fn criterion_4() -> Outcome {
    let sym = mutual_information(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
    let r = mutual_information(&[4.0, 0.0], &[1.0, 5.0]).unwrap();
    let oracle = mi_oracle([[4.0, 1.0], [0.0, 5.0]]);
    outcome(
        sym == 0.0 && (r - MI_REFERENCE).abs() <= MI_TOL && (r - oracle).abs() < 1e-12,
        format!("symmetric {sym}, reference table {r:.6} (oracle {oracle:.6})"),
    )
}

// 5: planted shortcut recovery through the command line

struct PlantedRun {
    seed: u64,
    pct: f64,
    jaccard: f64,
    induce_time: Duration,
}

fn planted_run(dir: &Path, seed: u64) -> Result<PlantedRun, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let s = seed.to_string();
    let vs = (seed + 1000).to_string();
    shortcut(dir, &["synth", "--seed", &s, "--out", "train"])?;
    shortcut(dir, &["synth", "--seed", &vs, "--n-examples", "200", "--out", "valid"])?;
    let t = Instant::now();
    shortcut(
        dir,
        &[
            "induce",
            "--train",
            "train/synth.jsonl",
            "--valid",
            "valid/synth.jsonl",
            "--mode",
            "tabular",
            "--n-internal",
            "6",
            "--n-preterminal",
            "10",
            "--dim",
            "8",
            "--eval-every",
            "2000",
            "--seed",
            &s,
            "--out",
            "induce",
        ],
    )?;
    let induce_time = t.elapsed();
    let common = ["--data", "train/synth.jsonl", "--vocab", "induce/vocab.json"];
    let mut parse = vec!["parse", "--checkpoint", "induce/checkpoint.json", "--out", "parse"];
    parse.extend(common);
    shortcut(dir, &parse)?;
    let mut mine = vec!["mine", "--trees", "parse/trees.jsonl", "--top-k", PLANTED_TOP_K, "--out", "mine"];
    mine.extend(common);
    shortcut(dir, &mine)?;

    let report = std::fs::read_to_string(dir.join("mine/features.tsv")).map_err(|e| e.to_string())?;
    let top = report.lines().nth(1).ok_or("empty feature report")?;
    let pct: f64 = top.split('\t').nth(5).ok_or("short row")?.parse().map_err(|_| "bad pct")?;
    let defs = read_feature_definitions(&dir.join("mine/features.jsonl")).map_err(|e| e.to_string())?;
    let corpus = load_corpus(dir, "train/synth.jsonl", "parse/trees.jsonl")?;
    let members = defs[0].member_set();
    let fires = evaluate_feature(&Feature::Subtrees(&members), &corpus).map_err(|e| e.to_string())?;
    let found: BTreeSet<String> = corpus
        .documents()
        .iter()
        .zip(&fires)
        .filter(|(_, f)| **f)
        .map(|(d, _)| d.id.clone())
        .collect();
    let planted: BTreeSet<String> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("train/planted.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let inter = found.intersection(&planted).count() as f64;
    let union = found.union(&planted).count() as f64;
    Ok(PlantedRun {
        seed,
        pct,
        jaccard: inter / union,
        induce_time,
    })
}

fn load_corpus(dir: &Path, data: &str, trees: &str) -> Result<ParsedCorpus, String> {
    let vocab = Vocabulary::load(&dir.join("induce/vocab.json")).map_err(|e| e.to_string())?;
    let ds = load_dataset(&dir.join(data), DatasetKind::Pair).map_err(|e| e.to_string())?.encode(&vocab);
    let records = read_trees(&dir.join(trees)).map_err(|e| e.to_string())?;
    ParsedCorpus::from_records(ds, &records, vocab).map_err(|e| e.to_string())
}

fn criterion_5(root: &Path) -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for seed in PLANTED_SEEDS {
        match planted_run(&root.join(format!("seed{seed}")), seed) {
            Ok(r) => {
                let ok = r.pct >= PLANTED_PCT && r.jaccard >= PLANTED_JACCARD && r.induce_time <= INDUCE_BUDGET;
                passed &= ok;
                parts.push(format!(
                    "seed {}: pct {:.1} jaccard {:.3} induce {:.0}s",
                    r.seed,
                    r.pct,
                    r.jaccard,
                    r.induce_time.as_secs_f64()
                ));
            }
            Err(e) => {
                passed = false;
                parts.push(format!("seed {seed}: {e}"));
            }
        }
    }
    outcome(passed, parts.join("; "))
}

// 6: determinism and early stopping

fn small_pipeline(dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    shortcut(dir, &["synth", "--n-examples", "200", "--seed", "5", "--out", "train"])?;
    shortcut(dir, &["synth", "--n-examples", "40", "--seed", "6", "--out", "valid"])?;
    shortcut(
        dir,
        &[
            "induce", "--train", "train/synth.jsonl", "--valid", "valid/synth.jsonl", "--mode", "tabular",
            "--n-internal", "4", "--n-preterminal", "6", "--dim", "4", "--lr", "0.05", "--eval-every", "100",
            "--max-epochs", "2", "--seed", "5", "--out", "induce",
        ],
    )?;
    let common = ["--data", "train/synth.jsonl", "--vocab", "induce/vocab.json"];
    let with = |head: &[&'static str]| -> Vec<&'static str> {
        let mut v = head.to_vec();
        v.extend(common);
        v
    };
    shortcut(dir, &with(&["parse", "--checkpoint", "induce/checkpoint.json", "--out", "parse"]))?;
    shortcut(dir, &with(&["mine", "--trees", "parse/trees.jsonl", "--top-k", "20", "--out", "mine"]))?;
    shortcut(
        dir,
        &with(&["diagnose", "--trees", "parse/trees.jsonl", "--features", "mine/features.jsonl", "--out", "diagnose"]),
    )?;
    shortcut(dir, &with(&["reweight", "--trees", "parse/trees.jsonl", "--method", "drift", "--out", "drift"]))?;
    Ok(())
}

fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn early_stopping_evaluations() -> (usize, usize) {
    let topo = GrammarTopology::pcfg(1, 1, 2, 1);
    let params = GrammarParams::zeros(&topo, ParamMode::Tabular);
    let ds = |words: Vec<u32>| Dataset {
        examples: vec![Example {
            id: "s".into(),
            label: 0,
            side_a: words,
            side_b: None,
            parent: None,
        }],
        labels: vec!["x".into()],
        kind: DatasetKind::Single,
    };
    // training moves emission mass to word 0; validation only uses word 1
    let mut cfg = TrainConfig::for_kind(GrammarKind::Pcfg);
    cfg.eval_every_steps = 1;
    cfg.max_epochs = 100;
    cfg.learning_rate = 0.05;
    let (_, history) = train_mle(params, &ds(vec![0]), &ds(vec![1, 1]), &cfg).expect("training");
    let worsening = history.records.windows(2).all(|w| w[1].valid_nll > w[0].valid_nll);
    let n = if worsening { history.records.len() } else { usize::MAX };
    (n, cfg.patience_checkpoints + 1)
}

fn criterion_6(root: &Path) -> Outcome {
    let (a, b) = (root.join("a"), root.join("b"));
    if let Err(e) = small_pipeline(&a).and_then(|_| small_pipeline(&b)) {
        return outcome(false, e);
    }
    let fa = files_under(&a);
    let fb = files_under(&b);
    let rel = |v: &[std::path::PathBuf], base: &Path| -> Vec<std::path::PathBuf> {
        v.iter().map(|p| p.strip_prefix(base).unwrap().to_path_buf()).collect()
    };
    let same_names = rel(&fa, &a) == rel(&fb, &b);
    let differing: Vec<String> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| std::fs::read(x).unwrap() != std::fs::read(y).unwrap())
        .map(|(x, _)| x.strip_prefix(&a).unwrap().display().to_string())
        .collect();
    let (evals, expected) = early_stopping_evaluations();
    outcome(
        same_names && differing.is_empty() && evals == expected,
        format!(
            "{} files compared, {} differ{}; worsening validation ran {evals} evaluations (patience+1 = {expected})",
            fa.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(" ({})", differing.join(", ")) }
        ),
    )
}

// 7: diagnostics arithmetic

fn random_corpus(rng: &mut ChaCha8Rng) -> ParsedCorpus {
    let n_classes = rng.gen_range(2..=4);
    let n_docs = rng.gen_range(1..=30);
    let labels: Vec<String> = (0..n_classes).map(|c| format!("c{c}")).collect();
    let mut examples = Vec::new();
    for d in 0..n_docs {
        let label = rng.gen_range(0..n_classes);
        for s in 0..rng.gen_range(1..=3) {
            examples.push(Example {
                id: format!("d{d}#{s}"),
                label,
                side_a: vec![0],
                side_b: None,
                parent: Some(format!("d{d}")),
            });
        }
    }
    let ds = Dataset {
        examples,
        labels,
        kind: DatasetKind::Single,
    };
    let vocab = Vocabulary::build(std::iter::once(&["w".to_string()][..]), 10, false).unwrap();
    let trees = vec![None; ds.len()];
    ParsedCorpus::new(ds, trees, vocab).unwrap()
}

fn partition_draws() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for draw in 0..1000 {
        let corpus = random_corpus(&mut rng);
        let docs = corpus.documents();
        let fires: Vec<bool> = docs.iter().map(|_| rng.gen_bool(0.5)).collect();
        let majority = rng.gen_range(0..corpus.n_classes());
        let p = partition_from_indicator(&fires, &corpus, majority);
        let s: BTreeSet<&String> = p.supporting.iter().collect();
        let c: BTreeSet<&String> = p.counter.iter().collect();
        let firing: BTreeSet<&String> = docs.iter().zip(&fires).filter(|(_, f)| **f).map(|(d, _)| &d.id).collect();
        let union: BTreeSet<&String> = s.union(&c).copied().collect();
        let label_ok = docs
            .iter()
            .all(|d| !s.contains(&d.id) || d.label == majority) && docs.iter().all(|d| !c.contains(&d.id) || d.label != majority);
        if s.intersection(&c).next().is_some() || union != firing || !label_ok || s.len() + c.len() != p.supporting.len() + p.counter.len() {
            return Err(format!("draw {draw} violates disjointness or coverage"));
        }
    }
    Ok(1000)
}

fn toy_contrast() -> Result<(), String> {
    let set = |id: &str, n: usize| ContrastSet {
        origin_id: id.into(),
        origin_label: "neutral".into(),
        expected_label: "neutral".into(),
        shortcut_label: "contradiction".into(),
        variants: (0..n)
            .map(|k| ContrastVariant {
                id: format!("{id}#{k}"),
                tokens_a: vec![],
                tokens_b: vec![],
            })
            .collect(),
    };
    let sets = vec![set("o1", 2), set("o2", 1), set("o3", 3), set("o4", 1), set("o5", 2)];
    let pred = |pairs: &[(&str, &str)]| Predictions {
        by_id: pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
    };
    // o1 correct, one variant flips; o2 correct, no flip; o3 origin wrong;
    // o4 has no origin prediction; o5 correct, both variants flip
    let p = pred(&[
        ("o1", "neutral"),
        ("o1#0", "neutral"),
        ("o1#1", "contradiction"),
        ("o2", "neutral"),
        ("o2#0", "entailment"),
        ("o3", "entailment"),
        ("o3#0", "contradiction"),
        ("o3#1", "contradiction"),
        ("o3#2", "contradiction"),
        ("o5", "neutral"),
        ("o5#0", "contradiction"),
        ("o5#1", "contradiction"),
    ]);
    let r = contrast_error_rate(&sets, &p).map_err(|e| e.to_string())?;
    let hand = (3usize, 2usize, 2.0 / 3.0, vec!["o4".to_string()]);
    if (r.eligible, r.flipped, r.rate, r.missing_origins.clone()) != (hand.0, hand.1, Some(hand.2), hand.3) {
        return Err(format!("toy fixture gave {r:?}"));
    }
    let none = contrast_error_rate(&sets[2..3], &p).map_err(|e| e.to_string())?;
    if none.rate.is_some() || none.eligible != 0 {
        return Err(format!("ineligible-only fixture gave {none:?}"));
    }
    Ok(())
}

fn ngram_containment(dir: &Path) -> Result<String, String> {
    let corpus = load_corpus(dir, "train/synth.jsonl", "parse/trees.jsonl")?;
    let defs = read_feature_definitions(&dir.join("mine/features.jsonl")).map_err(|e| e.to_string())?;
    for (i, d) in defs.iter().enumerate() {
        let members = d.member_set();
        let ngram = ngram_feature_from_members(d.members.iter().map(String::as_str), &corpus.vocab)
            .map_err(|e| e.to_string())?;
        let sub = evaluate_feature(&Feature::Subtrees(&members), &corpus).map_err(|e| e.to_string())?;
        let pair = evaluate_feature(&Feature::NgramPair(&ngram), &corpus).map_err(|e| e.to_string())?;
        let target = evaluate_feature(&Feature::NgramTargetOnly(&ngram), &corpus).map_err(|e| e.to_string())?;
        for k in 0..sub.len() {
            if (sub[k] && !pair[k]) || (pair[k] && !target[k]) {
                return Err(format!("composite {} breaks containment at document {k}", i + 1));
            }
        }
    }
    Ok(format!("{} composites x {} documents", defs.len(), corpus.n_documents()))
}

fn criterion_7(parsed: &Path) -> Outcome {
    let draws = match partition_draws() {
        Ok(n) => n,
        Err(e) => return outcome(false, e),
    };
    if let Err(e) = toy_contrast() {
        return outcome(false, e);
    }
    if !parsed.join("mine/features.jsonl").exists() {
        if let Err(e) = small_pipeline(parsed) {
            return outcome(false, e);
        }
    }
    match ngram_containment(parsed) {
        Ok(c) => outcome(
            true,
            format!("{draws} partition draws; toy contrast counts match; containment over {c}"),
        ),
        Err(e) => outcome(false, e),
    }
}

// 8: biased logistic regression

fn fv(idx: &[u32]) -> RuleFeatureVector {
    RuleFeatureVector::from_indices(idx.to_vec())
}

fn random_problem(seed: u64, n: usize, dim: usize, k: usize) -> (Vec<RuleFeatureVector>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..n {
        let y = rng.gen_range(0..k);
        let x: Vec<u32> = (0..dim as u32)
            .filter(|&i| rng.gen_bool(if i as usize % k == y { 0.6 } else { 0.25 }))
            .collect();
        xs.push(fv(&x));
        ys.push(y);
    }
    (xs, ys)
}

/// Convex 1-D minimization: grid scan then golden-section refinement.
fn grid_min(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let steps = 400;
    let h = (hi - lo) / steps as f64;
    let best = (0..=steps)
        .map(|i| lo + i as f64 * h)
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap();
    let (mut a, mut b) = ((best - h).max(lo), (best + h).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..120 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

fn criterion_8() -> Outcome {
    let cfg = LrConfig::default();
    // objective non-increase
    let mut passes = 0;
    for seed in 0..4 {
        let (xs, ys) = random_problem(seed, 300, 12, 3);
        for lambda in [0.0, 0.003, 0.05] {
            let (_, trace) = train_biased_lr(&xs, &ys, 3, 12, lambda, &cfg).unwrap();
            passes += trace.objective.len() - 1;
            if trace.objective.windows(2).any(|w| w[1] > w[0] + 1e-12) {
                return outcome(false, format!("objective increased (seed {seed}, lambda {lambda})"));
            }
        }
    }
    // large penalty
    let (xs, ys) = random_problem(11, 200, 8, 3);
    let (m, _) = train_biased_lr(&xs, &ys, 3, 8, 1e6, &cfg).unwrap();
    let mut prior = [0.0; 3];
    for &y in &ys {
        prior[y] += 1.0 / ys.len() as f64;
    }
    let p = m.predict(&xs[0]).unwrap();
    let shrink_gap = p.iter().zip(&prior).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if m.weights.iter().any(|&w| w != 0.0) || shrink_gap > 1e-4 {
        return outcome(false, format!("large penalty left weights or prior gap {shrink_gap:e}"));
    }
    // 1-D oracle: a single feature on exactly for class 1
    let (n1, n0, lambda) = (6.0, 4.0, 0.01);
    let mut xs = vec![fv(&[0]); 6];
    xs.extend(vec![fv(&[]); 4]);
    let ys: Vec<usize> = (0..10).map(|i| usize::from(i < 6)).collect();
    let (_, trace) = train_biased_lr(&xs, &ys, 2, 1, lambda, &cfg).unwrap();
    let n = n0 + n1;
    let ce = |w: f64, b: f64| n0 / n * (1.0 + f64::exp(b)).ln() + n1 / n * (1.0 + f64::exp(-(w + b))).ln();
    let reduced = |w: f64| grid_min(&|b| ce(w, b), -30.0, 30.0).1 + lambda * w.abs();
    let (_, f_star) = grid_min(&reduced, -5.0, 30.0);
    let f_model = *trace.objective.last().unwrap();
    let grid_gap = (f_model - f_star).abs();
    // JTT size formula
    let labels = vec!["a".to_string(), "b".to_string()];
    let ids: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
    let gold: Vec<usize> = (0..10).map(|i| i % 2).collect();
    let mut jtt_ok = true;
    for (up, wrong) in [(4u32, vec![3usize, 8]), (1, vec![0, 1, 2]), (7, vec![0, 2, 4, 6, 9])] {
        let weak = Predictions {
            by_id: (0..10)
                .map(|i| {
                    let y = if wrong.contains(&i) { 1 - gold[i] } else { gold[i] };
                    (ids[i].clone(), labels[y].clone())
                })
                .collect(),
        };
        let m = build_jtt_manifest(&weak, &ids, &gold, &labels, up).unwrap();
        let total: u32 = m.iter().map(|r| r.duplication).sum();
        jtt_ok &= total == 10 + (up - 1) * wrong.len() as u32;
    }
    outcome(
        grid_gap <= LR_GRID_TOL && jtt_ok,
        format!("{passes} monotone passes; prior gap {shrink_gap:.1e}; grid oracle gap {grid_gap:.1e}; jtt sizes exact: {jtt_ok}"),
    )
}

// 9: inside scaling

fn criterion_9() -> Outcome {
    let v = 50;
    let topo = GrammarTopology::pcfg(32, 64, v, 1);
    let params = init_params(&topo, ParamMode::Tabular, 0).unwrap();
    let table = materialize_rules(&params).unwrap();
    let sentence = |n: usize| -> Vec<u32> { (0..n).map(|i| ((i * 7 + 3) % v) as u32).collect() };
    let time = |x: &[u32]| {
        let t = Instant::now();
        let chart = inside(&table, ChartInput::Sentence(x)).unwrap();
        std::hint::black_box(chart.n_items());
        t.elapsed().as_secs_f64()
    };
    let lengths = [8, 16, 32];
    let inputs: Vec<Vec<u32>> = lengths.iter().map(|&n| sentence(n)).collect();
    for x in &inputs {
        time(x);
    }
    let mut factors = Vec::new();
    for w in inputs.windows(2) {
        let mut ratios: Vec<f64> = (0..SCALING_TRIALS).map(|_| time(&w[1]) / time(&w[0])).collect();
        ratios.sort_by(f64::total_cmp);
        factors.push(0.5 * (ratios[SCALING_TRIALS / 2 - 1] + ratios[SCALING_TRIALS / 2]));
    }
    outcome(
        factors.iter().all(|f| (SCALING_RANGE.0..=SCALING_RANGE.1).contains(f)),
        format!(
            "median time factors 8->16 {:.2}, 16->32 {:.2} over {SCALING_TRIALS} trials",
            factors[0], factors[1]
        ),
    )
}

#[test]
fn acceptance() {
    let root = tempfile::tempdir().unwrap();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let seed0 = root.path().join("planted/seed0");
    let planted_dir = |dir: &Path| dir.join("mine/features.jsonl").exists().then(|| dir.to_path_buf());

    if selected(1) {
        results.push((1, "chart oracle equivalence", criterion_1()));
    }
    if selected(2) {
        results.push((2, "gradient vs finite differences", criterion_2()));
    }
    if selected(4) {
        results.push((4, "mutual information values", criterion_4()));
    }
    if selected(5) {
        results.push((5, "planted shortcut recovery", criterion_5(&root.path().join("planted"))));
    }
    // later criteria reuse a trained grammar, preferring the planted run
    let parsed = planted_dir(&seed0).unwrap_or_else(|| root.path().join("small"));
    if selected(3) {
        results.push((3, "count conservation", criterion_3(&parsed)));
    }
    if selected(6) {
        results.push((6, "determinism and early stopping", criterion_6(&root.path().join("determinism"))));
    }
    if selected(7) {
        results.push((7, "diagnostics arithmetic", criterion_7(&parsed)));
    }
    if selected(8) {
        results.push((8, "biased logistic regression", criterion_8()));
    }
    if selected(9) {
        results.push((9, "inside complexity scaling", criterion_9()));
    }
    results.sort_by_key(|r| r.0);
    for (n, name, o) in &results {
        println!("{} {n} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
