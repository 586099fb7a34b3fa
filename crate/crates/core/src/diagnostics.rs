//! Feature-driven diagnostics: supporting/counter partitions, group
//! accuracy from prediction files, local rule ranking for single errors,
//! class-conditional emission inventories and rule-based contrast sets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chart::ParseTree;
use crate::corpus::{is_punctuation, Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::miner::{evaluate_feature, rule_occurrences, tree_rules, Feature, ParsedCorpus, SpanPair};

/// Predicted class per example id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Predictions {
    pub by_id: BTreeMap<String, String>,
}

#[derive(Deserialize, Serialize)]
struct PredictionRecord {
    id: String,
    pred: String,
}

impl Predictions {
    /// Parses prediction JSONL, checking ids are unique and classes belong
    /// to `labels`.
    pub fn parse(text: &str, labels: &[String]) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: PredictionRecord = serde_json::from_str(line).map_err(|e| Error::Schema {
                line: n + 1,
                detail: e.to_string(),
            })?;
            if !labels.contains(&r.pred) {
                return Err(Error::UnknownClass(r.pred));
            }
            if by_id.insert(r.id.clone(), r.pred).is_some() {
                return Err(Error::Schema {
                    line: n + 1,
                    detail: format!("duplicate prediction id {}", r.id),
                });
            }
        }
        Ok(Self { by_id })
    }

    pub fn load(path: &Path, labels: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, labels)
    }

    pub fn get(&self, id: &str) -> Result<&str> {
        self.by_id
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::MissingPrediction(id.to_string()))
    }
}

/// Firing units (documents) split by whether their gold label matches the
/// feature's training majority label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub majority: String,
    pub supporting: Vec<String>,
    pub counter: Vec<String>,
}

pub fn partition_by_feature(feature: &Feature<'_>, corpus: &ParsedCorpus, train_majority: &str) -> Result<Partition> {
    let majority = corpus.dataset.label_index(train_majority)?;
    let fires = evaluate_feature(feature, corpus)?;
    Ok(partition_from_indicator(&fires, corpus, majority))
}

pub fn partition_from_indicator(fires: &[bool], corpus: &ParsedCorpus, majority: usize) -> Partition {
    let mut p = Partition {
        majority: corpus.dataset.labels[majority].clone(),
        supporting: Vec::new(),
        counter: Vec::new(),
    };
    for (doc, &f) in corpus.documents().iter().zip(fires) {
        if !f {
            continue;
        }
        if doc.label == majority {
            p.supporting.push(doc.id.clone());
        } else {
            p.counter.push(doc.id.clone());
        }
    }
    p
}

/// Accuracy on each side of a partition; `None` for an empty side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub supporting: Option<f64>,
    pub counter: Option<f64>,
}

pub fn group_accuracy(partition: &Partition, predictions: &Predictions, dataset: &Dataset) -> Result<GroupAccuracy> {
    let gold: HashMap<String, usize> = dataset.documents().into_iter().map(|d| (d.id, d.label)).collect();
    let acc = |ids: &[String]| -> Result<Option<f64>> {
        if ids.is_empty() {
            return Ok(None);
        }
        let mut correct = 0;
        for id in ids {
            let y = *gold
                .get(id)
                .ok_or_else(|| Error::Invalid(format!("id {id} not in the dataset")))?;
            if predictions.get(id)? == dataset.labels[y] {
                correct += 1;
            }
        }
        Ok(Some(correct as f64 / ids.len() as f64))
    };
    Ok(GroupAccuracy {
        supporting: acc(&partition.supporting)?,
        counter: acc(&partition.counter)?,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "null".to_string(), |v| format!("{v:.4}"))
}

/// `feature  S  C  acc_S  acc_C` row; undefined accuracies print `null`.
pub fn format_partition_row(name: &str, p: &Partition, acc: Option<&GroupAccuracy>) -> String {
    let (a, b) = acc.map_or((None, None), |g| (g.supporting, g.counter));
    format!(
        "{name}\t{}\t{}\t{}\t{}\t{}",
        p.majority,
        p.supporting.len(),
        p.counter.len(),
        fmt_opt(a),
        fmt_opt(b)
    )
}

/// Per-class occurrence counts of every rule over training trees.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleClassTable {
    pub n_classes: usize,
    pub counts: BTreeMap<String, Vec<usize>>,
}

impl RuleClassTable {
    pub fn from_corpus(corpus: &ParsedCorpus) -> Self {
        let labels = corpus.doc_labels();
        let n_classes = corpus.n_classes();
        let counts = rule_occurrences(corpus)
            .into_iter()
            .map(|((_, rule), docs)| {
                let mut c = vec![0; n_classes];
                for d in docs {
                    c[labels[d]] += 1;
                }
                (rule, c)
            })
            .collect();
        Self { n_classes, counts }
    }

    /// Smoothed `p̂(y | r)`; a rule never seen gets the uniform distribution.
    pub fn posterior(&self, rule: &str, y: usize) -> f64 {
        let k = self.n_classes as f64;
        match self.counts.get(rule) {
            Some(c) => (1.0 + c[y] as f64) / (c.iter().sum::<usize>() as f64 + k),
            None => 1.0 / k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalRule {
    pub rule: String,
    /// `p̂(ŷ | r) / p̂(y* | r)`.
    pub ratio: f64,
}

/// Rules of `tree` ordered by how much more they indicate the predicted
/// class than the gold one (ties by rule string).
pub fn local_rule_ranking(
    tree: &ParseTree,
    gold: usize,
    predicted: usize,
    table: &RuleClassTable,
    vocab: &crate::corpus::Vocabulary,
) -> Result<Vec<LocalRule>> {
    if gold == predicted {
        return Err(Error::Invalid("local ranking diagnoses an error: gold equals prediction".into()));
    }
    if gold >= table.n_classes || predicted >= table.n_classes {
        return Err(Error::Invalid("class index outside the rule table".into()));
    }
    let mut out: Vec<LocalRule> = tree_rules(tree, vocab)
        .into_iter()
        .map(|(_, rule)| {
            let ratio = table.posterior(&rule, predicted) / table.posterior(&rule, gold);
            LocalRule { rule, ratio }
        })
        .collect();
    out.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then_with(|| a.rule.cmp(&b.rule)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryEntry {
    pub spans: SpanPair,
    pub text: String,
    pub count: usize,
}

/// For every class, the `k` most frequent yields of nodes labelled `root`
/// in that class's trees (ties by rendered text).
pub fn class_conditional_emissions(corpus: &ParsedCorpus, root: usize, k: usize) -> Vec<Vec<InventoryEntry>> {
    let pair = corpus.dataset.kind == DatasetKind::Pair;
    let mut counts: Vec<BTreeMap<SpanPair, usize>> = vec![BTreeMap::new(); corpus.n_classes()];
    for (e, tree) in corpus.dataset.examples.iter().zip(&corpus.trees) {
        let Some(tree) = tree else { continue };
        for node in tree.nodes() {
            if node.symbol == root {
                let (a, b) = node.yields();
                *counts[e.label].entry(SpanPair { a, b }).or_default() += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|m| {
            let mut entries: Vec<InventoryEntry> = m
                .into_iter()
                .map(|(spans, count)| InventoryEntry {
                    text: spans.render(&corpus.vocab, pair),
                    spans,
                    count,
                })
                .collect();
            entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.text.cmp(&b.text)));
            entries.truncate(k);
            entries
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditKind {
    /// Replace the target side of an aligned identical pair under `root`
    /// with an alternative of the same source word.
    HypernymSubstitute,
    /// For a source word under `root`, append an alternative target word
    /// (before trailing punctuation) to the second side.
    AntonymAdd,
    /// Insert an `ε/w` alternative before the last target token of the
    /// node labelled `root` (the subject head).
    AdjectiveAdd,
}

impl std::str::FromStr for EditKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hypernym" | "hypernym-substitute" => Ok(Self::HypernymSubstitute),
            "antonym" | "antonym-add" => Ok(Self::AntonymAdd),
            "adjective" | "adjective-add" => Ok(Self::AdjectiveAdd),
            _ => Err(Error::Invalid(format!("unknown edit {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRule {
    pub kind: EditKind,
    pub root: usize,
    /// Label a shortcut-reliant model is expected to switch to.
    pub shortcut_label: String,
    /// Gold label of the variants; `None` keeps the origin's label.
    pub expected_label: Option<String>,
    /// Origins eligible for editing; `None` selects every label other than
    /// the shortcut label.
    pub select_labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastVariant {
    pub id: String,
    pub tokens_a: Vec<String>,
    pub tokens_b: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastSet {
    pub origin_id: String,
    pub origin_label: String,
    pub expected_label: String,
    pub shortcut_label: String,
    pub variants: Vec<ContrastVariant>,
}

/// Half-open token ranges of `node` in each stream.
fn node_spans(node: &ParseTree) -> ((usize, usize), (usize, usize)) {
    (node.span.a, node.span.b.expect("synchronous tree"))
}

fn last_content_end(tokens: &[String]) -> usize {
    tokens
        .iter()
        .rposition(|t| !is_punctuation(t))
        .map_or(tokens.len(), |i| i + 1)
}

pub fn generate_contrast_sets(corpus: &ParsedCorpus, edit: &EditRule, inventory: &[SpanPair]) -> Result<Vec<ContrastSet>> {
    if corpus.dataset.kind != DatasetKind::Pair {
        return Err(Error::Invalid("contrast sets need a sentence-pair corpus".into()));
    }
    if inventory.is_empty() {
        return Err(Error::Empty("edit inventory".into()));
    }
    let labels = &corpus.dataset.labels;
    corpus.dataset.label_index(&edit.shortcut_label)?;
    if let Some(e) = &edit.expected_label {
        corpus.dataset.label_index(e)?;
        if *e == edit.shortcut_label {
            return Err(Error::Invalid("expected label must differ from the shortcut label".into()));
        }
    }
    let selected: BTreeSet<&str> = match &edit.select_labels {
        Some(l) => {
            for x in l {
                corpus.dataset.label_index(x)?;
            }
            l.iter().map(String::as_str).collect()
        }
        None => labels
            .iter()
            .filter(|l| **l != edit.shortcut_label)
            .map(String::as_str)
            .collect(),
    };
    let vocab = &corpus.vocab;
    let mut sets = Vec::new();
    for (i, (ex, tree)) in corpus.dataset.examples.iter().zip(&corpus.trees).enumerate() {
        let origin_label = &labels[ex.label];
        let expected = edit.expected_label.clone().unwrap_or_else(|| origin_label.clone());
        if !selected.contains(origin_label.as_str()) || expected == edit.shortcut_label {
            continue;
        }
        let Some(tree) = tree else { continue };
        let (tok_a, tok_b) = corpus.example_tokens(i);
        let tok_b = tok_b.expect("pair example");
        let mut variants: Vec<Vec<String>> = Vec::new();
        let mut push = |v: Vec<String>| {
            if v != tok_b && !variants.contains(&v) {
                variants.push(v);
            }
        };
        for node in tree.nodes().into_iter().filter(|n| n.symbol == edit.root) {
            let (a, b) = node.yields();
            let (_, (k, l)) = node_spans(node);
            match edit.kind {
                EditKind::HypernymSubstitute => {
                    if a.is_empty() || a != b {
                        continue;
                    }
                    for alt in inventory.iter().filter(|s| s.a == a && !s.b.is_empty() && s.b != a) {
                        let mut v = tok_b[..k].to_vec();
                        v.extend(vocab.decode(&alt.b));
                        v.extend_from_slice(&tok_b[l..]);
                        push(v);
                    }
                }
                EditKind::AntonymAdd => {
                    if a.is_empty() {
                        continue;
                    }
                    let at = last_content_end(&tok_b);
                    for alt in inventory.iter().filter(|s| s.a == a && !s.b.is_empty() && s.b != a) {
                        let mut v = tok_b[..at].to_vec();
                        v.extend(vocab.decode(&alt.b));
                        v.extend_from_slice(&tok_b[at..]);
                        push(v);
                    }
                }
                EditKind::AdjectiveAdd => {
                    if l == k {
                        continue;
                    }
                    for alt in inventory.iter().filter(|s| s.a.is_empty() && !s.b.is_empty()) {
                        let mut v = tok_b[..l - 1].to_vec();
                        v.extend(vocab.decode(&alt.b));
                        v.extend_from_slice(&tok_b[l - 1..]);
                        push(v);
                    }
                }
            }
        }
        if variants.is_empty() {
            continue;
        }
        sets.push(ContrastSet {
            origin_id: ex.id.clone(),
            origin_label: origin_label.clone(),
            expected_label: expected,
            shortcut_label: edit.shortcut_label.clone(),
            variants: variants
                .into_iter()
                .enumerate()
                .map(|(n, tokens_b)| ContrastVariant {
                    id: format!("{}#{}", ex.id, n + 1),
                    tokens_a: tok_a.clone(),
                    tokens_b,
                })
                .collect(),
        });
    }
    Ok(sets)
}

/// Contrast-set output line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastRecord {
    pub origin_id: String,
    pub expected: String,
    pub shortcut: String,
    pub variant_id: String,
    pub text_a: String,
    pub text_b: String,
    /// Gold label of the unedited origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_label: Option<String>,
}

pub fn write_contrast_sets(path: &Path, sets: &[ContrastSet]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in sets {
        for v in &s.variants {
            let r = ContrastRecord {
                origin_id: s.origin_id.clone(),
                expected: s.expected_label.clone(),
                shortcut: s.shortcut_label.clone(),
                variant_id: v.id.clone(),
                text_a: v.tokens_a.join(" "),
                text_b: v.tokens_b.join(" "),
                origin_label: Some(s.origin_label.clone()),
            };
            let line = serde_json::to_string(&r).map_err(|e| Error::Invalid(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Regroups variant lines into sets, in first-seen origin order. The
/// origin label falls back to `origin_labels` when a line lacks it.
pub fn read_contrast_sets(path: &Path, origin_labels: Option<&HashMap<String, String>>) -> Result<Vec<ContrastSet>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sets: Vec<ContrastSet> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ContrastRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: n + 1,
            detail: e.to_string(),
        })?;
        let origin_label = match r.origin_label.clone().or_else(|| origin_labels.and_then(|m| m.get(&r.origin_id).cloned())) {
            Some(l) => l,
            None => {
                return Err(Error::Schema {
                    line: n + 1,
                    detail: format!("no gold label for origin {}", r.origin_id),
                })
            }
        };
        let i = *index.entry(r.origin_id.clone()).or_insert_with(|| {
            sets.push(ContrastSet {
                origin_id: r.origin_id.clone(),
                origin_label,
                expected_label: r.expected.clone(),
                shortcut_label: r.shortcut.clone(),
                variants: Vec::new(),
            });
            sets.len() - 1
        });
        sets[i].variants.push(ContrastVariant {
            id: r.variant_id,
            tokens_a: r.text_a.split(' ').map(str::to_string).collect(),
            tokens_b: r.text_b.split(' ').map(str::to_string).collect(),
        });
    }
    Ok(sets)
}

/// Share of eligible sets (origin predicted correctly) where some variant is
/// predicted as the shortcut label. `rate` is `None` when nothing is
/// eligible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastErrorRate {
    pub rate: Option<f64>,
    pub eligible: usize,
    pub flipped: usize,
    /// Origins without a prediction, excluded from the denominator.
    pub missing_origins: Vec<String>,
}

pub fn contrast_error_rate(sets: &[ContrastSet], predictions: &Predictions) -> Result<ContrastErrorRate> {
    let mut eligible = 0;
    let mut flipped = 0;
    let mut missing_origins = Vec::new();
    for s in sets {
        let Some(origin_pred) = predictions.by_id.get(&s.origin_id) else {
            log::warn!("no prediction for contrast origin {}; set excluded", s.origin_id);
            missing_origins.push(s.origin_id.clone());
            continue;
        };
        if *origin_pred != s.origin_label {
            continue;
        }
        eligible += 1;
        let mut any = false;
        for v in &s.variants {
            any |= predictions.get(&v.id)? == s.shortcut_label;
        }
        if any {
            flipped += 1;
        }
    }
    Ok(ContrastErrorRate {
        rate: (eligible > 0).then(|| flipped as f64 / eligible as f64),
        eligible,
        flipped,
        missing_origins,
    })
}
