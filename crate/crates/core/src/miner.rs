//! Shortcut mining: complete subtrees and production rules of parsed
//! corpora scored by smoothed mutual information with the label, grouped
//! into composite features, plus alignment-free n-gram counterparts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::{render_emission, Node, ParseTree};
use crate::corpus::{Dataset, DatasetKind, Document, TextDataset, Vocabulary, EPS_TOKEN};
use crate::error::{Error, Result};
use crate::trainer::TreeRecord;

/// A parsed corpus: one optional tree per example (`None` = no parse) and
/// the documents statistics are aggregated over.
#[derive(Debug, Clone)]
pub struct ParsedCorpus {
    pub dataset: Dataset,
    pub trees: Vec<Option<ParseTree>>,
    pub vocab: Vocabulary,
    /// Original token strings per example, when available; out-of-vocabulary
    /// words otherwise read back as the unknown token.
    tokens: Option<Vec<(Vec<String>, Option<Vec<String>>)>>,
    documents: Vec<Document>,
    doc_of: Vec<usize>,
}

impl ParsedCorpus {
    pub fn new(dataset: Dataset, trees: Vec<Option<ParseTree>>, vocab: Vocabulary) -> Result<Self> {
        if trees.len() != dataset.len() {
            return Err(Error::Invalid(format!(
                "{} trees for {} examples",
                trees.len(),
                dataset.len()
            )));
        }
        let documents = dataset.documents();
        let mut doc_of = vec![0; dataset.len()];
        for (d, doc) in documents.iter().enumerate() {
            for &m in &doc.members {
                doc_of[m] = d;
            }
        }
        Ok(Self {
            dataset,
            trees,
            vocab,
            tokens: None,
            documents,
            doc_of,
        })
    }

    /// Matches tree records to examples by id.
    pub fn from_records(dataset: Dataset, records: &[TreeRecord], vocab: Vocabulary) -> Result<Self> {
        let by_id: HashMap<&str, &TreeRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
        let trees = dataset
            .examples
            .iter()
            .map(|e| {
                let r = by_id
                    .get(e.id.as_str())
                    .ok_or_else(|| Error::Invalid(format!("no tree record for example {}", e.id)))?;
                r.tree.as_deref().map(|t| ParseTree::parse(t, &vocab)).transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dataset, trees, vocab)
    }

    /// Attaches the token strings of `text`, which must list the same
    /// examples in the same order.
    pub fn with_text(mut self, text: &TextDataset) -> Result<Self> {
        if text.examples.len() != self.dataset.len()
            || text.examples.iter().zip(&self.dataset.examples).any(|(t, e)| t.id != e.id)
        {
            return Err(Error::Invalid("text dataset does not match the parsed examples".into()));
        }
        self.tokens = Some(text.examples.iter().map(|e| (e.side_a.clone(), e.side_b.clone())).collect());
        Ok(self)
    }

    /// Token strings of example `i`.
    pub fn example_tokens(&self, i: usize) -> (Vec<String>, Option<Vec<String>>) {
        match &self.tokens {
            Some(t) => t[i].clone(),
            None => {
                let e = &self.dataset.examples[i];
                (self.vocab.decode(&e.side_a), e.side_b.as_ref().map(|b| self.vocab.decode(b)))
            }
        }
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn n_documents(&self) -> usize {
        self.documents.len()
    }

    pub fn n_classes(&self) -> usize {
        self.dataset.labels.len()
    }

    /// Document-level indicator from an example-level one.
    pub fn aggregate(&self, example_fires: &[bool]) -> Vec<bool> {
        let mut out = vec![false; self.documents.len()];
        for (i, &f) in example_fires.iter().enumerate() {
            out[self.doc_of[i]] |= f;
        }
        out
    }

    pub fn doc_labels(&self) -> Vec<usize> {
        self.documents.iter().map(|d| d.label).collect()
    }

    pub fn class_totals(&self) -> Vec<usize> {
        let mut t = vec![0; self.n_classes()];
        for d in &self.documents {
            t[d.label] += 1;
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubtreeKey {
    pub canonical: String,
    pub root: usize,
    pub n_leaves: usize,
    pub depth: usize,
}

/// One candidate per node of `tree`, deduplicated by canonical string and
/// returned in canonical order.
pub fn extract_subtrees(tree: &ParseTree, vocab: &Vocabulary) -> Vec<SubtreeKey> {
    let mut out: BTreeMap<String, SubtreeKey> = BTreeMap::new();
    fn walk(t: &ParseTree, vocab: &Vocabulary, out: &mut BTreeMap<String, SubtreeKey>) -> (String, usize, usize) {
        let (canonical, n_leaves, depth) = match &t.node {
            Node::Leaf(e) => (format!("({} {})", t.symbol, render_emission(*e, vocab)), 1, 1),
            Node::Branch(l, r) => {
                let (ls, ln, ld) = walk(l, vocab, out);
                let (rs, rn, rd) = walk(r, vocab, out);
                (format!("({} {ls} {rs})", t.symbol), ln + rn, 1 + ld.max(rd))
            }
        };
        out.entry(canonical.clone()).or_insert_with(|| SubtreeKey {
            canonical: canonical.clone(),
            root: t.symbol,
            n_leaves,
            depth,
        });
        (canonical, n_leaves, depth)
    }
    walk(tree, vocab, &mut out);
    out.into_values().collect()
}

/// Smoothed mutual information in nats between a binary feature and the
/// label, from per-class counts of firing (`on`) and non-firing (`off`)
/// units. Every joint cell gets one pseudo-count and the marginals are
/// taken from the smoothed joint.
pub fn mutual_information(on: &[f64], off: &[f64]) -> Result<f64> {
    if on.len() != off.len() || on.is_empty() {
        return Err(Error::Invalid("on/off count vectors must be non-empty and equally long".into()));
    }
    if on.iter().chain(off).any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(Error::Invalid("counts must be finite and non-negative".into()));
    }
    let cells = [on, off];
    let total: f64 = on.iter().chain(off).map(|c| c + 1.0).sum();
    let rows: Vec<f64> = (0..on.len()).map(|y| on[y] + off[y] + 2.0).collect();
    let cols: Vec<f64> = cells.iter().map(|z| z.iter().map(|c| c + 1.0).sum()).collect();
    let mut mi = 0.0;
    for (z, side) in cells.iter().enumerate() {
        for (y, &c) in side.iter().enumerate() {
            let joint = c + 1.0;
            mi += joint / total * (joint * total / (rows[y] * cols[z])).ln();
        }
    }
    Ok(mi.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    /// Firing units per class.
    pub counts: Vec<usize>,
    pub total_on: usize,
    pub mi: f64,
    pub majority_label: usize,
    /// 0 when the feature never fires.
    pub pct_majority: f64,
}

impl FeatureStats {
    /// `class_totals[y]` is the number of units of class `y`.
    pub fn from_counts(counts: Vec<usize>, class_totals: &[usize]) -> Result<Self> {
        if counts.len() != class_totals.len() {
            return Err(Error::Invalid("count vector length differs from class count".into()));
        }
        if counts.iter().zip(class_totals).any(|(c, t)| c > t) {
            return Err(Error::Invalid("feature fires on more units than a class has".into()));
        }
        let on: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let off: Vec<f64> = counts.iter().zip(class_totals).map(|(&c, &t)| (t - c) as f64).collect();
        let mi = mutual_information(&on, &off)?;
        let total_on: usize = counts.iter().sum();
        let mut majority_label = 0;
        for (y, &c) in counts.iter().enumerate() {
            if c > counts[majority_label] {
                majority_label = y;
            }
        }
        let pct_majority = if total_on > 0 {
            100.0 * counts[majority_label] as f64 / total_on as f64
        } else {
            0.0
        };
        Ok(Self {
            counts,
            total_on,
            mi,
            majority_label,
            pct_majority,
        })
    }

    pub fn from_indicator(fires: &[bool], labels: &[usize], class_totals: &[usize]) -> Result<Self> {
        let mut counts = vec![0; class_totals.len()];
        for (&f, &y) in fires.iter().zip(labels) {
            if f {
                counts[y] += 1;
            }
        }
        Self::from_counts(counts, class_totals)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSubtree {
    pub key: SubtreeKey,
    pub stats: FeatureStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeFeature {
    pub root: usize,
    pub majority_label: usize,
    /// Sorted by member MI, highest first.
    pub members: Vec<RankedSubtree>,
    pub stats: FeatureStats,
}

impl CompositeFeature {
    pub fn member_keys(&self) -> BTreeSet<String> {
        self.members.iter().map(|m| m.key.canonical.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningFilters {
    pub min_leaves: usize,
    pub min_depth: usize,
    pub max_depth: Option<usize>,
    pub top_k: usize,
}

impl Default for MiningFilters {
    fn default() -> Self {
        Self {
            min_leaves: 1,
            min_depth: 1,
            max_depth: None,
            top_k: 1000,
        }
    }
}

impl MiningFilters {
    fn admits(&self, k: &SubtreeKey) -> bool {
        k.n_leaves >= self.min_leaves && k.depth >= self.min_depth && self.max_depth.map_or(true, |m| k.depth <= m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningResult {
    /// Top subtrees after filtering, by MI then canonical string.
    pub ranked: Vec<RankedSubtree>,
    /// Sorted by composite MI, highest first.
    pub composites: Vec<CompositeFeature>,
}

/// Every distinct subtree of the corpus with the documents it fires in.
struct SubtreeIndex {
    keys: Vec<SubtreeKey>,
    docs: Vec<Vec<usize>>,
}

fn index_subtrees(corpus: &ParsedCorpus) -> SubtreeIndex {
    let per_example: Vec<Vec<SubtreeKey>> = corpus
        .trees
        .par_iter()
        .map(|t| t.as_ref().map_or_else(Vec::new, |t| extract_subtrees(t, &corpus.vocab)))
        .collect();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut index = SubtreeIndex {
        keys: Vec::new(),
        docs: Vec::new(),
    };
    for (d, doc) in corpus.documents.iter().enumerate() {
        for &m in &doc.members {
            for key in &per_example[m] {
                let id = *ids.entry(key.canonical.clone()).or_insert_with(|| {
                    index.keys.push(key.clone());
                    index.docs.push(Vec::new());
                    index.keys.len() - 1
                });
                if index.docs[id].last() != Some(&d) {
                    index.docs[id].push(d);
                }
            }
        }
    }
    index
}

fn by_mi_then_key(a: (&FeatureStats, &str), b: (&FeatureStats, &str)) -> std::cmp::Ordering {
    b.0.mi.total_cmp(&a.0.mi).then_with(|| a.1.cmp(b.1))
}

pub fn rank_and_group(corpus: &ParsedCorpus, filters: &MiningFilters) -> Result<MiningResult> {
    if corpus.dataset.is_empty() {
        return Err(Error::Empty("corpus".into()));
    }
    let labels = corpus.doc_labels();
    let totals = corpus.class_totals();
    let index = index_subtrees(corpus);
    let mut ranked: Vec<(RankedSubtree, usize)> = index
        .keys
        .iter()
        .enumerate()
        .filter(|(_, k)| filters.admits(k))
        .map(|(i, k)| {
            let mut counts = vec![0; totals.len()];
            for &d in &index.docs[i] {
                counts[labels[d]] += 1;
            }
            Ok((
                RankedSubtree {
                    key: k.clone(),
                    stats: FeatureStats::from_counts(counts, &totals)?,
                },
                i,
            ))
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| by_mi_then_key((&a.0.stats, &a.0.key.canonical), (&b.0.stats, &b.0.key.canonical)));
    ranked.truncate(filters.top_k);

    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (pos, (r, _)) in ranked.iter().enumerate() {
        groups
            .entry((r.key.root, r.stats.majority_label))
            .or_default()
            .push(pos);
    }
    let mut composites = Vec::with_capacity(groups.len());
    for ((root, majority_label), positions) in groups {
        let mut fires = vec![false; corpus.n_documents()];
        for &p in &positions {
            for &d in &index.docs[ranked[p].1] {
                fires[d] = true;
            }
        }
        composites.push(CompositeFeature {
            root,
            majority_label,
            members: positions.iter().map(|&p| ranked[p].0.clone()).collect(),
            stats: FeatureStats::from_indicator(&fires, &labels, &totals)?,
        });
    }
    // groups came out keyed by (root, majority); the stable sort keeps that
    // order among equal MI
    composites.sort_by(|a, b| b.stats.mi.total_cmp(&a.stats.mi));
    Ok(MiningResult {
        ranked: ranked.into_iter().map(|(r, _)| r).collect(),
        composites,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleFamily {
    Start,
    Binary,
    Terminal,
}

impl std::str::FromStr for RuleFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "start" => Ok(Self::Start),
            "binary" => Ok(Self::Binary),
            "terminal" => Ok(Self::Terminal),
            _ => Err(Error::Invalid(format!("unknown rule family {s:?}"))),
        }
    }
}

/// Every rule used in `tree` as `(family, "lhs -> rhs")`; start rules read
/// `S -> α`, binary rules `α -> β γ`, terminal rules `α -> w` or
/// `α -> wa/wb`.
pub fn tree_rules(tree: &ParseTree, vocab: &Vocabulary) -> BTreeSet<(RuleFamily, String)> {
    let mut out = BTreeSet::new();
    out.insert((RuleFamily::Start, format!("S -> {}", tree.symbol)));
    for node in tree.nodes() {
        match &node.node {
            Node::Branch(l, r) => {
                out.insert((RuleFamily::Binary, format!("{} -> {} {}", node.symbol, l.symbol, r.symbol)));
            }
            Node::Leaf(e) => {
                out.insert((RuleFamily::Terminal, format!("{} -> {}", node.symbol, render_emission(*e, vocab))));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRule {
    pub family: RuleFamily,
    pub rule: String,
    pub stats: FeatureStats,
}

impl RankedRule {
    /// Smoothed `p̂(y | r) ∝ 1 + count(y, r)`.
    pub fn class_posterior(&self) -> Vec<f64> {
        let k = self.stats.counts.len() as f64;
        let denom = self.stats.total_on as f64 + k;
        self.stats.counts.iter().map(|&c| (1.0 + c as f64) / denom).collect()
    }
}

/// Document sets of every rule occurring in the corpus, in first-seen order.
pub fn rule_occurrences(corpus: &ParsedCorpus) -> Vec<((RuleFamily, String), Vec<usize>)> {
    let per_example: Vec<BTreeSet<(RuleFamily, String)>> = corpus
        .trees
        .par_iter()
        .map(|t| t.as_ref().map_or_else(BTreeSet::new, |t| tree_rules(t, &corpus.vocab)))
        .collect();
    let mut ids: HashMap<(RuleFamily, String), usize> = HashMap::new();
    let mut out: Vec<((RuleFamily, String), Vec<usize>)> = Vec::new();
    for (d, doc) in corpus.documents.iter().enumerate() {
        for &m in &doc.members {
            for rule in &per_example[m] {
                let id = *ids.entry(rule.clone()).or_insert_with(|| {
                    out.push((rule.clone(), Vec::new()));
                    out.len() - 1
                });
                if out[id].1.last() != Some(&d) {
                    out[id].1.push(d);
                }
            }
        }
    }
    out
}

/// Rules of one family ranked by MI (ties by rule string).
pub fn rank_rule_features(corpus: &ParsedCorpus, family: RuleFamily) -> Result<Vec<RankedRule>> {
    let labels = corpus.doc_labels();
    let totals = corpus.class_totals();
    let mut out: Vec<RankedRule> = rule_occurrences(corpus)
        .into_iter()
        .filter(|((f, _), _)| *f == family)
        .map(|((family, rule), docs)| {
            let mut counts = vec![0; totals.len()];
            for d in docs {
                counts[labels[d]] += 1;
            }
            Ok(RankedRule {
                family,
                rule,
                stats: FeatureStats::from_counts(counts, &totals)?,
            })
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| by_mi_then_key((&a.stats, &a.rule), (&b.stats, &b.rule)));
    Ok(out)
}

/// Contiguous token spans read off a subtree's leaves.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpanPair {
    pub a: Vec<u32>,
    pub b: Vec<u32>,
}

impl SpanPair {
    pub fn render(&self, vocab: &Vocabulary, pair: bool) -> String {
        let side = |ids: &[u32]| {
            if ids.is_empty() {
                EPS_TOKEN.to_string()
            } else {
                vocab.decode(ids).join(" ")
            }
        };
        if pair {
            format!("{}/{}", side(&self.a), side(&self.b))
        } else {
            side(&self.a)
        }
    }
}

/// Alignment-free counterparts of a synchronous composite feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramFeature {
    pub spans: Vec<SpanPair>,
}

fn contains(hay: &[u32], needle: &[u32]) -> bool {
    needle.is_empty() || hay.windows(needle.len()).any(|w| w == needle)
}

impl NgramFeature {
    /// Fires when, for some member, both non-empty spans occur in their
    /// respective sides.
    pub fn pair_fires(&self, a: &[u32], b: &[u32]) -> bool {
        self.spans.iter().any(|s| contains(a, &s.a) && contains(b, &s.b))
    }

    /// Fires when some member's target span occurs in `b`; members without
    /// a target span test their source span against `a`.
    pub fn target_only_fires(&self, a: &[u32], b: &[u32]) -> bool {
        self.spans.iter().any(|s| {
            if s.b.is_empty() {
                contains(a, &s.a)
            } else {
                contains(b, &s.b)
            }
        })
    }
}

pub fn member_spans(canonical: &str, vocab: &Vocabulary) -> Result<SpanPair> {
    let tree = ParseTree::parse(canonical, vocab)?;
    let (a, b) = tree.yields();
    Ok(SpanPair { a, b })
}

pub fn derive_ngram_feature(composite: &CompositeFeature, vocab: &Vocabulary) -> Result<NgramFeature> {
    ngram_feature_from_members(composite.members.iter().map(|m| m.key.canonical.as_str()), vocab)
}

/// N-gram feature from canonical member subtrees (e.g. a stored definition).
pub fn ngram_feature_from_members<'a, I>(canonicals: I, vocab: &Vocabulary) -> Result<NgramFeature>
where
    I: IntoIterator<Item = &'a str>,
{
    let spans = canonicals
        .into_iter()
        .map(|c| {
            let tree = ParseTree::parse(c, vocab)?;
            if tree.span.b.is_none() {
                return Err(Error::Invalid("n-gram features need a synchronous composite".into()));
            }
            let (a, b) = tree.yields();
            Ok(SpanPair { a, b })
        })
        .collect::<Result<_>>()?;
    Ok(NgramFeature { spans })
}

/// A feature that can be evaluated on a parsed corpus.
#[derive(Debug, Clone)]
pub enum Feature<'a> {
    /// Fires when any listed canonical subtree occurs in the tree.
    Subtrees(&'a BTreeSet<String>),
    NgramPair(&'a NgramFeature),
    NgramTargetOnly(&'a NgramFeature),
}

/// Per-example indicator; aggregate with [`ParsedCorpus::aggregate`].
pub fn evaluate_feature_examples(feature: &Feature<'_>, corpus: &ParsedCorpus) -> Result<Vec<bool>> {
    let ds = &corpus.dataset;
    match feature {
        Feature::Subtrees(keys) => Ok(corpus
            .trees
            .par_iter()
            .map(|t| match t {
                Some(t) if !keys.is_empty() => extract_subtrees(t, &corpus.vocab)
                    .iter()
                    .any(|k| keys.contains(&k.canonical)),
                _ => false,
            })
            .collect()),
        Feature::NgramPair(f) | Feature::NgramTargetOnly(f) => {
            if ds.kind != DatasetKind::Pair {
                return Err(Error::Invalid("n-gram pair features need a pair dataset".into()));
            }
            let target_only = matches!(feature, Feature::NgramTargetOnly(_));
            Ok(ds
                .examples
                .iter()
                .map(|e| {
                    let b = e.side_b.as_deref().unwrap_or(&[]);
                    if target_only {
                        f.target_only_fires(&e.side_a, b)
                    } else {
                        f.pair_fires(&e.side_a, b)
                    }
                })
                .collect())
        }
    }
}

/// Document-level indicator (a document fires if any of its examples does).
pub fn evaluate_feature(feature: &Feature<'_>, corpus: &ParsedCorpus) -> Result<Vec<bool>> {
    Ok(corpus.aggregate(&evaluate_feature_examples(feature, corpus)?))
}

fn pct(x: f64) -> String {
    format!("{x:.1}")
}

/// Subtree composite report, one row per composite.
pub fn format_feature_report(
    composites: &[CompositeFeature],
    labels: &[String],
    vocab: &Vocabulary,
    pair: bool,
) -> Result<String> {
    let mut s = String::from("rank\tmajority_class\troot\tmi_nats\ttotal_on\tpct_majority");
    for l in labels {
        let _ = write!(s, "\t{l}");
    }
    s.push_str("\ttop_member_spans\n");
    for (rank, c) in composites.iter().enumerate() {
        let spans = c
            .members
            .iter()
            .take(5)
            .map(|m| member_spans(&m.key.canonical, vocab).map(|sp| sp.render(vocab, pair)))
            .collect::<Result<Vec<_>>>()?;
        s.push_str(&format_row(rank + 1, &labels[c.majority_label], &c.root.to_string(), &c.stats));
        let _ = writeln!(s, "\t{}", spans.join(" | "));
    }
    Ok(s)
}

fn format_row(rank: usize, majority: &str, key: &str, st: &FeatureStats) -> String {
    let mut s = format!(
        "{rank}\t{majority}\t{key}\t{:.6}\t{}\t{}",
        st.mi,
        st.total_on,
        pct(st.pct_majority)
    );
    for c in &st.counts {
        let _ = write!(s, "\t{c}");
    }
    s
}

/// Rule report with the same columns as the feature report, keyed by rule
/// in place of the root symbol.
pub fn format_rule_report(rules: &[RankedRule], labels: &[String]) -> String {
    let mut s = String::from("rank\tmajority_class\trule\tmi_nats\ttotal_on\tpct_majority");
    for l in labels {
        let _ = write!(s, "\t{l}");
    }
    s.push('\n');
    for (rank, r) in rules.iter().enumerate() {
        s.push_str(&format_row(rank + 1, &labels[r.stats.majority_label], &r.rule, &r.stats));
        s.push('\n');
    }
    s
}

/// Line of a feature definition file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDefinition {
    pub root: usize,
    pub majority: String,
    pub members: Vec<String>,
}

impl FeatureDefinition {
    pub fn from_composite(c: &CompositeFeature, labels: &[String]) -> Self {
        Self {
            root: c.root,
            majority: labels[c.majority_label].clone(),
            members: c.members.iter().map(|m| m.key.canonical.clone()).collect(),
        }
    }

    pub fn member_set(&self) -> BTreeSet<String> {
        self.members.iter().cloned().collect()
    }
}

pub fn write_feature_definitions(path: &Path, defs: &[FeatureDefinition]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in defs {
        let line = serde_json::to_string(d).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_feature_definitions(path: &Path) -> Result<Vec<FeatureDefinition>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: n + 1,
            detail: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
