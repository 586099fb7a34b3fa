//! Subcommand flags and drivers.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use serde_json::json;

use shortcut_grammar::corpus::{
    load_dataset, prepare_split, split_documents, Dataset, DatasetKind, TextDataset, Vocabulary,
};
use shortcut_grammar::diagnostics::{
    class_conditional_emissions, contrast_error_rate, format_partition_row, generate_contrast_sets, group_accuracy,
    local_rule_ranking, partition_by_feature, write_contrast_sets, EditKind, EditRule, Predictions, RuleClassTable,
};
use shortcut_grammar::grammar::{init_params, GrammarParams, GrammarTopology, ParamMode};
use shortcut_grammar::miner::{
    format_feature_report, format_rule_report, ngram_feature_from_members, rank_and_group, rank_rule_features,
    read_feature_definitions, write_feature_definitions, Feature, FeatureDefinition, MiningFilters, ParsedCorpus,
    RuleFamily,
};
use shortcut_grammar::robust::{
    build_drift_manifest, build_jtt_manifest, default_l1, featurize_corpus, train_biased_lr, write_manifest, LrConfig,
    RuleIndex,
};
use shortcut_grammar::selfcheck::{run_selfcheck, SelfcheckConfig};
use shortcut_grammar::synth::{self, SynthConfig};
use shortcut_grammar::trainer::{parse_corpus, read_trees, train_mle, write_trees, TrainConfig, TreeRecord};

use crate::artifacts::{Coded, Run};

/// Default pair area bound (`|a|·|b| < 225`).
const DEFAULT_MAX_AREA: usize = 225;

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// key = value file of flags; explicit flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Source of all randomness.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for per-example work (default: all cores).
    #[arg(long)]
    #[serde(skip)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

impl Common {
    fn init(&self) -> Result<()> {
        if let Some(n) = self.workers {
            if n == 0 {
                bail!(Coded::new("E_USAGE", "--workers must be at least 1"));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the worker pool")?;
        }
        Ok(())
    }
}

/// Input corpus flags.
#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Dataset JSONL.
    #[arg(long)]
    pub data: PathBuf,
    /// `single` (one text per record) or `pair`.
    #[arg(long, default_value = "pair")]
    pub kind: DatasetKind,
    /// Split single-text documents into sentences.
    #[arg(long)]
    pub split_sentences: bool,
}

fn load_text(path: &Path, kind: DatasetKind, split: bool) -> Result<TextDataset> {
    let ds = load_dataset(path, kind)?;
    Ok(if split { split_documents(&ds)? } else { ds })
}

/// A parsed corpus from data, trees and vocabulary files, optionally with
/// its labels re-indexed onto `labels`.
fn load_corpus(data: &DataArgs, trees: &Path, vocab: &Path, labels: Option<&[String]>) -> Result<ParsedCorpus> {
    let mut text = load_text(&data.data, data.kind, data.split_sentences)?;
    if let Some(l) = labels {
        text = text.with_labels(l)?;
    }
    let vocab = Vocabulary::load(vocab)?;
    let records = read_trees(trees)?;
    let ds = text.encode(&vocab);
    Ok(ParsedCorpus::from_records(ds, &records, vocab)?.with_text(&text)?)
}

fn area_bound(flag: Option<usize>, kind: DatasetKind) -> Option<usize> {
    match (flag, kind) {
        (Some(0), _) | (None, DatasetKind::Single) => None,
        (Some(m), _) => Some(m),
        (None, DatasetKind::Pair) => Some(DEFAULT_MAX_AREA),
    }
}

fn to_json_line<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

// induce

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct InduceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Training JSONL.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation JSONL for early stopping.
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long, default_value = "pair")]
    pub kind: DatasetKind,
    #[arg(long)]
    pub split_sentences: bool,
    /// `neural` or `tabular` rule parameterization.
    #[arg(long, default_value = "neural")]
    pub mode: ParamMode,
    #[arg(long, default_value_t = 32)]
    pub n_internal: usize,
    #[arg(long, default_value_t = 64)]
    pub n_preterminal: usize,
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    #[arg(long, default_value_t = 20_000)]
    pub vocab_size: usize,
    /// Keep pairs with `|a|·|b|` below this (pair default 225, 0 = off).
    #[arg(long)]
    pub max_area: Option<usize>,
    /// Sample at most this many training examples per class.
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long = "lr", visible_alias = "learning-rate", default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    /// Examples between validation checkpoints.
    #[arg(long = "eval-every", visible_alias = "eval-every-steps", default_value_t = 4096)]
    pub eval_every_steps: usize,
    /// Checkpoints without improvement before stopping.
    #[arg(long = "patience", visible_alias = "patience-checkpoints", default_value_t = 5)]
    pub patience_checkpoints: usize,
    /// Default 40 for single texts, 10 for pairs.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Default 4 for single texts, 1 for pairs.
    #[arg(long)]
    pub batch_size: Option<usize>,
}

pub fn induce(mut a: InduceArgs) -> Result<()> {
    a.common.init()?;
    let kind = a.kind;
    let max_area = area_bound(a.max_area, kind);
    a.max_area = Some(max_area.unwrap_or(0));
    let mut cfg = TrainConfig::for_kind(grammar_kind(kind));
    a.max_epochs = Some(a.max_epochs.unwrap_or(cfg.max_epochs));
    a.batch_size = Some(a.batch_size.unwrap_or(cfg.batch_size));
    cfg.learning_rate = a.learning_rate;
    cfg.beta1 = a.beta1;
    cfg.beta2 = a.beta2;
    cfg.epsilon = a.epsilon;
    cfg.eval_every_steps = a.eval_every_steps;
    cfg.patience_checkpoints = a.patience_checkpoints;
    cfg.max_epochs = a.max_epochs.unwrap_or(cfg.max_epochs);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.seed = a.common.seed;
    cfg.validate()?;

    let run = Run::start(&a.common.out, "induce", &a, &[&a.train, &a.valid])?;
    let train_text = load_text(&a.train, kind, a.split_sentences)?;
    let vocab = train_text.build_vocabulary(a.vocab_size)?;
    let valid_text = load_text(&a.valid, kind, a.split_sentences)?.with_labels(&train_text.labels)?;
    let train = prepare_split(&train_text.encode(&vocab), max_area, a.per_class, a.common.seed)?;
    let valid = prepare_split(&valid_text.encode(&vocab), max_area, None, a.common.seed)?;
    log::info!(
        "training on {} examples, validating on {}, vocabulary {}",
        train.len(),
        valid.len(),
        vocab.len()
    );
    let topo = match kind {
        DatasetKind::Single => GrammarTopology::pcfg(a.n_internal, a.n_preterminal, vocab.len(), a.dim),
        DatasetKind::Pair => {
            let eps = vocab.eps_id().context("pair vocabulary lacks the empty token")?;
            GrammarTopology::scfg(a.n_internal, a.n_preterminal, vocab.len(), a.dim, eps)
        }
    };
    let params = init_params(&topo, a.mode, a.common.seed)?;
    let (params, history) = train_mle(params, &train, &valid, &cfg)?;
    log::info!(
        "best checkpoint {} of {}, {} epochs",
        history.best + 1,
        history.records.len(),
        history.epochs_run
    );

    let ckpt = run.path("checkpoint.json");
    params.save(&ckpt)?;
    run.sidecar(&ckpt)?;
    let vpath = run.path("vocab.json");
    vocab.save(&vpath)?;
    run.sidecar(&vpath)?;
    let mut h = history.to_json()?;
    h.push('\n');
    run.write("history.json", h.as_bytes())?;
    Ok(())
}

fn grammar_kind(kind: DatasetKind) -> shortcut_grammar::grammar::GrammarKind {
    use shortcut_grammar::grammar::GrammarKind;
    match kind {
        DatasetKind::Single => GrammarKind::Pcfg,
        DatasetKind::Pair => GrammarKind::Scfg,
    }
}

// parse

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct ParseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Grammar checkpoint written by `induce`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Vocabulary written by `induce`.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Pairs with `|a|·|b|` at or above this get null trees (0 = off).
    #[arg(long)]
    pub max_area: Option<usize>,
}

pub fn parse(a: ParseArgs) -> Result<()> {
    a.common.init()?;
    let run = Run::start(&a.common.out, "parse", &a, &[&a.data.data, &a.checkpoint, &a.vocab])?;
    let params = GrammarParams::load(&a.checkpoint)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let text = load_text(&a.data.data, a.data.kind, a.data.split_sentences)?;
    let ds = text.encode(&vocab);
    let bound = match a.max_area {
        Some(0) | None => None,
        Some(m) => Some(m),
    };
    let keep: Vec<bool> = ds.examples.iter().map(|e| bound.map_or(true, |m| e.area() < m)).collect();
    let subset = Dataset {
        examples: ds.examples.iter().zip(&keep).filter(|(_, k)| **k).map(|(e, _)| e.clone()).collect(),
        labels: ds.labels.clone(),
        kind: ds.kind,
    };
    let mut parsed = parse_corpus(&params, &subset, &vocab)?.into_iter();
    let records: Vec<TreeRecord> = ds
        .examples
        .iter()
        .zip(&keep)
        .map(|(e, &k)| match k {
            true => parsed.next().expect("one record per kept example"),
            false => TreeRecord {
                id: e.id.clone(),
                logprob: None,
                tree: None,
            },
        })
        .collect();
    let missing = records.iter().filter(|r| r.tree.is_none()).count();
    log::info!("parsed {} of {} examples", records.len() - missing, records.len());
    let path = run.path("trees.jsonl");
    write_trees(&path, &records)?;
    run.sidecar(&path)?;
    Ok(())
}

// mine

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct MineArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Trees written by `parse` for the same data.
    #[arg(long)]
    pub trees: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Subtrees kept after ranking, before grouping by root.
    #[arg(long, default_value_t = 1000)]
    pub top_k: usize,
    #[arg(long, default_value_t = 1)]
    pub min_leaves: usize,
    #[arg(long, default_value_t = 1)]
    pub min_depth: usize,
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Rank only this rule family (`start`, `binary` or `terminal`).
    #[arg(long)]
    pub rule_family: Option<RuleFamily>,
}

pub fn mine(a: MineArgs) -> Result<()> {
    a.common.init()?;
    let run = Run::start(&a.common.out, "mine", &a, &[&a.data.data, &a.trees, &a.vocab])?;
    let corpus = load_corpus(&a.data, &a.trees, &a.vocab, None)?;
    let filters = MiningFilters {
        min_leaves: a.min_leaves,
        min_depth: a.min_depth,
        max_depth: a.max_depth,
        top_k: a.top_k,
    };
    let res = rank_and_group(&corpus, &filters)?;
    let labels = &corpus.dataset.labels;
    let pair = corpus.dataset.kind == DatasetKind::Pair;
    let report = format_feature_report(&res.composites, labels, &corpus.vocab, pair)?;
    run.write("features.tsv", report.as_bytes())?;
    let defs: Vec<FeatureDefinition> =
        res.composites.iter().map(|c| FeatureDefinition::from_composite(c, labels)).collect();
    let path = run.path("features.jsonl");
    write_feature_definitions(&path, &defs)?;
    run.sidecar(&path)?;
    let families = match a.rule_family {
        Some(f) => vec![f],
        None => vec![RuleFamily::Start, RuleFamily::Binary, RuleFamily::Terminal],
    };
    for f in families {
        let rules = rank_rule_features(&corpus, f)?;
        let name = format!("rules_{}.tsv", family_name(f));
        run.write(&name, format_rule_report(&rules, labels).as_bytes())?;
    }
    log::info!("{} composites from {} ranked subtrees", res.composites.len(), res.ranked.len());
    Ok(())
}

fn family_name(f: RuleFamily) -> &'static str {
    match f {
        RuleFamily::Start => "start",
        RuleFamily::Binary => "binary",
        RuleFamily::Terminal => "terminal",
    }
}

// diagnose

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// Any member subtree occurs in the tree.
    Subtree,
    /// Both spans of some member occur in their sides.
    NgramPair,
    /// The target span of some member occurs in the second side.
    NgramTarget,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub trees: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Feature definitions written by `mine`.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value_t = FeatureKind::Subtree)]
    pub feature_kind: FeatureKind,
    /// Number of leading features to evaluate.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Classifier predictions JSONL (`{"id", "pred"}`).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Rank the rules behind every misclassified example.
    #[arg(long, requires_all = ["predictions", "train_data", "train_trees"])]
    pub explain: bool,
    /// Training data whose rule statistics explain errors.
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    #[arg(long)]
    pub train_trees: Option<PathBuf>,
}

#[derive(Serialize)]
struct FeatureDiagnosis {
    rank: usize,
    root: usize,
    majority: String,
    n_supporting: usize,
    n_counter: usize,
    supporting: Vec<String>,
    counter: Vec<String>,
    accuracy: Option<shortcut_grammar::diagnostics::GroupAccuracy>,
}

#[derive(Serialize)]
struct ErrorExplanation {
    id: String,
    gold: String,
    predicted: String,
    rules: Vec<shortcut_grammar::diagnostics::LocalRule>,
}

/// Rules shown per explained error.
const EXPLAIN_TOP: usize = 10;

pub fn diagnose(a: DiagnoseArgs) -> Result<()> {
    a.common.init()?;
    let mut inputs: Vec<&Path> = vec![&a.data.data, &a.trees, &a.vocab, &a.features];
    inputs.extend(a.predictions.as_deref());
    inputs.extend(a.train_data.as_deref());
    inputs.extend(a.train_trees.as_deref());
    let run = Run::start(&a.common.out, "diagnose", &a, &inputs)?;

    let train = match (&a.train_data, &a.train_trees) {
        (Some(d), Some(t)) => {
            let args = DataArgs {
                data: d.clone(),
                ..a.data.clone()
            };
            Some(load_corpus(&args, t, &a.vocab, None)?)
        }
        _ => None,
    };
    let corpus = load_corpus(&a.data, &a.trees, &a.vocab, train.as_ref().map(|t| t.dataset.labels.as_slice()))?;
    let labels = corpus.dataset.labels.clone();
    let defs = read_feature_definitions(&a.features)?;
    let preds = a.predictions.as_deref().map(|p| Predictions::load(p, &labels)).transpose()?;

    let mut rows = Vec::new();
    let mut tsv = String::from("feature\tmajority\tsupporting\tcounter\tacc_supporting\tacc_counter\n");
    for (rank, def) in defs.iter().take(a.top).enumerate() {
        let members = def.member_set();
        let ngram;
        let feature = match a.feature_kind {
            FeatureKind::Subtree => Feature::Subtrees(&members),
            FeatureKind::NgramPair | FeatureKind::NgramTarget => {
                ngram = ngram_feature_from_members(def.members.iter().map(String::as_str), &corpus.vocab)?;
                if a.feature_kind == FeatureKind::NgramPair {
                    Feature::NgramPair(&ngram)
                } else {
                    Feature::NgramTargetOnly(&ngram)
                }
            }
        };
        let p = partition_by_feature(&feature, &corpus, &def.majority)?;
        let acc = preds.as_ref().map(|pr| group_accuracy(&p, pr, &corpus.dataset)).transpose()?;
        tsv.push_str(&format_partition_row(&format!("{}:{}", rank + 1, def.root), &p, acc.as_ref()));
        tsv.push('\n');
        rows.push(FeatureDiagnosis {
            rank: rank + 1,
            root: def.root,
            majority: p.majority.clone(),
            n_supporting: p.supporting.len(),
            n_counter: p.counter.len(),
            supporting: p.supporting,
            counter: p.counter,
            accuracy: acc,
        });
    }

    let mut explanations = Vec::new();
    if a.explain {
        let (train, preds) = (train.as_ref().expect("required by clap"), preds.as_ref().expect("required by clap"));
        let table = RuleClassTable::from_corpus(train);
        for doc in corpus.documents() {
            let predicted = corpus.dataset.label_index(preds.get(&doc.id)?)?;
            if predicted == doc.label {
                continue;
            }
            let mut best: BTreeMap<String, f64> = BTreeMap::new();
            for &m in &doc.members {
                let Some(tree) = &corpus.trees[m] else { continue };
                for r in local_rule_ranking(tree, doc.label, predicted, &table, &corpus.vocab)? {
                    let e = best.entry(r.rule).or_insert(f64::NEG_INFINITY);
                    *e = e.max(r.ratio);
                }
            }
            let mut rules: Vec<_> = best
                .into_iter()
                .map(|(rule, ratio)| shortcut_grammar::diagnostics::LocalRule { rule, ratio })
                .collect();
            rules.sort_by(|x, y| y.ratio.total_cmp(&x.ratio).then_with(|| x.rule.cmp(&y.rule)));
            rules.truncate(EXPLAIN_TOP);
            explanations.push(ErrorExplanation {
                id: doc.id.clone(),
                gold: labels[doc.label].clone(),
                predicted: labels[predicted].clone(),
                rules,
            });
        }
    }
    let report = json!({
        "feature_kind": a.feature_kind,
        "features": rows,
        "errors": if a.explain { Some(explanations) } else { None },
    });
    run.write("diagnose.json", &to_json_line(&report)?)?;
    run.write("diagnose.tsv", tsv.as_bytes())?;
    Ok(())
}

// contrast

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct ContrastArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Sentence-pair dataset whose examples are edited.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub trees: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// `hypernym`, `antonym` or `adjective`.
    #[arg(long)]
    pub edit: EditKind,
    /// Nonterminal the edit applies under.
    #[arg(long)]
    pub root: usize,
    /// Label a shortcut-reliant model switches to.
    #[arg(long)]
    pub shortcut_label: String,
    /// Gold label of the variants (default: the origin's label).
    #[arg(long)]
    pub expected_label: Option<String>,
    /// Comma-separated origin labels to edit (default: all but the shortcut label).
    #[arg(long, value_delimiter = ',')]
    pub select_labels: Option<Vec<String>>,
    /// Emissions per class kept in the edit inventory.
    #[arg(long, default_value_t = 10)]
    pub inventory_k: usize,
    /// Class whose emissions form the inventory (default: the shortcut label).
    #[arg(long)]
    pub inventory_class: Option<String>,
    /// Corpus the inventory is read from (default: --data / --trees).
    #[arg(long, requires = "inventory_trees")]
    pub inventory_data: Option<PathBuf>,
    #[arg(long, requires = "inventory_data")]
    pub inventory_trees: Option<PathBuf>,
    /// Predictions for origins and variants.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

pub fn contrast(a: ContrastArgs) -> Result<()> {
    a.common.init()?;
    let mut inputs: Vec<&Path> = vec![&a.data, &a.trees, &a.vocab];
    inputs.extend(a.inventory_data.as_deref());
    inputs.extend(a.inventory_trees.as_deref());
    inputs.extend(a.predictions.as_deref());
    let run = Run::start(&a.common.out, "contrast", &a, &inputs)?;
    let data = DataArgs {
        data: a.data.clone(),
        kind: DatasetKind::Pair,
        split_sentences: false,
    };
    let corpus = load_corpus(&data, &a.trees, &a.vocab, None)?;
    let labels = corpus.dataset.labels.clone();
    let inv_corpus = match (&a.inventory_data, &a.inventory_trees) {
        (Some(d), Some(t)) => {
            let args = DataArgs { data: d.clone(), ..data };
            Some(load_corpus(&args, t, &a.vocab, Some(&labels))?)
        }
        _ => None,
    };
    let inv_source = inv_corpus.as_ref().unwrap_or(&corpus);
    let inv_class = a.inventory_class.as_deref().unwrap_or(&a.shortcut_label);
    let class = corpus.dataset.label_index(inv_class)?;
    let inventory = class_conditional_emissions(inv_source, a.root, a.inventory_k)
        .into_iter()
        .nth(class)
        .unwrap_or_default();
    let edit = EditRule {
        kind: a.edit,
        root: a.root,
        shortcut_label: a.shortcut_label.clone(),
        expected_label: a.expected_label.clone(),
        select_labels: a.select_labels.clone(),
    };
    let spans: Vec<_> = inventory.iter().map(|e| e.spans.clone()).collect();
    let sets = generate_contrast_sets(&corpus, &edit, &spans)?;
    let path = run.path("contrast.jsonl");
    write_contrast_sets(&path, &sets)?;
    run.sidecar(&path)?;

    let rate = match &a.predictions {
        Some(p) => {
            let preds = Predictions::load(p, &labels)?;
            Some(contrast_error_rate(&sets, &preds)?)
        }
        None => None,
    };
    let report = json!({
        "edit": edit,
        "inventory": inventory.iter().map(|e| json!({"text": e.text, "count": e.count})).collect::<Vec<_>>(),
        "n_sets": sets.len(),
        "n_variants": sets.iter().map(|s| s.variants.len()).sum::<usize>(),
        "error_rate": rate,
    });
    run.write("contrast_report.json", &to_json_line(&report)?)?;
    log::info!("{} contrast sets", sets.len());
    Ok(())
}

// reweight

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Duplicate the weak model's errors.
    Jtt,
    /// Weight by the grammar-rule biased model.
    Drift,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct ReweightArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Weak-model predictions on the training data (jtt).
    #[arg(long, required_if_eq("method", "jtt"))]
    pub weak_predictions: Option<PathBuf>,
    /// Copies of every weak-model error (jtt).
    #[arg(long, required_if_eq("method", "jtt"))]
    pub jtt_upweight: Option<u32>,
    /// Trees of the training data (drift).
    #[arg(long, required_if_eq("method", "drift"))]
    pub trees: Option<PathBuf>,
    #[arg(long, required_if_eq("method", "drift"))]
    pub vocab: Option<PathBuf>,
    /// L1 strength of the biased model (default 1/N).
    #[arg(long)]
    pub l1: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub max_passes: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
}

/// Document ids and gold label indices, in first-occurrence order.
fn documents(text: &TextDataset) -> (Vec<String>, Vec<usize>) {
    let mut ids = Vec::new();
    let mut gold = Vec::new();
    let mut seen = HashMap::new();
    for e in &text.examples {
        let id = e.parent.clone().unwrap_or_else(|| e.id.clone());
        if seen.insert(id.clone(), ()).is_none() {
            gold.push(text.labels.binary_search(&e.label).expect("label collected"));
            ids.push(id);
        }
    }
    (ids, gold)
}

pub fn reweight(a: ReweightArgs) -> Result<()> {
    a.common.init()?;
    let mut inputs: Vec<&Path> = vec![&a.data.data];
    inputs.extend(a.weak_predictions.as_deref());
    inputs.extend(a.trees.as_deref());
    inputs.extend(a.vocab.as_deref());
    let run = Run::start(&a.common.out, "reweight", &a, &inputs)?;
    let records = match a.method {
        Method::Jtt => {
            let text = load_text(&a.data.data, a.data.kind, a.data.split_sentences)?;
            let weak = Predictions::load(a.weak_predictions.as_deref().expect("required by clap"), &text.labels)?;
            let (ids, gold) = documents(&text);
            build_jtt_manifest(&weak, &ids, &gold, &text.labels, a.jtt_upweight.expect("required by clap"))?
        }
        Method::Drift => {
            let corpus = load_corpus(
                &a.data,
                a.trees.as_deref().expect("required by clap"),
                a.vocab.as_deref().expect("required by clap"),
                None,
            )?;
            let index = RuleIndex::from_corpus(&corpus);
            let (ids, feats, gold) = featurize_corpus(&corpus, &index)?;
            let lambda = a.l1.unwrap_or_else(|| default_l1(ids.len()));
            let cfg = LrConfig {
                max_passes: a.max_passes,
                tolerance: a.tolerance,
            };
            let (model, trace) = train_biased_lr(&feats, &gold, corpus.n_classes(), index.len(), lambda, &cfg)?;
            log::info!(
                "biased model: {} passes, converged {}, objective {:.6}",
                trace.objective.len() - 1,
                trace.converged,
                trace.objective.last().copied().unwrap_or(f64::NAN)
            );
            run.write("rule_index.json", format!("{}\n", index.to_json()?).as_bytes())?;
            run.write("biased_model.json", format!("{}\n", model.to_json()?).as_bytes())?;
            build_drift_manifest(&model, &ids, &feats, &gold, &corpus.dataset.labels)?
        }
    };
    let path = run.path("manifest.jsonl");
    write_manifest(&path, &records)?;
    run.sidecar(&path)?;
    Ok(())
}

// selfcheck

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct SelfcheckArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Random tabular PCFGs checked against enumeration.
    #[arg(long, default_value_t = 200)]
    pub n_pcfg: usize,
    /// Random tabular SCFGs checked against enumeration.
    #[arg(long, default_value_t = 100)]
    pub n_scfg: usize,
    /// Random neural grammars checked against finite differences.
    #[arg(long, default_value_t = 20)]
    pub n_gradient: usize,
}

pub fn selfcheck(a: SelfcheckArgs) -> Result<()> {
    a.common.init()?;
    let run = Run::start(&a.common.out, "selfcheck", &a, &[])?;
    let results = run_selfcheck(&SelfcheckConfig {
        n_pcfg: a.n_pcfg,
        n_scfg: a.n_scfg,
        n_gradient: a.n_gradient,
        seed: a.common.seed,
    });
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("{status} {} ({} checks): {}", r.name, r.checks, r.detail);
    }
    run.write("selfcheck.json", &to_json_line(&results)?)?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        bail!(Coded::new("E_SELFCHECK", format!("failed suites: {}", failed.join(", "))));
    }
    Ok(())
}

// synth

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 2000)]
    pub n_examples: usize,
    /// Share of examples using the planted preterminal.
    #[arg(long, default_value_t = 0.35)]
    pub planted_rate: f64,
    /// Label agreement of the planted preterminal.
    #[arg(long, default_value_t = 0.9)]
    pub planted_accuracy: f64,
    /// Shortcut-label rate elsewhere.
    #[arg(long, default_value_t = 0.3)]
    pub base_rate: f64,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    a.common.init()?;
    let cfg = SynthConfig {
        n_examples: a.n_examples,
        planted_rate: a.planted_rate,
        planted_accuracy: a.planted_accuracy,
        base_rate: a.base_rate,
        seed: a.common.seed,
    };
    cfg.validate()?;
    let run = Run::start(&a.common.out, "synth", &a, &[])?;
    let ex = synth::generate(&cfg)?;
    run.write("synth.jsonl", synth::to_jsonl(&ex).as_bytes())?;
    run.write("planted.json", &to_json_line(&synth::planted_ids(&ex))?)?;
    Ok(())
}
