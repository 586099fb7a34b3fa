//! Python bindings: vocabularies, datasets, grammars (training, parsing,
//! marginals), subtree mining, biased-model fitting, the consistency
//! suites and the synthetic corpus generator.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::json;

use shortcut_grammar::chart::{log_marginal, viterbi_parse, ChartInput};
use shortcut_grammar::corpus::{
    load_dataset, parse_dataset, split_documents, DatasetKind, Example, TextDataset, Vocabulary,
};
use shortcut_grammar::grammar::{init_params, GrammarKind, GrammarParams, GrammarTopology, ParamMode};
use shortcut_grammar::miner::{member_spans, rank_and_group, MiningFilters, ParsedCorpus};
use shortcut_grammar::robust::{train_biased_lr, LrConfig, RuleFeatureVector};
use shortcut_grammar::selfcheck::{run_selfcheck, SelfcheckConfig};
use shortcut_grammar::synth::{self, SynthConfig};
use shortcut_grammar::trainer::{parse_corpus, rules_for_examples, train_mle, TrainConfig, TreeRecord};

create_exception!(
    shortcut_grammar,
    ShortcutError,
    PyException,
    "Library error; the message starts with its machine-readable code."
);

fn err(e: shortcut_grammar::Error) -> PyErr {
    ShortcutError::new_err(format!("{}: {e}", e.code()))
}

/// Converts through JSON so nested records arrive as plain dicts and lists.
fn to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

fn parse_kind(kind: &str) -> PyResult<DatasetKind> {
    kind.parse().map_err(err)
}

/// One parse result: `(id, logprob, tree)`, with `None` for no parse.
type TreeTuple = (String, Option<f64>, Option<String>);

#[pyclass(name = "Vocabulary", module = "shortcut_grammar", from_py_object)]
#[derive(Clone)]
struct PyVocabulary {
    inner: Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Vocabulary::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn encode(&self, tokens: Vec<String>) -> Vec<u32> {
        self.inner.encode(&tokens)
    }

    fn decode(&self, ids: Vec<u32>) -> Vec<String> {
        self.inner.decode(&ids)
    }

    #[getter]
    fn eps_id(&self) -> Option<u32> {
        self.inner.eps_id()
    }

    #[getter]
    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }
}

#[pyclass(name = "Dataset", module = "shortcut_grammar", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: TextDataset,
}

#[pymethods]
impl PyDataset {
    /// Reads dataset JSONL; `kind` is `"single"` or `"pair"`.
    #[staticmethod]
    #[pyo3(signature = (path, kind = "pair", split_sentences = false))]
    fn load(path: PathBuf, kind: &str, split_sentences: bool) -> PyResult<Self> {
        let ds = load_dataset(&path, parse_kind(kind)?).map_err(err)?;
        Self::finish(ds, split_sentences)
    }

    /// Parses dataset JSONL held in a string.
    #[staticmethod]
    #[pyo3(signature = (text, kind = "pair", split_sentences = false))]
    fn from_jsonl(text: &str, kind: &str, split_sentences: bool) -> PyResult<Self> {
        let ds = parse_dataset(text, parse_kind(kind)?).map_err(err)?;
        Self::finish(ds, split_sentences)
    }

    fn __len__(&self) -> usize {
        self.inner.examples.len()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels.clone()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.examples.iter().map(|e| e.id.clone()).collect()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner.kind {
            DatasetKind::Single => "single",
            DatasetKind::Pair => "pair",
        }
    }

    #[pyo3(signature = (max_size = 20000))]
    fn build_vocabulary(&self, max_size: usize) -> PyResult<PyVocabulary> {
        Ok(PyVocabulary {
            inner: self.inner.build_vocabulary(max_size).map_err(err)?,
        })
    }
}

impl PyDataset {
    fn finish(ds: TextDataset, split: bool) -> PyResult<Self> {
        let inner = if split { split_documents(&ds).map_err(err)? } else { ds };
        Ok(Self { inner })
    }
}

#[pyclass(name = "Grammar", module = "shortcut_grammar", from_py_object)]
#[derive(Clone)]
struct PyGrammar {
    inner: GrammarParams,
}

#[pymethods]
impl PyGrammar {
    /// Randomly initialized grammar sized for `vocab`. `kind` is `"pcfg"`
    /// or `"scfg"`, `mode` is `"neural"` or `"tabular"`.
    #[new]
    #[pyo3(signature = (kind, vocab, n_internal = 32, n_preterminal = 64, dim = 256, mode = "neural", seed = 0))]
    fn new(
        kind: &str,
        vocab: &PyVocabulary,
        n_internal: usize,
        n_preterminal: usize,
        dim: usize,
        mode: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let v = vocab.inner.len();
        let topo = match kind {
            "pcfg" => GrammarTopology::pcfg(n_internal, n_preterminal, v, dim),
            "scfg" => {
                let eps = vocab
                    .inner
                    .eps_id()
                    .ok_or_else(|| ShortcutError::new_err("E_INPUT: scfg needs a pair vocabulary"))?;
                GrammarTopology::scfg(n_internal, n_preterminal, v, dim, eps)
            }
            other => return Err(ShortcutError::new_err(format!("E_INPUT: unknown grammar kind {other:?}"))),
        };
        let mode: ParamMode = mode.parse().map_err(err)?;
        Ok(Self {
            inner: init_params(&topo, mode, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: GrammarParams::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner.topology.kind {
            GrammarKind::Pcfg => "pcfg",
            GrammarKind::Scfg => "scfg",
        }
    }

    /// `log p(x)` (or `log p(a, b)`) summed over all derivations.
    #[pyo3(signature = (a, b = None))]
    fn log_marginal(&self, a: Vec<u32>, b: Option<Vec<u32>>) -> PyResult<f64> {
        let ex = example(a, b);
        let table = rules_for_examples(&self.inner, [&ex]).map_err(err)?;
        log_marginal(&table, ChartInput::from_sides(&ex.side_a, ex.side_b.as_deref())).map_err(err)
    }

    /// Most likely tree as `(bracketed string, log probability)`.
    #[pyo3(signature = (vocab, a, b = None))]
    fn viterbi(&self, vocab: &PyVocabulary, a: Vec<u32>, b: Option<Vec<u32>>) -> PyResult<(String, f64)> {
        let ex = example(a, b);
        let table = rules_for_examples(&self.inner, [&ex]).map_err(err)?;
        let (tree, lp) = viterbi_parse(&table, ChartInput::from_sides(&ex.side_a, ex.side_b.as_deref())).map_err(err)?;
        Ok((tree.render(&vocab.inner), lp))
    }

    /// Trains with early stopping on `valid` and returns the best grammar and
    /// the history as a dict. `config` keys are the training option names
    /// (`learning_rate`, `max_epochs`, `eval_every_steps`, ...).
    #[pyo3(signature = (train, valid, vocab, config = None))]
    fn train<'py>(
        &self,
        py: Python<'py>,
        train: &PyDataset,
        valid: &PyDataset,
        vocab: &PyVocabulary,
        config: Option<&Bound<'py, PyDict>>,
    ) -> PyResult<(PyGrammar, Bound<'py, PyAny>)> {
        let mut cfg = TrainConfig::for_kind(self.inner.topology.kind);
        if let Some(d) = config {
            for (k, v) in d.iter() {
                cfg.set(&k.extract::<String>()?, &v.str()?.to_string()).map_err(err)?;
            }
        }
        let train_ds = train.inner.encode(&vocab.inner);
        let valid_ds = valid
            .inner
            .clone()
            .with_labels(&train.inner.labels)
            .map_err(err)?
            .encode(&vocab.inner);
        let params = self.inner.clone();
        let (best, history) = py
            .detach(|| train_mle(params, &train_ds, &valid_ds, &cfg))
            .map_err(err)?;
        let h = serde_json::to_value(&history).map_err(|e| ShortcutError::new_err(e.to_string()))?;
        Ok((PyGrammar { inner: best }, to_py(py, &h)?))
    }

    /// Viterbi trees of every example as `(id, logprob, tree)` tuples.
    fn parse(&self, py: Python<'_>, data: &PyDataset, vocab: &PyVocabulary) -> PyResult<Vec<TreeTuple>> {
        let ds = data.inner.encode(&vocab.inner);
        let records = py.detach(|| parse_corpus(&self.inner, &ds, &vocab.inner)).map_err(err)?;
        Ok(records.into_iter().map(|r| (r.id, r.logprob, r.tree)).collect())
    }
}

fn example(a: Vec<u32>, b: Option<Vec<u32>>) -> Example {
    Example {
        id: String::new(),
        label: 0,
        side_a: a,
        side_b: b,
        parent: None,
    }
}

/// Ranks subtrees by mutual information with the label and groups them by
/// root into composite features, highest MI first.
#[pyfunction]
#[pyo3(signature = (data, trees, vocab, top_k = 1000, min_leaves = 1, min_depth = 1, max_depth = None))]
#[allow(clippy::too_many_arguments)]
fn mine<'py>(
    py: Python<'py>,
    data: &PyDataset,
    trees: Vec<TreeTuple>,
    vocab: &PyVocabulary,
    top_k: usize,
    min_leaves: usize,
    min_depth: usize,
    max_depth: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let records: Vec<TreeRecord> = trees
        .into_iter()
        .map(|(id, logprob, tree)| TreeRecord { id, logprob, tree })
        .collect();
    let ds = data.inner.encode(&vocab.inner);
    let corpus = ParsedCorpus::from_records(ds, &records, vocab.inner.clone()).map_err(err)?;
    let filters = MiningFilters {
        min_leaves,
        min_depth,
        max_depth,
        top_k,
    };
    let res = py.detach(|| rank_and_group(&corpus, &filters)).map_err(err)?;
    let pair = data.inner.kind == DatasetKind::Pair;
    let labels = &corpus.dataset.labels;
    let mut out = Vec::new();
    for c in &res.composites {
        let spans = c
            .members
            .iter()
            .map(|m| member_spans(&m.key.canonical, &corpus.vocab).map(|s| s.render(&corpus.vocab, pair)))
            .collect::<shortcut_grammar::Result<Vec<_>>>()
            .map_err(err)?;
        out.push(json!({
            "root": c.root,
            "majority": labels[c.majority_label],
            "mi": c.stats.mi,
            "total_on": c.stats.total_on,
            "pct_majority": c.stats.pct_majority,
            "counts": labels.iter().cloned().zip(c.stats.counts.iter().map(|&n| json!(n))).collect::<serde_json::Map<_, _>>(),
            "members": c.members.iter().map(|m| m.key.canonical.clone()).collect::<Vec<_>>(),
            "spans": spans,
        }));
    }
    to_py(py, &serde_json::Value::Array(out))
}

/// Smoothed mutual information (nats) between a binary feature and the
/// label from per-class counts where the feature is on and off.
#[pyfunction]
fn mutual_information(on: Vec<f64>, off: Vec<f64>) -> PyResult<f64> {
    shortcut_grammar::miner::mutual_information(&on, &off).map_err(err)
}

/// L1-penalized multinomial logistic regression on sparse binary features
/// (lists of active indices). Returns `(weights, bias, objective trace)`
/// with `weights` as `n_classes` rows of length `dim`.
#[pyfunction]
#[pyo3(signature = (features, labels, n_classes, dim, l1, max_passes = 10000, tolerance = 1e-8))]
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn fit_biased_model(
    py: Python<'_>,
    features: Vec<Vec<u32>>,
    labels: Vec<usize>,
    n_classes: usize,
    dim: usize,
    l1: f64,
    max_passes: usize,
    tolerance: f64,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    let x: Vec<RuleFeatureVector> = features.into_iter().map(RuleFeatureVector::from_indices).collect();
    let cfg = LrConfig { max_passes, tolerance };
    let (model, trace) = py
        .detach(|| train_biased_lr(&x, &labels, n_classes, dim, l1, &cfg))
        .map_err(err)?;
    let rows = if dim == 0 {
        vec![Vec::new(); n_classes]
    } else {
        model.weights.chunks(dim).map(<[f64]>::to_vec).collect()
    };
    Ok((rows, model.bias, trace.objective))
}

/// Runs the built-in consistency suites; one dict per suite.
#[pyfunction]
#[pyo3(signature = (n_pcfg = 200, n_scfg = 100, n_gradient = 20, seed = 0))]
fn selfcheck<'py>(
    py: Python<'py>,
    n_pcfg: usize,
    n_scfg: usize,
    n_gradient: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = SelfcheckConfig {
        n_pcfg,
        n_scfg,
        n_gradient,
        seed,
    };
    let results = py.detach(|| run_selfcheck(&cfg));
    let v = serde_json::to_value(&results).map_err(|e| ShortcutError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// Synthetic sentence-pair corpus with a planted shortcut. Returns the
/// dataset JSONL and the ids of planted examples.
#[pyfunction]
#[pyo3(signature = (n_examples = 2000, seed = 0, planted_rate = 0.35, planted_accuracy = 0.9, base_rate = 0.3))]
fn synth_corpus(
    n_examples: usize,
    seed: u64,
    planted_rate: f64,
    planted_accuracy: f64,
    base_rate: f64,
) -> PyResult<(String, Vec<String>)> {
    let ex = synth::generate(&SynthConfig {
        n_examples,
        planted_rate,
        planted_accuracy,
        base_rate,
        seed,
    })
    .map_err(err)?;
    Ok((synth::to_jsonl(&ex), synth::planted_ids(&ex)))
}

#[pymodule(name = "shortcut_grammar")]
fn shortcut_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ShortcutError", m.py().get_type::<ShortcutError>())?;
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyGrammar>()?;
    m.add_function(wrap_pyfunction!(mine, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(fit_biased_model, m)?)?;
    m.add_function(wrap_pyfunction!(selfcheck, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    Ok(())
}
