//! Maximum-likelihood grammar induction with Adam and early stopping,
//! corpus-level likelihood evaluation and Viterbi parsing.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::{expected_rule_counts, log_marginal, viterbi_parse, ChartInput};
use crate::corpus::{Dataset, DatasetKind, Example, Vocabulary};
use crate::error::{Error, Result};
use crate::grammar::{
    backprop_params, materialize_rules_for, GrammarKind, GrammarParams, RuleCounts, RuleTable,
    TensorMap,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    /// Counted in examples processed.
    pub eval_every_steps: usize,
    pub patience_checkpoints: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn for_kind(kind: GrammarKind) -> Self {
        let (max_epochs, batch_size) = match kind {
            GrammarKind::Pcfg => (40, 4),
            GrammarKind::Scfg => (10, 1),
        };
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs,
            eval_every_steps: 4096,
            patience_checkpoints: 5,
            batch_size,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("epsilon", self.epsilon)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        for (name, v) in [
            ("max_epochs", self.max_epochs),
            ("eval_every_steps", self.eval_every_steps),
            ("patience_checkpoints", self.patience_checkpoints),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::Invalid(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("bad value for {key}: {value:?}")))
        }
        match key {
            "learning_rate" => self.learning_rate = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "eval_every_steps" => self.eval_every_steps = num(key, value)?,
            "patience_checkpoints" => self.patience_checkpoints = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::Invalid(format!("unknown training option {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Schema {
                line: n + 1,
                detail: format!("expected key=value, got {line:?}"),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "learning_rate={}", self.learning_rate);
        let _ = writeln!(s, "beta1={}", self.beta1);
        let _ = writeln!(s, "beta2={}", self.beta2);
        let _ = writeln!(s, "epsilon={}", self.epsilon);
        let _ = writeln!(s, "max_epochs={}", self.max_epochs);
        let _ = writeln!(s, "eval_every_steps={}", self.eval_every_steps);
        let _ = writeln!(s, "patience_checkpoints={}", self.patience_checkpoints);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }
}

mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    /// Non-finite values are written as `null` and read back as `+inf`.
    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    /// Examples processed so far.
    pub step: usize,
    /// Mean training NLL over the examples since the previous checkpoint.
    #[serde(with = "nullable")]
    pub train_nll: f64,
    #[serde(with = "nullable")]
    pub valid_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<CheckpointRecord>,
    pub best: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Training examples with no derivation, skipped.
    pub skipped_examples: usize,
}

impl TrainHistory {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))
    }
}

/// Adam on a [`TensorMap`], minimizing.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: i32,
    m: TensorMap,
    v: TensorMap,
}

impl Adam {
    pub fn new(config: &TrainConfig, params: &GrammarParams) -> Self {
        let zeros = GrammarParams::zeros(&params.topology, params.mode).tensors;
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut GrammarParams, grads: &TensorMap) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, g) in grads {
            let m = &mut self.m.get_mut(name).expect("moment tensor").data;
            let v = &mut self.v.get_mut(name).expect("moment tensor").data;
            let p = &mut params.tensor_mut(name).data;
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
            }
        }
    }
}

fn input_of(e: &Example) -> ChartInput<'_> {
    ChartInput::from_sides(&e.side_a, e.side_b.as_deref())
}

fn check_kind(params: &GrammarParams, kind: DatasetKind) -> Result<()> {
    let ok = matches!(
        (params.topology.kind, kind),
        (GrammarKind::Pcfg, DatasetKind::Single) | (GrammarKind::Scfg, DatasetKind::Pair)
    );
    if ok {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "{:?} grammar cannot model a {kind:?} dataset",
            params.topology.kind
        )))
    }
}

/// Rule tables covering every source word of `examples`.
pub fn rules_for_examples<'a, I>(params: &GrammarParams, examples: I) -> Result<RuleTable>
where
    I: IntoIterator<Item = &'a Example>,
{
    let words: BTreeSet<u32> = match params.topology.kind {
        GrammarKind::Pcfg => BTreeSet::new(),
        GrammarKind::Scfg => examples
            .into_iter()
            .flat_map(|e| e.side_a.iter().copied())
            .filter(|&w| (w as usize) < params.topology.vocab_size)
            .collect(),
    };
    materialize_rules_for(params, &words)
}

/// Mean NLL over a set of examples and its gradient with respect to the raw
/// parameters. Unparseable examples are excluded from both and listed.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub mean_nll: f64,
    pub n_parsed: usize,
    pub unparseable: Vec<String>,
    pub grads: TensorMap,
}

pub fn mean_nll_gradient(params: &GrammarParams, examples: &[&Example]) -> Result<BatchGradient> {
    let table = rules_for_examples(params, examples.iter().copied())?;
    let results: Vec<Result<Option<(f64, RuleCounts)>>> = examples
        .par_iter()
        .map(|e| match expected_rule_counts(&table, input_of(e)) {
            Ok(r) => Ok(Some(r)),
            Err(Error::NoParse) => Ok(None),
            Err(err) => Err(err),
        })
        .collect();
    let mut total = RuleCounts::zeros(&params.topology);
    let mut loglik = 0.0;
    let mut n_parsed = 0;
    let mut unparseable = Vec::new();
    for (e, r) in examples.iter().zip(results) {
        match r? {
            Some((lp, counts)) => {
                if !lp.is_finite() {
                    return Err(Error::NonFinite(format!("log-likelihood of example {}", e.id)));
                }
                loglik += lp;
                n_parsed += 1;
                total.add_scaled(&counts, 1.0);
            }
            None => unparseable.push(e.id.clone()),
        }
    }
    let mut grads = backprop_params(params, &total)?;
    if n_parsed > 0 {
        let scale = -1.0 / n_parsed as f64;
        for t in grads.values_mut() {
            t.data.iter_mut().for_each(|g| *g *= scale);
        }
    }
    for (name, t) in &grads {
        if t.data.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    Ok(BatchGradient {
        mean_nll: if n_parsed > 0 { -loglik / n_parsed as f64 } else { f64::INFINITY },
        n_parsed,
        unparseable,
        grads,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllReport {
    /// `+inf` when any example is unparseable.
    pub mean: f64,
    pub per_example: Vec<f64>,
    pub unparseable: Vec<String>,
}

pub fn eval_nll(params: &GrammarParams, dataset: &Dataset) -> Result<NllReport> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation dataset".into()));
    }
    check_kind(params, dataset.kind)?;
    let table = rules_for_examples(params, &dataset.examples)?;
    let per_example: Vec<f64> = dataset
        .examples
        .par_iter()
        .map(|e| log_marginal(&table, input_of(e)).map(|lp| -lp))
        .collect::<Result<_>>()?;
    let unparseable: Vec<String> = dataset
        .examples
        .iter()
        .zip(&per_example)
        .filter(|(_, &nll)| nll == f64::INFINITY)
        .map(|(e, _)| e.id.clone())
        .collect();
    let mean = per_example.iter().sum::<f64>() / per_example.len() as f64;
    Ok(NllReport {
        mean,
        per_example,
        unparseable,
    })
}

/// Trains by gradient descent on mean NLL and returns the parameters of the
/// checkpoint with the lowest validation NLL.
pub fn train_mle(
    params: GrammarParams,
    train: &Dataset,
    valid: &Dataset,
    config: &TrainConfig,
) -> Result<(GrammarParams, TrainHistory)> {
    config.validate()?;
    check_kind(&params, train.kind)?;
    check_kind(&params, valid.kind)?;
    if train.is_empty() {
        return Err(Error::Empty("training dataset".into()));
    }
    let mut params = params;
    let mut adam = Adam::new(config, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = TrainHistory {
        records: Vec::new(),
        best: 0,
        epochs_run: 0,
        stopped_early: false,
        skipped_examples: 0,
    };
    let mut best_params = params.clone();
    let mut best_nll = f64::INFINITY;
    let mut bad_checkpoints = 0;
    let mut steps = 0;
    let mut next_eval = config.eval_every_steps;
    let (mut run_nll, mut run_count) = (0.0, 0usize);

    let mut evaluate = |params: &GrammarParams,
                        steps: usize,
                        run_nll: &mut f64,
                        run_count: &mut usize,
                        history: &mut TrainHistory|
     -> Result<bool> {
        let valid_nll = eval_nll(params, valid)?.mean;
        let train_nll = if *run_count > 0 { *run_nll / *run_count as f64 } else { f64::NAN };
        (*run_nll, *run_count) = (0.0, 0);
        history.records.push(CheckpointRecord {
            step: steps,
            train_nll,
            valid_nll,
        });
        log::info!("step {steps}: train nll {train_nll:.4}, valid nll {valid_nll:.4}");
        if history.records.len() == 1 || valid_nll < best_nll {
            best_nll = valid_nll;
            best_params = params.clone();
            history.best = history.records.len() - 1;
            bad_checkpoints = 0;
        } else {
            bad_checkpoints += 1;
        }
        Ok(bad_checkpoints >= config.patience_checkpoints)
    };

    'epochs: for _ in 0..config.max_epochs {
        history.epochs_run += 1;
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let examples: Vec<&Example> = batch.iter().map(|&i| &train.examples[i]).collect();
            let g = mean_nll_gradient(&params, &examples)?;
            if !g.unparseable.is_empty() {
                log::warn!("skipping unparseable training examples {:?}", g.unparseable);
                history.skipped_examples += g.unparseable.len();
            }
            if g.n_parsed > 0 {
                adam.step(&mut params, &g.grads);
                run_nll += g.mean_nll * g.n_parsed as f64;
                run_count += g.n_parsed;
            }
            steps += batch.len();
            if steps >= next_eval {
                while next_eval <= steps {
                    next_eval += config.eval_every_steps;
                }
                if evaluate(&params, steps, &mut run_nll, &mut run_count, &mut history)? {
                    history.stopped_early = true;
                    break 'epochs;
                }
            }
        }
    }
    if !history.stopped_early && history.records.last().map_or(true, |r| r.step != steps) {
        evaluate(&params, steps, &mut run_nll, &mut run_count, &mut history)?;
    }
    Ok((best_params, history))
}

/// One line of a trees file. `logprob` and `tree` are `null` for inputs
/// without a derivation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub id: String,
    pub logprob: Option<f64>,
    pub tree: Option<String>,
}

/// Viterbi tree for every example, in dataset order.
pub fn parse_corpus(params: &GrammarParams, dataset: &Dataset, vocab: &Vocabulary) -> Result<Vec<TreeRecord>> {
    check_kind(params, dataset.kind)?;
    let table = rules_for_examples(params, &dataset.examples)?;
    dataset
        .examples
        .par_iter()
        .map(|e| match viterbi_parse(&table, input_of(e)) {
            Ok((tree, lp)) => Ok(TreeRecord {
                id: e.id.clone(),
                logprob: Some(lp),
                tree: Some(tree.render_with_start(vocab)),
            }),
            Err(Error::NoParse) => Ok(TreeRecord {
                id: e.id.clone(),
                logprob: None,
                tree: None,
            }),
            Err(err) => Err(err),
        })
        .collect()
}

pub fn write_trees(path: &Path, records: &[TreeRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trees(path: &Path) -> Result<Vec<TreeRecord>> {
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

/// `log p(x)` for each example, `-inf` where unparseable.
pub fn log_marginals(params: &GrammarParams, dataset: &Dataset) -> Result<Vec<f64>> {
    check_kind(params, dataset.kind)?;
    let table = rules_for_examples(params, &dataset.examples)?;
    dataset
        .examples
        .par_iter()
        .map(|e| log_marginal(&table, input_of(e)))
        .collect()
}
