//! Biased rule-feature logistic regression and reweighting manifests for
//! robust-training pipelines (upsampling of weak-model errors, and
//! down-weighting of examples a biased model already gets right).

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::ParseTree;
use crate::corpus::Vocabulary;
use crate::diagnostics::Predictions;
use crate::error::{Error, Result};
use crate::miner::{rule_occurrences, tree_rules, ParsedCorpus, RuleFamily};

/// Added to `1 − p_b(y|x)` so every drift weight stays positive.
pub const DRIFT_WEIGHT_FLOOR: f64 = 1e-3;

/// Examples per partial gradient; fixed so sums do not depend on threads.
const GRAD_CHUNK: usize = 256;

/// Bias gap used for single-class training data, where the likelihood
/// optimum lies at infinity.
const DEGENERATE_BIAS_GAP: f64 = 50.0;

/// Dense ids for production rules, in first-seen corpus order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleIndex {
    pub rules: Vec<(RuleFamily, String)>,
    ids: HashMap<String, u32>,
}

impl RuleIndex {
    pub fn new(rules: Vec<(RuleFamily, String)>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(rules.len());
        for (i, (_, r)) in rules.iter().enumerate() {
            if ids.insert(r.clone(), i as u32).is_some() {
                return Err(Error::Invalid(format!("duplicate rule {r:?}")));
            }
        }
        Ok(Self { rules, ids })
    }

    /// Every rule occurring in the corpus trees.
    pub fn from_corpus(corpus: &ParsedCorpus) -> Self {
        let rules = rule_occurrences(corpus).into_iter().map(|(r, _)| r).collect();
        Self::new(rules).expect("occurrence list has unique rules")
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn id(&self, rule: &str) -> Option<u32> {
        self.ids.get(rule).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&self.rules).map_err(|e| Error::Invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rules = serde_json::from_str(text).map_err(|e| Error::Schema {
            line: e.line(),
            detail: e.to_string(),
        })?;
        Self::new(rules)
    }
}

/// Sparse binary vector: sorted, distinct active indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleFeatureVector {
    pub indices: Vec<u32>,
}

impl RuleFeatureVector {
    pub fn from_indices(mut indices: Vec<u32>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    fn union(&mut self, other: &RuleFeatureVector) {
        self.indices.extend_from_slice(&other.indices);
        self.indices.sort_unstable();
        self.indices.dedup();
    }
}

/// Indicator of every rule used in `tree`.
pub fn featurize_rules(tree: &ParseTree, index: &RuleIndex, vocab: &Vocabulary) -> Result<RuleFeatureVector> {
    let ids = tree_rules(tree, vocab)
        .into_iter()
        .map(|(_, r)| index.id(&r).ok_or(Error::UnknownRule(r)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RuleFeatureVector::from_indices(ids))
}

/// One vector per document (union over its parsed members) with the
/// document ids and labels. Unparsed examples contribute nothing.
pub fn featurize_corpus(
    corpus: &ParsedCorpus,
    index: &RuleIndex,
) -> Result<(Vec<String>, Vec<RuleFeatureVector>, Vec<usize>)> {
    let per_example = corpus
        .trees
        .par_iter()
        .map(|t| {
            t.as_ref()
                .map_or_else(|| Ok(RuleFeatureVector::default()), |t| featurize_rules(t, index, &corpus.vocab))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ids = Vec::new();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for doc in corpus.documents() {
        let mut v = RuleFeatureVector::default();
        for &m in &doc.members {
            v.union(&per_example[m]);
        }
        ids.push(doc.id.clone());
        feats.push(v);
        labels.push(doc.label);
    }
    Ok((ids, feats, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasedModel {
    pub n_classes: usize,
    pub dim: usize,
    /// Row-major `n_classes × dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub l1: f64,
}

impl BiasedModel {
    pub fn zeros(n_classes: usize, dim: usize, l1: f64) -> Self {
        Self {
            n_classes,
            dim,
            weights: vec![0.0; n_classes * dim],
            bias: vec![0.0; n_classes],
            l1,
        }
    }

    fn check(&self, x: &RuleFeatureVector) -> Result<()> {
        match x.indices.last() {
            Some(&i) if i as usize >= self.dim => Err(Error::Shape {
                name: "rule feature".into(),
                expected: vec![self.dim],
                found: vec![i as usize + 1],
            }),
            _ => Ok(()),
        }
    }

    fn scores(&self, x: &RuleFeatureVector) -> Vec<f64> {
        (0..self.n_classes)
            .map(|k| {
                let row = &self.weights[k * self.dim..(k + 1) * self.dim];
                self.bias[k] + x.indices.iter().map(|&i| row[i as usize]).sum::<f64>()
            })
            .collect()
    }

    /// `softmax(W x + b)`.
    pub fn predict(&self, x: &RuleFeatureVector) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(softmax(&self.scores(x)))
    }

    pub fn l1_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Schema {
            line: e.line(),
            detail: e.to_string(),
        })?;
        if m.weights.len() != m.n_classes * m.dim || m.bias.len() != m.n_classes {
            return Err(Error::Shape {
                name: "biased model".into(),
                expected: vec![m.n_classes, m.dim],
                found: vec![m.bias.len(), m.weights.len()],
            });
        }
        Ok(m)
    }
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrConfig {
    pub max_passes: usize,
    /// Stop once a pass lowers the objective by less than this.
    pub tolerance: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            max_passes: 10_000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrTrace {
    /// Objective at the start and after every pass.
    pub objective: Vec<f64>,
    pub converged: bool,
}

struct Problem<'a> {
    x: &'a [RuleFeatureVector],
    y: &'a [usize],
}

impl Problem<'_> {
    /// Mean cross-entropy and its gradient (weights, bias).
    fn loss_grad(&self, m: &BiasedModel) -> (f64, Vec<f64>, Vec<f64>) {
        let (k, d) = (m.n_classes, m.dim);
        let partials: Vec<(f64, Vec<f64>, Vec<f64>)> = self
            .x
            .par_chunks(GRAD_CHUNK)
            .zip(self.y.par_chunks(GRAD_CHUNK))
            .map(|(xs, ys)| {
                let mut loss = 0.0;
                let mut gw = vec![0.0; k * d];
                let mut gb = vec![0.0; k];
                for (x, &y) in xs.iter().zip(ys) {
                    let mut p = softmax(&m.scores(x));
                    loss -= p[y].ln();
                    p[y] -= 1.0;
                    for (c, &r) in p.iter().enumerate() {
                        gb[c] += r;
                        for &i in &x.indices {
                            gw[c * d + i as usize] += r;
                        }
                    }
                }
                (loss, gw, gb)
            })
            .collect();
        let n = self.x.len() as f64;
        let mut loss = 0.0;
        let mut gw = vec![0.0; k * d];
        let mut gb = vec![0.0; k];
        for (l, w, b) in partials {
            loss += l;
            gw.iter_mut().zip(&w).for_each(|(a, v)| *a += v);
            gb.iter_mut().zip(&b).for_each(|(a, v)| *a += v);
        }
        gw.iter_mut().chain(gb.iter_mut()).for_each(|g| *g /= n);
        (loss / n, gw, gb)
    }

    fn loss(&self, m: &BiasedModel) -> f64 {
        let total: f64 = self
            .x
            .par_chunks(GRAD_CHUNK)
            .zip(self.y.par_chunks(GRAD_CHUNK))
            .map(|(xs, ys)| {
                xs.iter()
                    .zip(ys)
                    .map(|(x, &y)| {
                        let s = m.scores(x);
                        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - s[y]
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .sum();
        total / self.x.len() as f64
    }

    /// Largest eigenvalue of `[X 1]ᵀ[X 1] / N` by power iteration.
    fn gram_spectral_bound(&self, dim: usize) -> f64 {
        let n = self.x.len() as f64;
        let mut v = vec![1.0 / ((dim + 1) as f64).sqrt(); dim + 1];
        let mut lambda = 0.0;
        for _ in 0..100 {
            let mut w = vec![0.0; dim + 1];
            for x in self.x {
                let dot = v[dim] + x.indices.iter().map(|&i| v[i as usize]).sum::<f64>();
                w[dim] += dot;
                for &i in &x.indices {
                    w[i as usize] += dot;
                }
            }
            let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt() / n;
            let prev = lambda;
            lambda = norm;
            if norm == 0.0 {
                break;
            }
            v = w.into_iter().map(|a| a / (norm * n)).collect();
            if (lambda - prev).abs() <= 1e-6 * lambda {
                break;
            }
        }
        lambda
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// L1-penalized multinomial logistic regression (bias unpenalized) fit by
/// proximal gradient descent from zero. The step is `1/L` with `L` from
/// the softmax curvature bound `½·λ_max([X 1]ᵀ[X 1]/N)`; a backtracking
/// check doubles `L` whenever the quadratic upper bound fails, so every
/// pass is a descent step.
pub fn train_biased_lr(
    features: &[RuleFeatureVector],
    labels: &[usize],
    n_classes: usize,
    dim: usize,
    lambda: f64,
    config: &LrConfig,
) -> Result<(BiasedModel, LrTrace)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Invalid(format!("l1 strength must be finite and >= 0, got {lambda}")));
    }
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} feature vectors for {} labels",
            features.len(),
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Invalid(format!("label index {y} outside {n_classes} classes")));
    }
    let mut model = BiasedModel::zeros(n_classes, dim, lambda);
    for x in features {
        model.check(x)?;
    }
    let problem = Problem { x: features, y: labels };
    let objective = |m: &BiasedModel, smooth: f64| smooth + lambda * m.l1_norm();

    let first = labels[0];
    if labels.iter().all(|&y| y == first) {
        for (c, b) in model.bias.iter_mut().enumerate() {
            *b = if c == first { 0.0 } else { -DEGENERATE_BIAS_GAP };
        }
        let f = objective(&model, problem.loss(&model));
        return Ok((
            model,
            LrTrace {
                objective: vec![f],
                converged: true,
            },
        ));
    }

    let mut lip = (0.5 * problem.gram_spectral_bound(dim) * 1.05).max(1e-12);
    let (mut smooth, mut gw, mut gb) = problem.loss_grad(&model);
    let mut trace = LrTrace {
        objective: vec![objective(&model, smooth)],
        converged: false,
    };
    for _ in 0..config.max_passes {
        let (next, next_smooth) = loop {
            let step = 1.0 / lip;
            let mut cand = model.clone();
            for (w, g) in cand.weights.iter_mut().zip(&gw) {
                *w = soft_threshold(*w - step * g, step * lambda);
            }
            for (b, g) in cand.bias.iter_mut().zip(&gb) {
                *b -= step * g;
            }
            let cand_smooth = problem.loss(&cand);
            // quadratic upper bound of the smooth part at the candidate
            let mut lin = 0.0;
            let mut sq = 0.0;
            for ((a, b), g) in cand.weights.iter().zip(&model.weights).zip(&gw) {
                lin += g * (a - b);
                sq += (a - b) * (a - b);
            }
            for ((a, b), g) in cand.bias.iter().zip(&model.bias).zip(&gb) {
                lin += g * (a - b);
                sq += (a - b) * (a - b);
            }
            if cand_smooth <= smooth + lin + 0.5 * lip * sq + 1e-12 * smooth.abs().max(1.0) || lip > 1e12 {
                break (cand, cand_smooth);
            }
            lip *= 2.0;
        };
        let prev = *trace.objective.last().expect("non-empty trace");
        let f = objective(&next, next_smooth);
        if f > prev {
            // numerical noise at the optimum; keep the current iterate
            trace.converged = true;
            break;
        }
        model = next;
        trace.objective.push(f);
        if prev - f < config.tolerance {
            trace.converged = true;
            break;
        }
        (smooth, gw, gb) = problem.loss_grad(&model);
    }
    Ok((model, trace))
}

/// Default penalty `1/N`.
pub fn default_l1(n_examples: usize) -> f64 {
    1.0 / n_examples.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub weight: f64,
    pub duplication: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub biased_probs: Option<BTreeMap<String, f64>>,
}

/// Duplicates every example the weak model gets wrong `upweight` times.
pub fn build_jtt_manifest(
    weak: &Predictions,
    ids: &[String],
    gold: &[usize],
    labels: &[String],
    upweight: u32,
) -> Result<Vec<ManifestRecord>> {
    if upweight < 1 {
        return Err(Error::Invalid("upweight must be at least 1".into()));
    }
    ids.iter()
        .zip(gold)
        .map(|(id, &y)| {
            let dup = if weak.get(id)? == labels[y] { 1 } else { upweight };
            Ok(ManifestRecord {
                id: id.clone(),
                weight: dup as f64,
                duplication: dup,
                biased_probs: None,
            })
        })
        .collect()
}

/// Weight `1 − p_b(y|x) + floor` with the full biased distribution attached.
pub fn build_drift_manifest(
    model: &BiasedModel,
    ids: &[String],
    features: &[RuleFeatureVector],
    gold: &[usize],
    labels: &[String],
) -> Result<Vec<ManifestRecord>> {
    if labels.len() != model.n_classes {
        return Err(Error::Shape {
            name: "class count".into(),
            expected: vec![model.n_classes],
            found: vec![labels.len()],
        });
    }
    ids.iter()
        .zip(features)
        .zip(gold)
        .map(|((id, x), &y)| {
            let p = model.predict(x)?;
            Ok(ManifestRecord {
                id: id.clone(),
                weight: 1.0 - p[y] + DRIFT_WEIGHT_FLOOR,
                duplication: 1,
                biased_probs: Some(labels.iter().cloned().zip(p).collect()),
            })
        })
        .collect()
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: n + 1,
            detail: e.to_string(),
        })?;
        if !(r.weight.is_finite() && r.weight > 0.0) || r.duplication < 1 {
            return Err(Error::Schema {
                line: n + 1,
                detail: "weight must be positive and duplication at least 1".into(),
            });
        }
        out.push(r);
    }
    Ok(out)
}
