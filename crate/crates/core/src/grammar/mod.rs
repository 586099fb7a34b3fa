//! Grammar topology, raw parameters and the materialized rule tables.
//!
//! Symbols live in one namespace: internal nonterminals occupy
//! `[0, n_internal)` and preterminals `[n_internal, n_internal + n_preterminal)`.
//! The start symbol is kept apart and only rewrites to a single nonterminal.

mod mlp;
mod rules;

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mlp::Mlp;
pub use rules::{
    backprop_params, materialize_rules, materialize_rules_for, relu_pattern, terminal_logprob, Emission,
    EmissionKind, RuleCounts, RuleTable, Terminals, N_KINDS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrammarKind {
    Pcfg,
    Scfg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamMode {
    Neural,
    Tabular,
}

impl std::str::FromStr for ParamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neural" => Ok(ParamMode::Neural),
            "tabular" => Ok(ParamMode::Tabular),
            other => Err(Error::Invalid(format!("unknown parameterization {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarTopology {
    pub n_internal: usize,
    pub n_preterminal: usize,
    pub vocab_size: usize,
    pub kind: GrammarKind,
    pub dim: usize,
    /// Vocabulary id of the empty symbol; required for synchronous grammars.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_id: Option<u32>,
}

impl GrammarTopology {
    pub fn pcfg(n_internal: usize, n_preterminal: usize, vocab_size: usize, dim: usize) -> Self {
        Self {
            n_internal,
            n_preterminal,
            vocab_size,
            kind: GrammarKind::Pcfg,
            dim,
            eps_id: None,
        }
    }

    pub fn scfg(
        n_internal: usize,
        n_preterminal: usize,
        vocab_size: usize,
        dim: usize,
        eps_id: u32,
    ) -> Self {
        Self {
            n_internal,
            n_preterminal,
            vocab_size,
            kind: GrammarKind::Scfg,
            dim,
            eps_id: Some(eps_id),
        }
    }

    pub fn n_symbols(&self) -> usize {
        self.n_internal + self.n_preterminal
    }

    pub fn is_preterminal(&self, symbol: usize) -> bool {
        symbol >= self.n_internal && symbol < self.n_symbols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_internal == 0 || self.n_preterminal == 0 || self.vocab_size == 0 || self.dim == 0
        {
            return Err(Error::Invalid(format!("degenerate topology {self:?}")));
        }
        match (self.kind, self.eps_id) {
            (GrammarKind::Scfg, None) => {
                Err(Error::Invalid("synchronous grammar requires an epsilon id".into()))
            }
            (GrammarKind::Scfg, Some(e)) if e as usize >= self.vocab_size => {
                Err(Error::Invalid(format!("epsilon id {e} outside vocabulary")))
            }
            _ => Ok(()),
        }
    }
}

/// Dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let width = self.shape[1..].iter().product::<usize>();
        &self.data[i * width..(i + 1) * width]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let width = self.shape[1..].iter().product::<usize>();
        &mut self.data[i * width..(i + 1) * width]
    }
}

pub type TensorMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarParams {
    pub topology: GrammarTopology,
    pub mode: ParamMode,
    #[serde(rename = "params")]
    pub tensors: TensorMap,
}

pub(crate) const MLP_START: &str = "mlp.start";
pub(crate) const MLP_BINARY: &str = "mlp.binary";
pub(crate) const MLP_TERM: &str = "mlp.term";
pub(crate) const MLP_KIND: &str = "mlp.kind";
pub(crate) const MLP_SOURCE: &str = "mlp.source";
pub(crate) const MLP_TARGET: &str = "mlp.target";

/// Name and shape of every tensor a topology/mode pair requires.
pub fn param_shapes(topology: &GrammarTopology, mode: ParamMode) -> Vec<(String, Vec<usize>)> {
    let n = topology.n_symbols();
    let ni = topology.n_internal;
    let np = topology.n_preterminal;
    let v = topology.vocab_size;
    let d = topology.dim;
    let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
    let mut push = |name: &str, shape: Vec<usize>| shapes.push((name.to_string(), shape));
    match mode {
        ParamMode::Tabular => {
            push("start.logits", vec![n]);
            push("binary.logits", vec![ni, n * n]);
            match topology.kind {
                GrammarKind::Pcfg => push("term.logits", vec![np, v]),
                GrammarKind::Scfg => {
                    push("kind.logits", vec![np, N_KINDS]);
                    push("source.logits", vec![np, v]);
                    push("target.logits", vec![np * v, v]);
                }
            }
        }
        ParamMode::Neural => {
            push("start.query", vec![d]);
            push("start.out", vec![n, d]);
            push("nt.embed", vec![n, d]);
            push("binary.out", vec![n * n, d]);
            let mut mlps = vec![MLP_START, MLP_BINARY];
            match topology.kind {
                GrammarKind::Pcfg => {
                    push("term.out", vec![v, d]);
                    mlps.push(MLP_TERM);
                }
                GrammarKind::Scfg => {
                    push("kind.embed", vec![np, d]);
                    push("kind.out", vec![N_KINDS, d]);
                    push("source.embed", vec![np, d]);
                    push("source.out", vec![v, d]);
                    push("target.embed", vec![np, d]);
                    push("target.word", vec![v, d]);
                    push("target.out", vec![v, d]);
                    mlps.extend([MLP_KIND, MLP_SOURCE, MLP_TARGET]);
                }
            }
            for prefix in mlps {
                for (name, shape) in Mlp::tensor_shapes(prefix, d) {
                    push(&name, shape);
                }
            }
        }
    }
    shapes
}

/// Tabular synchronous grammars keep a dense target table of
/// `n_preterminal · |V|²` logits; refuse anything larger than this.
pub const MAX_TABULAR_TARGET: usize = 50_000_000;

/// Uniform entries on `[-1/√d, 1/√d]`, zero perceptron biases.
pub fn init_params(topology: &GrammarTopology, mode: ParamMode, seed: u64) -> Result<GrammarParams> {
    topology.validate()?;
    if mode == ParamMode::Tabular
        && topology.kind == GrammarKind::Scfg
        && topology.n_preterminal * topology.vocab_size * topology.vocab_size > MAX_TABULAR_TARGET
    {
        return Err(Error::Invalid(
            "vocabulary too large for a tabular synchronous grammar".into(),
        ));
    }
    let scale = 1.0 / (topology.dim as f64).sqrt();
    let dist = Uniform::new_inclusive(-scale, scale);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = TensorMap::new();
    for (name, shape) in param_shapes(topology, mode) {
        let mut t = Tensor::zeros(&shape);
        if !Mlp::is_bias(&name) {
            for x in t.data.iter_mut() {
                *x = dist.sample(&mut rng);
            }
        }
        tensors.insert(name, t);
    }
    Ok(GrammarParams {
        topology: *topology,
        mode,
        tensors,
    })
}

impl GrammarParams {
    pub fn zeros(topology: &GrammarTopology, mode: ParamMode) -> Self {
        let tensors = param_shapes(topology, mode)
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .collect();
        Self {
            topology: *topology,
            mode,
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter tensor {name} missing"))
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("parameter tensor {name} missing"))
    }

    pub fn n_params(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    /// Checks names, shapes and finiteness against the topology.
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        let expected = param_shapes(&self.topology, self.mode);
        if expected.len() != self.tensors.len() {
            return Err(Error::Invalid(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in expected {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Invalid(format!("missing tensor {name}")))?;
            if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Shape {
                    name,
                    expected: shape,
                    found: t.shape.clone(),
                });
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        serde_json::to_string(self).map_err(|e| Error::Invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: GrammarParams = serde_json::from_str(text).map_err(|e| Error::Schema {
            line: e.line(),
            detail: e.to_string(),
        })?;
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
