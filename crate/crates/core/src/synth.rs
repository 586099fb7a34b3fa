//! Labeled sentence-pair corpus sampled from a hand-written synchronous
//! grammar with one planted shortcut: a preterminal that rewrites a subject
//! adjective into its antonym on the second side and co-occurs with the
//! `contradiction` label far more often than chance.
//!
//! Grammar (6 internal symbols I0..I5, 10 preterminals P0..P9):
//!
//! ```text
//! I0 → I1 I2                       sentence
//! I1 → P0 P1 | P0 P9 | I3 P1       subject
//! I3 → P0 P2 | P0 P5 | P0 P6       determiner + adjective
//! I2 → I4 P8                       predicate + full stop
//! I4 → P3 I5 | P3 P7               verb + object or dropped adverb
//! I5 → P0 P4                       object
//! P0 det (copy)      P1 noun (copy)       P2 adjective (copy)
//! P3 verb (copy)     P4 object (copy)     P5 adjective/antonym (planted)
//! P6 ε/adjective     P7 adverb/ε          P8 ./.
//! P9 noun/hypernym
//! ```

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LABEL_SHORTCUT: &str = "contradiction";
pub const LABEL_OTHER: &str = "entailment";

const DETS: &[&str] = &["a", "the"];
const NOUNS: &[(&str, &str)] = &[
    ("man", "person"),
    ("woman", "person"),
    ("boy", "child"),
    ("girl", "child"),
    ("dog", "animal"),
    ("cat", "animal"),
];
const COPY_ADJECTIVES: &[&str] = &["tall", "young", "happy", "big", "red", "wet"];
const INSERTED_ADJECTIVES: &[&str] = &["tall", "young", "red", "small", "wet"];
/// Emissions of the planted preterminal.
pub const ANTONYMS: &[(&str, &str)] = &[
    ("happy", "sad"),
    ("awake", "asleep"),
    ("fast", "slow"),
    ("hot", "cold"),
    ("big", "little"),
];
const VERBS: &[&str] = &["walks", "runs", "sleeps", "eats", "sits", "plays"];
const OBJECTS: &[&str] = &["ball", "apple", "food", "toy"];
const ADVERBS: &[&str] = &["outside", "today", "quietly"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_examples: usize,
    /// Share of examples whose subject uses the planted preterminal.
    pub planted_rate: f64,
    /// `P(contradiction | planted)`.
    pub planted_accuracy: f64,
    /// `P(contradiction | not planted)`.
    pub base_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_examples: 2000,
            planted_rate: 0.35,
            planted_accuracy: 0.9,
            base_rate: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_examples == 0 || !unit(self.planted_rate) || !unit(self.planted_accuracy) || !unit(self.base_rate) {
            return Err(Error::Invalid("synth needs examples > 0 and rates in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthExample {
    pub id: String,
    pub label: String,
    pub text_a: String,
    pub text_b: String,
    /// Whether the planted preterminal was used.
    pub planted: bool,
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty word list")
}

/// Appends one subject to both sides.
fn subject<R: Rng>(rng: &mut R, planted: bool, a: &mut Vec<String>, b: &mut Vec<String>) {
    let det = pick(rng, DETS);
    a.push(det.into());
    b.push(det.into());
    let (noun, hyper) = *NOUNS.choose(rng).expect("nouns");
    if planted {
        let (adj, ant) = *ANTONYMS.choose(rng).expect("antonyms");
        a.push(adj.into());
        b.push(ant.into());
        a.push(noun.into());
        b.push(noun.into());
        return;
    }
    match rng.gen_range(0..4) {
        0 => {
            a.push(noun.into());
            b.push(noun.into());
        }
        1 => {
            a.push(noun.into());
            b.push(hyper.into());
        }
        2 => {
            let adj = pick(rng, COPY_ADJECTIVES);
            a.push(adj.into());
            b.push(adj.into());
            a.push(noun.into());
            b.push(noun.into());
        }
        _ => {
            b.push(pick(rng, INSERTED_ADJECTIVES).into());
            a.push(noun.into());
            b.push(noun.into());
        }
    }
}

fn predicate<R: Rng>(rng: &mut R, a: &mut Vec<String>, b: &mut Vec<String>) {
    let verb = pick(rng, VERBS);
    a.push(verb.into());
    b.push(verb.into());
    if rng.gen_bool(0.5) {
        let det = pick(rng, DETS);
        let obj = pick(rng, OBJECTS);
        a.extend([det.to_string(), obj.to_string()]);
        b.extend([det.to_string(), obj.to_string()]);
    } else {
        a.push(pick(rng, ADVERBS).into());
    }
    a.push(".".into());
    b.push(".".into());
}

pub fn generate(config: &SynthConfig) -> Result<Vec<SynthExample>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok((0..config.n_examples)
        .map(|i| {
            let planted = rng.gen_bool(config.planted_rate);
            let mut a = Vec::new();
            let mut b = Vec::new();
            subject(&mut rng, planted, &mut a, &mut b);
            predicate(&mut rng, &mut a, &mut b);
            let p = if planted { config.planted_accuracy } else { config.base_rate };
            let label = if rng.gen_bool(p) { LABEL_SHORTCUT } else { LABEL_OTHER };
            SynthExample {
                id: format!("syn{i:05}"),
                label: label.into(),
                text_a: a.join(" "),
                text_b: b.join(" "),
                planted,
            }
        })
        .collect())
}

#[derive(Serialize)]
struct Line<'a> {
    id: &'a str,
    label: &'a str,
    text_a: &'a str,
    text_b: &'a str,
}

/// Dataset JSONL (the planted flag is left out).
pub fn to_jsonl(examples: &[SynthExample]) -> String {
    let mut out = String::new();
    for e in examples {
        let line = Line {
            id: &e.id,
            label: &e.label,
            text_a: &e.text_a,
            text_b: &e.text_b,
        };
        out.push_str(&serde_json::to_string(&line).expect("plain strings serialize"));
        out.push('\n');
    }
    out
}

pub fn planted_ids(examples: &[SynthExample]) -> Vec<String> {
    examples.iter().filter(|e| e.planted).map(|e| e.id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_dataset, DatasetKind};

    #[test]
    fn planted_rates_and_schema() {
        let ex = generate(&SynthConfig::default()).unwrap();
        assert_eq!(ex.len(), 2000);
        let planted: Vec<&SynthExample> = ex.iter().filter(|e| e.planted).collect();
        let share = planted.len() as f64 / 2000.0;
        assert!((share - 0.35).abs() < 0.04, "{share}");
        let hit = planted.iter().filter(|e| e.label == LABEL_SHORTCUT).count() as f64 / planted.len() as f64;
        assert!((hit - 0.9).abs() < 0.04, "{hit}");
        for e in &planted {
            assert!(ANTONYMS.iter().any(|(x, y)| e.text_a.contains(x) && e.text_b.contains(y)));
        }
        let ds = parse_dataset(&to_jsonl(&ex), DatasetKind::Pair).unwrap();
        assert_eq!(ds.labels, vec![LABEL_SHORTCUT, LABEL_OTHER]);
        assert!(ds.examples.iter().all(|e| e.side_a.len() * e.side_b.as_ref().unwrap().len() < 225));
        assert_eq!(generate(&SynthConfig::default()).unwrap(), ex);
        assert_ne!(generate(&SynthConfig { seed: 1, ..SynthConfig::default() }).unwrap(), ex);
    }
}
