//! Labeled corpora: tokenization, vocabularies, JSONL loading and the
//! filtered class-balanced splits used for grammar induction.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";
pub const EPS_TOKEN: &str = "<eps>";

/// Characters that always become standalone tokens.
const SPLIT_CHARS: &[char] = &[
    '.', ',', '!', '?', ';', ':', '\'', '"', '(', ')', '[', ']', '/', '-', '*', '&', '#', '^', '’',
    '`',
];

/// True for tokens made only of split characters.
pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| SPLIT_CHARS.contains(&c))
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if SPLIT_CHARS.contains(&ch) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        } else {
            current.push(ch);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Splits a document after `.`, `!` or `?` when followed by whitespace.
pub fn split_sentences(document: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = document.char_indices().peekable();
    while let Some((pos, ch)) = chars.next() {
        if matches!(ch, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    let end = pos + ch.len_utf8();
                    let sentence = document[start..end].trim();
                    if !sentence.is_empty() {
                        sentences.push(sentence.to_string());
                    }
                    start = end;
                }
            }
        }
    }
    let tail = document[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    unk_id: u32,
    eps_id: Option<u32>,
}

impl Vocabulary {
    /// Keeps the most frequent tokens so that the vocabulary, special tokens
    /// included, has at most `max_size` entries. Frequency ties go to the
    /// token seen first.
    pub fn build<'a, I, S>(sentences: I, max_size: usize, with_eps: bool) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let n_special = if with_eps { 2 } else { 1 };
        if max_size < n_special {
            return Err(Error::Invalid(format!(
                "vocabulary size {max_size} leaves no room for {n_special} special tokens"
            )));
        }
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0usize;
        for sentence in sentences {
            for token in sentence {
                let token = token.as_ref();
                if token == UNK_TOKEN || token == EPS_TOKEN {
                    continue;
                }
                let entry = counts.entry(token).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                entry.0 += 1;
            }
        }
        let mut ranked: Vec<(&str, usize, usize)> =
            counts.into_iter().map(|(t, (c, first))| (t, c, first)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(max_size - n_special);

        let mut tokens = vec![UNK_TOKEN.to_string()];
        if with_eps {
            tokens.push(EPS_TOKEN.to_string());
        }
        tokens.extend(ranked.into_iter().map(|(t, _, _)| t.to_string()));
        Ok(Self::from_tokens(tokens, 0, with_eps.then_some(1)))
    }

    fn from_tokens(tokens: Vec<String>, unk_id: u32, eps_id: Option<u32>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            index,
            unk_id,
            eps_id,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn eps_id(&self) -> Option<u32> {
        self.eps_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        if token == UNK_TOKEN || token == EPS_TOKEN {
            return self.unk_id;
        }
        self.index.get(token).copied().unwrap_or(self.unk_id)
    }

    /// Exact lookup, including special tokens. Used when reading serialized
    /// trees, where `<eps>` is meaningful.
    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(UNK_TOKEN)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Invalid(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: Vocabulary = serde_json::from_str(&text).map_err(|e| Error::Schema {
            line: e.line(),
            detail: e.to_string(),
        })?;
        let vocab = Self::from_tokens(raw.tokens, raw.unk_id, raw.eps_id);
        vocab.validate()?;
        Ok(vocab)
    }

    fn validate(&self) -> Result<()> {
        let n = self.tokens.len() as u32;
        if self.unk_id >= n || self.eps_id.is_some_and(|e| e >= n || e == self.unk_id) {
            return Err(Error::Invalid("vocabulary special ids out of range".into()));
        }
        if self.index.len() != self.tokens.len() {
            return Err(Error::Invalid("vocabulary tokens are not distinct".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Single,
    Pair,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(DatasetKind::Single),
            "pair" => Ok(DatasetKind::Pair),
            other => Err(Error::Invalid(format!("unknown dataset kind {other}"))),
        }
    }
}

/// A tokenized record, before vocabulary encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct TextExample {
    pub id: String,
    pub label: String,
    pub side_a: Vec<String>,
    pub side_b: Option<Vec<String>>,
    pub parent: Option<String>,
    /// Untokenized text of the first side.
    pub raw_a: String,
}

#[derive(Debug, Clone)]
pub struct TextDataset {
    pub examples: Vec<TextExample>,
    pub labels: Vec<String>,
    pub kind: DatasetKind,
}

#[derive(Deserialize)]
struct Record {
    id: String,
    label: String,
    text: Option<String>,
    text_a: Option<String>,
    text_b: Option<String>,
    parent: Option<String>,
}

pub fn load_dataset(path: &Path, kind: DatasetKind) -> Result<TextDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: n + 1,
            detail: e.to_string(),
        })?;
        records.push((n + 1, record));
    }
    dataset_from_records(records, kind)
}

/// Parses JSONL text already in memory; line numbers are 1-based.
pub fn parse_dataset(text: &str, kind: DatasetKind) -> Result<TextDataset> {
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| Error::Schema {
            line: n + 1,
            detail: e.to_string(),
        })?;
        records.push((n + 1, record));
    }
    dataset_from_records(records, kind)
}

fn dataset_from_records(records: Vec<(usize, Record)>, kind: DatasetKind) -> Result<TextDataset> {
    let mut examples = Vec::with_capacity(records.len());
    let mut labels = BTreeSet::new();
    for (line, r) in records {
        let schema = |detail: &str| Error::Schema {
            line,
            detail: detail.to_string(),
        };
        let (raw_a, side_a, side_b) = match kind {
            DatasetKind::Single => {
                let text = r.text.ok_or_else(|| schema("single record requires \"text\""))?;
                (text.clone(), tokenize(&text), None)
            }
            DatasetKind::Pair => {
                let a = r
                    .text_a
                    .ok_or_else(|| schema("pair record requires \"text_a\""))?;
                let b = r
                    .text_b
                    .ok_or_else(|| schema("pair record requires \"text_b\""))?;
                (a.clone(), tokenize(&a), Some(tokenize(&b)))
            }
        };
        if side_a.is_empty() || side_b.as_ref().is_some_and(Vec::is_empty) {
            return Err(schema("text tokenizes to an empty sequence"));
        }
        labels.insert(r.label.clone());
        examples.push(TextExample {
            id: r.id,
            label: r.label,
            side_a,
            side_b,
            parent: r.parent,
            raw_a,
        });
    }
    Ok(TextDataset {
        examples,
        labels: labels.into_iter().collect(),
        kind,
    })
}

impl TextDataset {
    pub fn build_vocabulary(&self, max_size: usize) -> Result<Vocabulary> {
        let sentences = self.examples.iter().flat_map(|e| {
            std::iter::once(e.side_a.as_slice()).chain(e.side_b.as_deref())
        });
        Vocabulary::build(sentences, max_size, self.kind == DatasetKind::Pair)
    }

    /// Encodes with `vocab`. The label set is kept as is, so encode the
    /// validation split with the training split's `labels` when they differ.
    pub fn encode(&self, vocab: &Vocabulary) -> Dataset {
        let examples = self
            .examples
            .iter()
            .map(|e| Example {
                id: e.id.clone(),
                label: self.labels.binary_search(&e.label).expect("label collected"),
                side_a: vocab.encode(&e.side_a),
                side_b: e.side_b.as_ref().map(|b| vocab.encode(b)),
                parent: e.parent.clone(),
            })
            .collect();
        Dataset {
            examples,
            labels: self.labels.clone(),
            kind: self.kind,
        }
    }

    /// Re-indexes labels onto a fixed class list (e.g. the training classes).
    pub fn with_labels(mut self, labels: &[String]) -> Result<Self> {
        for e in &self.examples {
            if labels.binary_search(&e.label).is_err() {
                return Err(Error::UnknownClass(e.label.clone()));
            }
        }
        self.labels = labels.to_vec();
        Ok(self)
    }
}

/// Splits every single-sentence record into sentences. Sentence ids are
/// `id#k` and carry the original id as their parent, so statistics can be
/// aggregated per document.
pub fn split_documents(dataset: &TextDataset) -> Result<TextDataset> {
    if dataset.kind != DatasetKind::Single {
        return Err(Error::Invalid("only single-sentence datasets can be split".into()));
    }
    let mut examples = Vec::new();
    for example in &dataset.examples {
        let parent = example.parent.clone().unwrap_or_else(|| example.id.clone());
        let mut k = 0;
        for sentence in split_sentences(&example.raw_a) {
            let tokens = tokenize(&sentence);
            if tokens.is_empty() {
                continue;
            }
            examples.push(TextExample {
                id: format!("{}#{}", example.id, k),
                label: example.label.clone(),
                side_a: tokens,
                side_b: None,
                parent: Some(parent.clone()),
                raw_a: sentence,
            });
            k += 1;
        }
    }
    Ok(TextDataset {
        examples,
        labels: dataset.labels.clone(),
        kind: DatasetKind::Single,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    /// Index into [`Dataset::labels`].
    pub label: usize,
    pub side_a: Vec<u32>,
    pub side_b: Option<Vec<u32>>,
    pub parent: Option<String>,
}

impl Example {
    /// The id statistics are aggregated under.
    pub fn doc_id(&self) -> &str {
        self.parent.as_deref().unwrap_or(&self.id)
    }

    pub fn area(&self) -> usize {
        self.side_a.len() * self.side_b.as_ref().map_or(1, Vec::len)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub labels: Vec<String>,
    pub kind: DatasetKind,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .map_err(|_| Error::UnknownClass(label.to_string()))
    }

    /// Documents in first-occurrence order with the indices of their
    /// examples. Pair datasets have one example per document.
    pub fn documents(&self) -> Vec<Document> {
        let mut order: Vec<Document> = Vec::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, e) in self.examples.iter().enumerate() {
            match seen.get(e.doc_id()) {
                Some(&d) => order[d].members.push(i),
                None => {
                    seen.insert(e.doc_id(), order.len());
                    order.push(Document {
                        id: e.doc_id().to_string(),
                        label: e.label,
                        members: vec![i],
                    });
                }
            }
        }
        order
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub label: usize,
    pub members: Vec<usize>,
}

/// Length-filters pairs (`|a|·|b| < max_area`) and draws up to `per_class`
/// examples of every class without replacement. Selected examples keep
/// their original order.
pub fn prepare_split(
    dataset: &Dataset,
    max_area: Option<usize>,
    per_class: Option<usize>,
    seed: u64,
) -> Result<Dataset> {
    if max_area.is_some() && dataset.kind != DatasetKind::Pair {
        return Err(Error::Invalid("area filtering applies to pair datasets only".into()));
    }
    if per_class == Some(0) {
        return Err(Error::Invalid("per-class sample size must be at least 1".into()));
    }
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); dataset.labels.len()];
    for (i, e) in dataset.examples.iter().enumerate() {
        if max_area.map_or(true, |m| e.area() < m) {
            pools[e.label].push(i);
        }
    }
    let empty: Vec<String> = pools
        .iter()
        .zip(&dataset.labels)
        .filter(|(p, _)| p.is_empty())
        .map(|(_, l)| l.clone())
        .collect();
    if !empty.is_empty() {
        return Err(Error::EmptyClasses(empty));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for mut pool in pools {
        if let Some(k) = per_class {
            pool.shuffle(&mut rng);
            pool.truncate(k);
        }
        keep.extend(pool);
    }
    keep.sort_unstable();
    Ok(Dataset {
        examples: keep.into_iter().map(|i| dataset.examples[i].clone()).collect(),
        labels: dataset.labels.clone(),
        kind: dataset.kind,
    })
}
