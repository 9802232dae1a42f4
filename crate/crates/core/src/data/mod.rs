//! Corpora: the synthetic biased-corpus generator, JSON-lines ingestion,
//! word-vector files, and the majority baseline.

mod embeddings;
mod jsonl;
mod synthetic;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embeddings::load_embeddings;
pub use jsonl::{load_jsonl, load_jsonl_with_vocab, read_jsonl_records, write_jsonl, JsonlRecord};
pub use synthetic::{antonym, generate, SplitSizes, SyntheticSpec};
pub use vocab::{Vocabulary, UNK_TOKEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Entailment = 0,
    Contradiction = 1,
    Neutral = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Contradiction, Label::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or(Error::LabelOutOfRange { label: i, classes: 3 })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Contradiction => "contradiction",
            Label::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entailment" => Ok(Label::Entailment),
            "contradiction" => Ok(Label::Contradiction),
            "neutral" => Ok(Label::Neutral),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

/// A premise/hypothesis pair with its gold label.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub premise: Vec<u32>,
    pub hypothesis: Vec<u32>,
    pub label: Label,
}

impl Example {
    pub fn new(premise: Vec<u32>, hypothesis: Vec<u32>, label: Label) -> Result<Self> {
        if premise.is_empty() || hypothesis.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(Self {
            premise,
            hypothesis,
            label,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub vocab: Vocabulary,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Checks every token id against the vocabulary.
    pub fn validate(&self) -> Result<()> {
        let v = self.vocab.len();
        for ex in self.train.iter().chain(&self.dev).chain(&self.test) {
            if ex.premise.is_empty() || ex.hypothesis.is_empty() {
                return Err(Error::EmptySequence);
            }
            if let Some(&id) = ex
                .premise
                .iter()
                .chain(&ex.hypothesis)
                .find(|&&id| id as usize >= v)
            {
                return Err(Error::TokenOutOfRange { id, vocab: v });
            }
        }
        Ok(())
    }
}

/// Per-class counts in `Label::ALL` order.
pub fn label_counts(examples: &[Example]) -> [usize; 3] {
    let mut counts = [0; 3];
    for ex in examples {
        counts[ex.label.index()] += 1;
    }
    counts
}

/// Accuracy of always predicting the most frequent label.
pub fn majority_baseline(examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Config("majority baseline of an empty split".into()));
    }
    let counts = label_counts(examples);
    let max = counts.iter().copied().max().unwrap_or(0);
    Ok(max as f64 / examples.len() as f64)
}

/// The most frequent label, ties to the lowest index.
pub fn majority_label(examples: &[Example]) -> Label {
    let counts = label_counts(examples);
    let mut best = 0;
    for (i, c) in counts.iter().enumerate() {
        if *c > counts[best] {
            best = i;
        }
    }
    Label::ALL[best]
}
