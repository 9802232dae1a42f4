use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Example, Label, Vocabulary};
use crate::error::{Error, Result};
use crate::rng;

/// Parameters of the synthetic biased corpus.
///
/// Content tokens are ids `0..vocab_size`; tokens `2j` and `2j + 1` are
/// antonyms. Three leak tokens follow, one per label. Every hypothesis ends
/// with a leak token: its own label's with probability `leak_rate`, a
/// uniformly random one otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub leak_rate: f64,
    pub premise_len: (usize, usize),
    pub hypothesis_len: (usize, usize),
    /// Draw entailment hypotheses from the short half of the length range.
    #[serde(default)]
    pub length_artifact: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vocab_size: 40,
            leak_rate: 0.9,
            premise_len: (5, 12),
            hypothesis_len: (3, 8),
            length_artifact: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.leak_rate) {
            return Err(Error::Config(format!("leak rate {} outside [0, 1]", self.leak_rate)));
        }
        if self.vocab_size == 0 || self.vocab_size % 2 != 0 {
            return Err(Error::Config(format!(
                "content vocabulary size {} must be positive and even",
                self.vocab_size
            )));
        }
        for (name, (lo, hi)) in [("premise", self.premise_len), ("hypothesis", self.hypothesis_len)] {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("invalid {name} length range [{lo}, {hi}]")));
            }
        }
        // Neutral hypotheses need tokens that are neither in the premise nor
        // antonyms of premise tokens.
        if self.vocab_size < 2 * self.premise_len.1 + 2 {
            return Err(Error::Generation(format!(
                "vocabulary of {} content tokens cannot guarantee absent tokens for premises of length {}",
                self.vocab_size, self.premise_len.1
            )));
        }
        Ok(())
    }

    pub fn leak_token(&self, label: Label) -> u32 {
        (self.vocab_size + label.index()) as u32
    }

    /// Whether the hypothesis ends with its own label's leak token.
    pub fn carries_label_leak(&self, ex: &Example) -> bool {
        ex.hypothesis.last() == Some(&self.leak_token(ex.label))
    }

    pub fn vocabulary(&self) -> Vocabulary {
        let mut tokens: Vec<String> = (0..self.vocab_size).map(|i| format!("w{i}")).collect();
        tokens.extend(Label::ALL.iter().map(|l| format!("<leak:{l}>")));
        Vocabulary::from_tokens(tokens).expect("generated tokens are distinct")
    }
}

/// Tokens pair up as `2j`, `2j + 1`.
pub fn antonym(token: u32) -> u32 {
    token ^ 1
}

const MAX_PREMISE_ATTEMPTS: usize = 100;

struct Generator<'a, R> {
    spec: &'a SyntheticSpec,
    rng: R,
}

impl<R: Rng> Generator<'_, R> {
    fn premise(&mut self) -> Vec<u32> {
        let len = self.rng.gen_range(self.spec.premise_len.0..=self.spec.premise_len.1);
        (0..len)
            .map(|_| self.rng.gen_range(0..self.spec.vocab_size as u32))
            .collect()
    }

    fn hypothesis_len(&mut self, label: Label) -> usize {
        let (lo, hi) = self.spec.hypothesis_len;
        let hi = if self.spec.length_artifact && label == Label::Entailment {
            lo + (hi - lo) / 2
        } else {
            hi
        };
        self.rng.gen_range(lo..=hi)
    }

    fn sample_from(&mut self, pool: &[u32], n: usize) -> Vec<u32> {
        (0..n).map(|_| pool[self.rng.gen_range(0..pool.len())]).collect()
    }

    fn example(&mut self) -> Result<Example> {
        let label = Label::ALL[self.rng.gen_range(0..3)];
        let len = self.hypothesis_len(label);
        for _ in 0..MAX_PREMISE_ATTEMPTS {
            let premise = self.premise();
            let present: HashSet<u32> = premise.iter().copied().collect();
            let mut hypothesis = match label {
                Label::Entailment => self.sample_from(&premise, len),
                Label::Contradiction => {
                    let candidates: Vec<u32> = premise
                        .iter()
                        .copied()
                        .filter(|t| !present.contains(&antonym(*t)))
                        .collect();
                    if candidates.is_empty() {
                        continue;
                    }
                    let mut h = self.sample_from(&premise, len);
                    let pos = self.rng.gen_range(0..len);
                    let source = candidates[self.rng.gen_range(0..candidates.len())];
                    h[pos] = antonym(source);
                    h
                }
                Label::Neutral => {
                    let absent: Vec<u32> = (0..self.spec.vocab_size as u32)
                        .filter(|t| !present.contains(t) && !present.contains(&antonym(*t)))
                        .collect();
                    if absent.is_empty() {
                        continue;
                    }
                    let inside = len / 2;
                    let mut h = self.sample_from(&premise, inside);
                    h.extend(self.sample_from(&absent, len - inside));
                    h.shuffle(&mut self.rng);
                    h
                }
            };
            let leak = if self.rng.gen_bool(self.spec.leak_rate) {
                label
            } else {
                Label::ALL[self.rng.gen_range(0..3)]
            };
            hypothesis.push(self.spec.leak_token(leak));
            return Example::new(premise, hypothesis, label);
        }
        Err(Error::Generation(format!(
            "no valid {label} example after {MAX_PREMISE_ATTEMPTS} premises"
        )))
    }
}

fn generate_split(spec: &SyntheticSpec, name: &str, count: usize) -> Result<Vec<Example>> {
    let mut g = Generator {
        spec,
        rng: rng::stream(spec.seed, &format!("synthetic.{name}")),
    };
    (0..count).map(|_| g.example()).collect()
}

/// Generates the three splits, each from its own seed stream.
pub fn generate(spec: &SyntheticSpec, sizes: SplitSizes) -> Result<Corpus> {
    spec.validate()?;
    Ok(Corpus {
        train: generate_split(spec, "train", sizes.train)?,
        dev: generate_split(spec, "dev", sizes.dev)?,
        test: generate_split(spec, "test", sizes.test)?,
        vocab: spec.vocabulary(),
    })
}
