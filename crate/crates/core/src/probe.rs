//! Freeze-and-relearn probing, the train/probe scenario matrix, hard-subset
//! construction and task evaluation.
//!
//! A probe is a freshly initialised hypothesis-only classifier trained on
//! representations from a frozen encoder. The largest dev accuracy over the
//! probes measures how much label information the representation still
//! carries.

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::data::{Corpus, Example, Label, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::{self, HeadSpec, ParameterSet};
use crate::rng;
use crate::train::{self, apply_sgd, head_accuracy, Checkpoint, TrainConfig, TrainLog};

/// SGD settings for probe training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 64,
            max_epochs: 50,
            patience: 5,
        }
    }
}

/// Probe count, seeds, head and optimiser for one relearning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub head: HeadSpec,
    pub count: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub optimizer: ProbeConfig,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            head: HeadSpec::Linear,
            count: 20,
            base_seed: 1000,
            optimizer: ProbeConfig::default(),
        }
    }
}

impl ProbeSettings {
    pub fn seeds(&self) -> Vec<u64> {
        probe_seeds(self.base_seed, self.count)
    }
}

/// `m` consecutive seeds from `base`; a longer list extends a shorter one.
pub fn probe_seeds(base: u64, m: usize) -> Vec<u64> {
    (0..m as u64).map(|i| base + i).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub checkpoint_id: String,
    pub probe_head: HeadSpec,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub max_accuracy: f64,
}

impl ProbeReport {
    pub fn new(checkpoint_id: String, probe_head: HeadSpec, seeds: Vec<u64>, accuracies: Vec<f64>) -> Result<Self> {
        if accuracies.is_empty() || accuracies.len() != seeds.len() {
            return Err(Error::Config("probe report needs one accuracy per seed".into()));
        }
        let max_accuracy = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            checkpoint_id,
            probe_head,
            seeds,
            accuracies,
            max_accuracy,
        })
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }
}

/// Trains one head on fixed features with early stopping on dev accuracy.
/// Returns the parameters and accuracy at the best dev epoch.
pub fn fit_head(
    spec: &HeadSpec,
    prefix: &str,
    train_x: &Tensor,
    train_y: &[usize],
    dev_x: &Tensor,
    dev_y: &[usize],
    seed: u64,
    config: &ProbeConfig,
) -> Result<(ParameterSet, f64)> {
    if train_y.is_empty() || dev_y.is_empty() {
        return Err(Error::Config("probe training needs non-empty splits".into()));
    }
    let mut params = nn::init_head(spec, train_x.cols(), prefix, seed)?;
    let mut shuffler = rng::stream(seed, "probe.shuffle");
    let mut order: Vec<usize> = (0..train_y.len()).collect();
    let cols = train_x.cols();
    let mut best = (head_accuracy(&params, prefix, dev_x, dev_y)?, params.clone());
    let mut since_best = 0;
    for _ in 0..config.max_epochs {
        order.shuffle(&mut shuffler);
        for chunk in order.chunks(config.batch_size) {
            let mut x = Vec::with_capacity(chunk.len() * cols);
            for &i in chunk {
                x.extend_from_slice(train_x.row(i));
            }
            let y: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let mut g = Graph::new();
            let bound = params.bind(&mut g, true);
            let input = g.constant(Tensor::new(vec![chunk.len(), cols], x)?);
            let logits = nn::head_logits(&mut g, &bound, prefix, input)?;
            let loss = g.cross_entropy(logits, &y)?;
            let grads = g.backward(loss)?;
            apply_sgd(&mut params, &bound, grads, config.learning_rate)?;
        }
        let acc = head_accuracy(&params, prefix, dev_x, dev_y)?;
        if acc > best.0 {
            best = (acc, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok((best.1, best.0))
}

fn hypothesis_features(checkpoint: &Checkpoint, examples: &[Example]) -> Result<(Tensor, Vec<usize>)> {
    let hyps: Vec<&[u32]> = examples.iter().map(|e| e.hypothesis.as_slice()).collect();
    let x = nn::encode_many(checkpoint.params(), checkpoint.config.encoder, &hyps)?;
    Ok((x, examples.iter().map(|e| e.label.index()).collect()))
}

fn check_vocab(checkpoint: &Checkpoint, vocab: &Vocabulary) -> Result<()> {
    if checkpoint.vocab != *vocab {
        return Err(Error::VocabMismatch(format!(
            "checkpoint has {} tokens, corpus has {}",
            checkpoint.vocab.len(),
            vocab.len()
        )));
    }
    Ok(())
}

/// Trains one probe per seed on the frozen hypothesis representations and
/// reports every probe's dev accuracy along with the maximum.
pub fn relearn_bias(
    checkpoint: &Checkpoint,
    corpus: &Corpus,
    head: &HeadSpec,
    seeds: &[u64],
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one probe is required".into()));
    }
    check_vocab(checkpoint, &corpus.vocab)?;
    // The encoder is only ever borrowed immutably below.
    let (train_x, train_y) = hypothesis_features(checkpoint, &corpus.train)?;
    let (dev_x, dev_y) = hypothesis_features(checkpoint, &corpus.dev)?;
    let accuracies = seeds
        .par_iter()
        .map(|&seed| {
            fit_head(head, "probe", &train_x, &train_y, &dev_x, &dev_y, seed, config).map(|(_, acc)| acc)
        })
        .collect::<Result<Vec<_>>>()?;
    ProbeReport::new(checkpoint.id()?, *head, seeds.to_vec(), accuracies)
}

/// Premise+hypothesis task accuracy of a checkpoint on `examples`.
pub fn evaluate(checkpoint: &Checkpoint, examples: &[Example]) -> Result<f64> {
    train::task_accuracy(checkpoint.params(), checkpoint.config.encoder, examples)
}

/// A classifier that sees only the hypothesis.
pub trait HypothesisClassifier {
    fn predict(&self, hypotheses: &[&[u32]]) -> Result<Vec<Label>>;
}

/// Always predicts one label.
#[derive(Clone, Copy, Debug)]
pub struct ConstantClassifier(pub Label);

impl HypothesisClassifier for ConstantClassifier {
    fn predict(&self, hypotheses: &[&[u32]]) -> Result<Vec<Label>> {
        Ok(vec![self.0; hypotheses.len()])
    }
}

/// Softmax regression over hypothesis token counts.
#[derive(Clone, Debug)]
pub struct BagOfWordsClassifier {
    params: ParameterSet,
    vocab_size: usize,
    pub dev_accuracy: f64,
}

impl BagOfWordsClassifier {
    pub fn features(hypotheses: &[&[u32]], vocab_size: usize) -> Result<Tensor> {
        let mut data = vec![0.0; hypotheses.len() * vocab_size];
        for (r, h) in hypotheses.iter().enumerate() {
            if h.is_empty() {
                return Err(Error::EmptySequence);
            }
            for &id in h.iter() {
                if id as usize >= vocab_size {
                    return Err(Error::TokenOutOfRange { id, vocab: vocab_size });
                }
                data[r * vocab_size + id as usize] += 1.0;
            }
        }
        Tensor::new(vec![hypotheses.len(), vocab_size], data)
    }

    pub fn train(corpus: &Corpus, seed: u64, config: &ProbeConfig) -> Result<Self> {
        let v = corpus.vocab.len();
        let split = |ex: &[Example]| -> Result<(Tensor, Vec<usize>)> {
            let hyps: Vec<&[u32]> = ex.iter().map(|e| e.hypothesis.as_slice()).collect();
            Ok((Self::features(&hyps, v)?, ex.iter().map(|e| e.label.index()).collect()))
        };
        let (tx, ty) = split(&corpus.train)?;
        let (dx, dy) = split(&corpus.dev)?;
        let (params, dev_accuracy) = fit_head(&HeadSpec::Linear, "bow", &tx, &ty, &dx, &dy, seed, config)?;
        Ok(Self {
            params,
            vocab_size: v,
            dev_accuracy,
        })
    }
}

impl HypothesisClassifier for BagOfWordsClassifier {
    fn predict(&self, hypotheses: &[&[u32]]) -> Result<Vec<Label>> {
        let x = Self::features(hypotheses, self.vocab_size)?;
        let scores = nn::head_scores(&self.params, "bow", &x)?;
        nn::argmax_rows(&scores).into_iter().map(Label::from_index).collect()
    }
}

/// The examples a hypothesis-only classifier gets wrong.
pub fn hard_subset(examples: &[Example], classifier: &dyn HypothesisClassifier) -> Result<Vec<Example>> {
    let hyps: Vec<&[u32]> = examples.iter().map(|e| e.hypothesis.as_slice()).collect();
    let predicted = classifier.predict(&hyps)?;
    let hard: Vec<Example> = examples
        .iter()
        .zip(predicted)
        .filter(|(e, p)| e.label != *p)
        .map(|(e, _)| e.clone())
        .collect();
    if hard.is_empty() {
        warn!("hard subset is empty: the hypothesis-only classifier made no errors");
    }
    Ok(hard)
}

/// Which head the adversaries use during training and which head relearns
/// the bias afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub train_adversary: HeadSpec,
    pub probe: HeadSpec,
}

impl ScenarioSpec {
    /// Linear/linear plus the three scenarios with a 3-layer tanh MLP on
    /// either or both sides.
    pub fn matrix(hidden: usize) -> [ScenarioSpec; 4] {
        let mlp = HeadSpec::Mlp3 { hidden };
        let lin = HeadSpec::Linear;
        [
            ScenarioSpec { train_adversary: lin, probe: lin },
            ScenarioSpec { train_adversary: mlp, probe: lin },
            ScenarioSpec { train_adversary: lin, probe: mlp },
            ScenarioSpec { train_adversary: mlp, probe: mlp },
        ]
    }

    pub fn name(&self) -> String {
        format!("{}-train/{}-probe", self.train_adversary.short_name(), self.probe.short_name())
    }
}

/// Representation width and adversary count of the two deeper-adversary
/// presets: 5 adversaries at 512 dimensions and 10 at 2048.
pub const SCENARIO_PRESETS: [(usize, usize); 2] = [(512, 5), (2048, 10)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub spec: ScenarioSpec,
    pub seed: u64,
    pub checkpoint_id: String,
    pub train_log: TrainLog,
    pub report: ProbeReport,
}

/// Trains with the scenario's adversary head and probes with its probe head.
pub fn run_scenario(
    spec: &ScenarioSpec,
    corpus: &Corpus,
    config: &TrainConfig,
    probes: &ProbeSettings,
) -> Result<ScenarioOutcome> {
    Ok(run_scenarios(std::slice::from_ref(spec), corpus, config, probes)?.remove(0))
}

/// Runs several scenarios, training each distinct adversary head once.
pub fn run_scenarios(
    specs: &[ScenarioSpec],
    corpus: &Corpus,
    config: &TrainConfig,
    probes: &ProbeSettings,
) -> Result<Vec<ScenarioOutcome>> {
    let mut trained: Vec<(HeadSpec, Checkpoint, TrainLog)> = Vec::new();
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let idx = match trained.iter().position(|(h, _, _)| *h == spec.train_adversary) {
            Some(i) => i,
            None => {
                let cfg = TrainConfig {
                    adversary_head: spec.train_adversary,
                    ..config.clone()
                };
                let outcome = train::train(corpus, &cfg)?;
                let ck = Checkpoint::new(cfg, corpus.vocab.clone(), outcome.params);
                trained.push((spec.train_adversary, ck, outcome.log));
                trained.len() - 1
            }
        };
        let (_, ck, log) = &trained[idx];
        let report = relearn_bias(ck, corpus, &spec.probe, &probes.seeds(), &probes.optimizer)?;
        out.push(ScenarioOutcome {
            spec: *spec,
            seed: config.seed,
            checkpoint_id: ck.id()?,
            train_log: log.clone(),
            report,
        });
    }
    Ok(out)
}
