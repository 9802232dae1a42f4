//! The minimax trainer.
//!
//! One SGD step per minibatch on
//! `(1 - lambda) * CE(task) + (lambda / n) * sum_i CE(adversary_i)`, where each
//! adversary reads the hypothesis representation through a gradient-reversal
//! node. Adversaries therefore descend on their own cross-entropy while the
//! encoder ascends on it, which is simultaneous gradient descent-ascent on the
//! saddle objective.

mod checkpoint;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ReversalCoefficient, Tensor, Var};
use crate::data::{Corpus, Example};
use crate::error::{Error, Result};
use crate::nn::{
    self, adversary_prefix, Bound, EncoderKind, EncoderSpec, HeadSpec, ModelSpec, ParameterSet,
};
use crate::rng;

pub use checkpoint::{Checkpoint, CheckpointMeta, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the adversarial term, in `[0, 1]`.
    pub lambda: f64,
    pub adversaries: usize,
    /// Sentence representation width `k`.
    pub dim: usize,
    pub embed_dim: usize,
    pub encoder: EncoderKind,
    pub task_head: HeadSpec,
    pub adversary_head: HeadSpec,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Detached monitoring probes trained alongside; they never touch the encoder.
    pub spectators: usize,
    pub adversary_update: AdversaryUpdate,
}

/// Step size for adversary parameters. The encoder always sees
/// `(1 - lambda) g_task - (lambda / n) sum g_adv`; this only changes how fast
/// the adversaries themselves learn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryUpdate {
    /// Each adversary steps on its own unweighted cross-entropy, as if the
    /// `lambda / n` factor lived only in the reversal coefficient.
    #[default]
    Normalized,
    /// Each adversary steps on the gradient of the weighted objective, so
    /// its rate shrinks with `lambda / n`.
    Weighted,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            adversaries: 1,
            dim: 64,
            embed_dim: 50,
            encoder: EncoderKind::MeanPool,
            task_head: HeadSpec::OneHidden { hidden: 512 },
            adversary_head: HeadSpec::Linear,
            learning_rate: 0.1,
            batch_size: 64,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            spectators: 20,
            adversary_update: AdversaryUpdate::Normalized,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.adversaries == 0 && self.lambda > 0.0 {
            return fail("lambda > 0 requires at least one adversary".into());
        }
        if self.dim == 0 || self.embed_dim == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return fail("dim, embed_dim, batch_size and max_epochs must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        self.task_head.validate()?;
        self.adversary_head.validate()
    }

    pub fn model_spec(&self, vocab_size: usize) -> ModelSpec {
        ModelSpec {
            encoder: EncoderSpec {
                kind: self.encoder,
                vocab_size,
                embed_dim: self.embed_dim,
                dim: self.dim,
            },
            task_head: self.task_head,
            adversary_head: self.adversary_head,
            adversaries: self.adversaries,
        }
    }
}

/// Graph nodes of one minibatch objective.
#[derive(Debug)]
pub struct MinimaxLoss {
    pub total: Var,
    pub task: Var,
    pub adversaries: Vec<Var>,
    pub hypothesis: Var,
    pub premise: Var,
}

/// Builds the batch objective on `graph`. Cross-entropies are batch means.
pub fn minimax_loss(
    graph: &mut Graph,
    bound: &Bound,
    encoder: EncoderKind,
    batch: &[&Example],
    lambda: f64,
    adversaries: usize,
) -> Result<MinimaxLoss> {
    if adversaries == 0 && lambda > 0.0 {
        return Err(Error::Config(
            "adversarial term with zero adversaries is ill-posed".into(),
        ));
    }
    let hyps: Vec<&[u32]> = batch.iter().map(|e| e.hypothesis.as_slice()).collect();
    let prems: Vec<&[u32]> = batch.iter().map(|e| e.premise.as_slice()).collect();
    let labels: Vec<usize> = batch.iter().map(|e| e.label.index()).collect();

    let hypothesis = nn::encode_batch(graph, bound, encoder, &hyps)?;
    let premise = nn::encode_batch(graph, bound, encoder, &prems)?;
    let features = nn::combine(graph, hypothesis, premise)?;
    let logits = nn::head_logits(graph, bound, "task", features)?;
    let task = graph.cross_entropy(logits, &labels)?;
    let mut total = graph.scale(task, 1.0 - lambda)?;

    let unit = ReversalCoefficient::new(1.0)?;
    let mut adv_losses = Vec::with_capacity(adversaries);
    for i in 0..adversaries {
        let reversed = graph.grad_reverse(hypothesis, unit);
        let logits = nn::head_logits(graph, bound, &adversary_prefix(i), reversed)?;
        let loss = graph.cross_entropy(logits, &labels)?;
        let weighted = graph.scale(loss, lambda / adversaries as f64)?;
        total = graph.add(total, weighted)?;
        adv_losses.push(loss);
    }
    Ok(MinimaxLoss {
        total,
        task,
        adversaries: adv_losses,
        hypothesis,
        premise,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_task_accuracy: f64,
    pub adversary_accuracy: Vec<f64>,
    pub spectator_accuracy: Vec<f64>,
}

impl EpochRecord {
    pub fn max_spectator_accuracy(&self) -> Option<f64> {
        self.spectator_accuracy.iter().copied().reduce(f64::max)
    }

    pub fn max_adversary_accuracy(&self) -> Option<f64> {
        self.adversary_accuracy.iter().copied().reduce(f64::max)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev task accuracy.
    pub params: ParameterSet,
    /// Parameters when training stopped.
    pub final_params: ParameterSet,
    pub log: TrainLog,
}

/// Detached hypothesis-only classifiers trained on the encoder's current
/// representations. They read values, not graph nodes, so they cannot send
/// gradient to the encoder.
struct Spectators {
    params: ParameterSet,
    count: usize,
}

fn spectator_prefix(i: usize) -> String {
    format!("spectator.{i}")
}

impl Spectators {
    fn new(config: &TrainConfig) -> Result<Self> {
        let mut params = ParameterSet::new();
        for i in 0..config.spectators {
            params.extend(nn::init_head(
                &config.adversary_head,
                config.dim,
                &spectator_prefix(i),
                config.seed,
            )?);
        }
        Ok(Self {
            params,
            count: config.spectators,
        })
    }

    fn step(&mut self, features: &Tensor, labels: &[usize], lr: f64) -> Result<()> {
        if self.count == 0 {
            return Ok(());
        }
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, true);
        let x = g.constant(features.clone());
        let mut total: Option<Var> = None;
        for i in 0..self.count {
            let logits = nn::head_logits(&mut g, &bound, &spectator_prefix(i), x)?;
            let loss = g.cross_entropy(logits, labels)?;
            total = Some(match total {
                Some(t) => g.add(t, loss)?,
                None => loss,
            });
        }
        let grads = g.backward(total.expect("count > 0"))?;
        apply_sgd(&mut self.params, &bound, grads, lr)
    }

    fn accuracies(&self, features: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        (0..self.count)
            .map(|i| head_accuracy(&self.params, &spectator_prefix(i), features, labels))
            .collect()
    }
}

pub(crate) fn apply_sgd(
    params: &mut ParameterSet,
    bound: &Bound,
    mut grads: crate::autodiff::Gradients,
    lr: f64,
) -> Result<()> {
    for (name, var) in bound.iter() {
        if grads.reached(*var) {
            let g = grads.take(*var);
            params.get_mut(name)?.sgd_step(&g, lr)?;
        }
    }
    Ok(())
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Accuracy of the head under `prefix` on a feature matrix.
pub fn head_accuracy(params: &ParameterSet, prefix: &str, features: &Tensor, labels: &[usize]) -> Result<f64> {
    let scores = nn::head_scores(params, prefix, features)?;
    Ok(accuracy(&nn::argmax_rows(&scores), labels))
}

/// Encoded hypotheses and premises of a split.
pub struct EncodedSplit {
    pub hypotheses: Tensor,
    pub premises: Tensor,
    pub labels: Vec<usize>,
}

pub fn encode_split(params: &ParameterSet, kind: EncoderKind, examples: &[Example]) -> Result<EncodedSplit> {
    let hyps: Vec<&[u32]> = examples.iter().map(|e| e.hypothesis.as_slice()).collect();
    let prems: Vec<&[u32]> = examples.iter().map(|e| e.premise.as_slice()).collect();
    Ok(EncodedSplit {
        hypotheses: nn::encode_many(params, kind, &hyps)?,
        premises: nn::encode_many(params, kind, &prems)?,
        labels: examples.iter().map(|e| e.label.index()).collect(),
    })
}

/// Task-head predictions for an encoded split.
pub fn task_predictions(params: &ParameterSet, split: &EncodedSplit) -> Result<Vec<usize>> {
    let task = params.subset("task");
    let mut g = Graph::new();
    let bound = task.bind(&mut g, false);
    let h = g.constant(split.hypotheses.clone());
    let p = g.constant(split.premises.clone());
    let features = nn::combine(&mut g, h, p)?;
    let logits = nn::head_logits(&mut g, &bound, "task", features)?;
    Ok(nn::argmax_rows(g.value(logits)))
}

/// Premise+hypothesis accuracy of the task classifier on `examples`.
pub fn task_accuracy(params: &ParameterSet, kind: EncoderKind, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Config("accuracy of an empty split".into()));
    }
    let split = encode_split(params, kind, examples)?;
    Ok(accuracy(&task_predictions(params, &split)?, &split.labels))
}

/// Trains from a fresh initialisation.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome> {
    let spec = config.model_spec(corpus.vocab.len());
    let params = nn::init_params(&spec, config.seed)?;
    train_from(corpus, config, params)
}

/// Trains starting from `params`, for example with a pretrained embedding
/// table substituted in.
pub fn train_from(corpus: &Corpus, config: &TrainConfig, mut params: ParameterSet) -> Result<TrainOutcome> {
    config.validate()?;
    corpus.validate()?;
    if corpus.train.is_empty() || corpus.dev.is_empty() {
        return Err(Error::Config("training needs non-empty train and dev splits".into()));
    }
    let mut spectators = Spectators::new(config)?;
    let mut order: Vec<usize> = (0..corpus.train.len()).collect();
    let mut shuffler = rng::stream(config.seed, "shuffle");
    let mut log = TrainLog::default();
    let mut best = (f64::NEG_INFINITY, params.clone());
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffler);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &corpus.train[i]).collect();
            let mut g = Graph::new();
            let bound = params.bind(&mut g, true);
            let diverged = |e: Error| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch },
                other => other,
            };
            let loss = minimax_loss(&mut g, &bound, config.encoder, &batch, config.lambda, config.adversaries)
                .map_err(diverged)?;
            let value = g.value(loss.total).data()[0];
            if !value.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += value;
            batches += 1;
            let features = g.value(loss.hypothesis).clone();
            let grads = g.backward(loss.total).map_err(diverged)?;
            let adversary_lr = match config.adversary_update {
                AdversaryUpdate::Weighted => config.learning_rate,
                AdversaryUpdate::Normalized if config.lambda > 0.0 => {
                    config.learning_rate * config.adversaries as f64 / config.lambda
                }
                AdversaryUpdate::Normalized => config.learning_rate,
            };
            let mut grads = grads;
            for (name, var) in bound.iter() {
                if grads.reached(*var) {
                    let rate = if name.starts_with("adversary.") { adversary_lr } else { config.learning_rate };
                    params.get_mut(name)?.sgd_step(&grads.take(*var), rate)?;
                }
            }

            let labels: Vec<usize> = batch.iter().map(|e| e.label.index()).collect();
            spectators
                .step(&features, &labels, config.learning_rate)
                .map_err(diverged)?;
        }

        let dev = encode_split(&params, config.encoder, &corpus.dev)?;
        let dev_task = accuracy(&task_predictions(&params, &dev)?, &dev.labels);
        let adversary_accuracy = (0..config.adversaries)
            .map(|i| head_accuracy(&params, &adversary_prefix(i), &dev.hypotheses, &dev.labels))
            .collect::<Result<Vec<_>>>()?;
        let spectator_accuracy = spectators.accuracies(&dev.hypotheses, &dev.labels)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            dev_task_accuracy: dev_task,
            adversary_accuracy,
            spectator_accuracy,
        };
        debug!(
            "epoch {epoch}: loss {:.4} dev {:.4} adv {:?} spectator max {:?}",
            record.train_loss,
            dev_task,
            record.max_adversary_accuracy(),
            record.max_spectator_accuracy()
        );
        log.epochs.push(record);

        if dev_task > best.0 {
            best = (dev_task, params.clone());
            log.best_epoch = epoch;
            log.best_dev_accuracy = dev_task;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                info!("early stop at epoch {epoch}, best epoch {}", log.best_epoch);
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best.1,
        final_params: params,
        log,
    })
}
