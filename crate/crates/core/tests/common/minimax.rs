//! Oracles for the adversarial objective: independent backward passes,
//! zero-gradient checks and trajectory comparisons.

use ensemble_debias::autodiff::{Graph, Tensor};
use ensemble_debias::data::{Corpus, Example, SplitSizes, SyntheticSpec};
use ensemble_debias::nn::{self, adversary_prefix, EncoderKind, HeadSpec, ParameterSet};
use ensemble_debias::train::{minimax_loss, train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{tiny_batch, tiny_model};

fn encoder_names(params: &ParameterSet) -> Vec<String> {
    params.names().filter(|n| n.starts_with("encoder.")).cloned().collect()
}

/// Encoder gradient of a plain task loss, or of one adversary reading the
/// hypothesis directly (no reversal node anywhere in the graph).
fn independent_encoder_grad(
    params: &ParameterSet,
    kind: EncoderKind,
    batch: &[&Example],
    adversary: Option<usize>,
) -> Vec<Tensor> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let hyps: Vec<&[u32]> = batch.iter().map(|e| e.hypothesis.as_slice()).collect();
    let prems: Vec<&[u32]> = batch.iter().map(|e| e.premise.as_slice()).collect();
    let labels: Vec<usize> = batch.iter().map(|e| e.label.index()).collect();
    let h = nn::encode_batch(&mut g, &bound, kind, &hyps).unwrap();
    let loss = match adversary {
        None => {
            let p = nn::encode_batch(&mut g, &bound, kind, &prems).unwrap();
            let f = nn::combine(&mut g, h, p).unwrap();
            let logits = nn::head_logits(&mut g, &bound, "task", f).unwrap();
            g.cross_entropy(logits, &labels).unwrap()
        }
        Some(i) => {
            let logits = nn::head_logits(&mut g, &bound, &adversary_prefix(i), h).unwrap();
            g.cross_entropy(logits, &labels).unwrap()
        }
    };
    let grads = g.backward(loss).unwrap();
    encoder_names(params)
        .iter()
        .map(|n| grads.get(bound.var(n).unwrap()))
        .collect()
}

/// Largest |assembled - ((1-l) g_task - (l/n) sum g_adv)| over every encoder
/// entry, for all lambda in {0, 0.3, 1}, n in {1, 3, 5} and both encoders.
pub fn decomposition_max_diff() -> f64 {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for kind in [EncoderKind::MeanPool, EncoderKind::SimpleRecurrent] {
        for &n in &[1usize, 3, 5] {
            for &lambda in &[0.0, 0.3, 1.0] {
                let (_, params) = tiny_model(kind, n, HeadSpec::Linear, 100 + n as u64);
                let batch = tiny_batch(&mut rng, 7, 4);
                let refs: Vec<&Example> = batch.iter().collect();
                let mut g = Graph::new();
                let bound = params.bind(&mut g, true);
                let l = minimax_loss(&mut g, &bound, kind, &refs, lambda, n).unwrap();
                let grads = g.backward(l.total).unwrap();

                let task = independent_encoder_grad(&params, kind, &refs, None);
                let advs: Vec<Vec<Tensor>> = (0..n)
                    .map(|i| independent_encoder_grad(&params, kind, &refs, Some(i)))
                    .collect();
                for (j, name) in encoder_names(&params).iter().enumerate() {
                    let assembled = grads.get(bound.var(name).unwrap());
                    for (k, a) in assembled.data().iter().enumerate() {
                        let adv_sum: f64 = advs.iter().map(|g| g[j].data()[k]).sum();
                        let expected = (1.0 - lambda) * task[j].data()[k] - lambda / n as f64 * adv_sum;
                        worst = worst.max((a - expected).abs());
                    }
                }
            }
        }
    }
    worst
}

/// Encoder gradient of the full objective with `n` copies of one adversary.
fn duplicated_adversary_grad(n: usize, kind: EncoderKind) -> Vec<Tensor> {
    let (_, base) = tiny_model(kind, 1, HeadSpec::Linear, 5);
    let mut params = base.clone();
    for i in 1..n {
        for suffix in ["layer0.weight", "layer0.bias"] {
            let t = base.get(&format!("adversary.0.{suffix}")).unwrap().clone();
            params.insert(format!("{}.{suffix}", adversary_prefix(i)), t);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = tiny_batch(&mut rng, 7, 5);
    let refs: Vec<&Example> = batch.iter().collect();
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let l = minimax_loss(&mut g, &bound, kind, &refs, 0.5, n).unwrap();
    let grads = g.backward(l.total).unwrap();
    encoder_names(&params)
        .iter()
        .map(|name| grads.get(bound.var(name).unwrap()))
        .collect()
}

/// Largest change in the encoder gradient when the ensemble of identical
/// adversaries grows from 1 to 2 to 4.
pub fn scaling_law_max_diff() -> f64 {
    let mut worst = 0.0f64;
    for kind in [EncoderKind::MeanPool, EncoderKind::SimpleRecurrent] {
        let one = duplicated_adversary_grad(1, kind);
        for n in [2, 4] {
            let many = duplicated_adversary_grad(n, kind);
            for (a, b) in one.iter().zip(&many) {
                worst = worst.max(a.max_abs_diff(b));
            }
        }
    }
    worst
}

#[derive(Debug)]
pub struct Separation {
    /// Largest task-head gradient entry from any adversary loss.
    pub task_from_adversaries: f64,
    /// Largest adversary gradient entry from the task loss.
    pub adversaries_from_task: f64,
}

pub fn flow_separation() -> Separation {
    let mut out = Separation {
        task_from_adversaries: 0.0,
        adversaries_from_task: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for kind in [EncoderKind::MeanPool, EncoderKind::SimpleRecurrent] {
        let (_, params) = tiny_model(kind, 3, HeadSpec::Mlp3 { hidden: 3 }, 8);
        let batch = tiny_batch(&mut rng, 7, 4);
        let refs: Vec<&Example> = batch.iter().collect();
        let max_abs = |grads: &ensemble_debias::autodiff::Gradients, bound: &nn::Bound, prefix: &str| {
            bound
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .flat_map(|(_, v)| grads.get(*v).into_data())
                .fold(0.0f64, |m, x| m.max(x.abs()))
        };
        for i in 0..3 {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, true);
            let l = minimax_loss(&mut g, &bound, kind, &refs, 0.5, 3).unwrap();
            let grads = g.backward(l.adversaries[i]).unwrap();
            out.task_from_adversaries = out.task_from_adversaries.max(max_abs(&grads, &bound, "task."));
        }
        let mut g = Graph::new();
        let bound = params.bind(&mut g, true);
        let l = minimax_loss(&mut g, &bound, kind, &refs, 0.5, 3).unwrap();
        let grads = g.backward(l.task).unwrap();
        out.adversaries_from_task = max_abs(&grads, &bound, "adversary.");
    }
    out
}

pub fn small_corpus(leak_rate: f64, train: usize) -> Corpus {
    let spec = SyntheticSpec {
        leak_rate,
        ..Default::default()
    };
    ensemble_debias::data::generate(&spec, SplitSizes { train, dev: 100, test: 100 }).unwrap()
}

fn small_config(kind: EncoderKind) -> TrainConfig {
    TrainConfig {
        dim: 8,
        embed_dim: 6,
        encoder: kind,
        task_head: HeadSpec::OneHidden { hidden: 8 },
        max_epochs: 3,
        batch_size: 16,
        spectators: 2,
        seed: 4,
        ..Default::default()
    }
}

fn shared(params: &ParameterSet) -> ParameterSet {
    let mut out = params.subset("encoder");
    out.extend(params.subset("task"));
    out
}

/// Whether lambda = 0 with three adversaries reproduces the no-adversary run
/// bit for bit (encoder, task head and log), for both encoders.
pub fn lambda_zero_matches_plain() -> bool {
    let corpus = small_corpus(0.9, 300);
    [EncoderKind::MeanPool, EncoderKind::SimpleRecurrent].iter().all(|&kind| {
        let plain = TrainConfig {
            adversaries: 0,
            lambda: 0.0,
            ..small_config(kind)
        };
        let with = TrainConfig {
            adversaries: 3,
            lambda: 0.0,
            ..small_config(kind)
        };
        let a = train(&corpus, &plain).unwrap();
        let b = train(&corpus, &with).unwrap();
        let same_log = a
            .log
            .epochs
            .iter()
            .zip(&b.log.epochs)
            .all(|(x, y)| x.train_loss == y.train_loss && x.dev_task_accuracy == y.dev_task_accuracy);
        shared(&a.params) == shared(&b.params) && shared(&a.final_params) == shared(&b.final_params) && same_log
    })
}

/// Whether dropping the spectators leaves every trained parameter unchanged.
pub fn spectators_are_inert() -> bool {
    let corpus = small_corpus(0.9, 300);
    let with = TrainConfig {
        adversaries: 2,
        lambda: 0.5,
        spectators: 4,
        ..small_config(EncoderKind::MeanPool)
    };
    let without = TrainConfig {
        spectators: 0,
        ..with.clone()
    };
    let a = train(&corpus, &with).unwrap();
    let b = train(&corpus, &without).unwrap();
    a.params == b.params && a.final_params == b.final_params
}
