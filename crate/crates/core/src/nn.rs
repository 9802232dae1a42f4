//! Model components: the shared sentence encoder, the pair combiner, and the
//! feed-forward heads used for the task classifier, the adversaries and the
//! probes.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;

pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Mean of token embeddings followed by a linear `d -> k` projection.
    #[default]
    MeanPool,
    /// `h_t = tanh(x_t W_x + h_{t-1} W_h + b)`, max-pooled over time.
    SimpleRecurrent,
}

/// Shape of a classifier head mapping some input width to the three classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadSpec {
    Linear,
    /// One tanh hidden layer.
    OneHidden { hidden: usize },
    /// Three linear layers with tanh between them.
    Mlp3 { hidden: usize },
}

impl HeadSpec {
    /// Layer widths from `input` to the class scores.
    pub fn widths(&self, input: usize) -> Vec<usize> {
        match *self {
            HeadSpec::Linear => vec![input, NUM_CLASSES],
            HeadSpec::OneHidden { hidden } => vec![input, hidden, NUM_CLASSES],
            HeadSpec::Mlp3 { hidden } => vec![input, hidden, hidden, NUM_CLASSES],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            HeadSpec::OneHidden { hidden: 0 } | HeadSpec::Mlp3 { hidden: 0 } => {
                Err(Error::Config("head hidden width must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            HeadSpec::Linear => "linear",
            HeadSpec::OneHidden { .. } => "mlp1",
            HeadSpec::Mlp3 { .. } => "mlp3",
        }
    }
}

/// Named parameter tensors. Names are dotted paths such as
/// `encoder.embedding` or `adversary.3.layer0.weight`; iteration order is
/// lexicographic, which keeps serialization and updates deterministic.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Parameters whose names start with `prefix.`.
    pub fn subset(&self, prefix: &str) -> ParameterSet {
        let dotted = format!("{prefix}.");
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(&dotted))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParameterSet) {
        self.tensors.extend(other.tensors);
    }

    /// Adds every parameter to `graph`, trainable or constant.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Maps every value through `f32` and back, the checkpoint storage precision.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors.values_mut() {
            for x in t.data_mut() {
                *x = f64::from(*x as f32);
            }
        }
    }
}

/// Graph handles for a bound [`ParameterSet`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::from_parts(vec![fan_in, fan_out], data)
}

/// Xavier-uniform weights and zero biases for a head under `prefix`.
pub fn init_head(spec: &HeadSpec, input: usize, prefix: &str, seed: u64) -> Result<ParameterSet> {
    spec.validate()?;
    if input == 0 {
        return Err(Error::Config("head input width must be positive".into()));
    }
    let mut rng = rng::stream(seed, prefix);
    let mut params = ParameterSet::new();
    for (j, w) in spec.widths(input).windows(2).enumerate() {
        params.insert(format!("{prefix}.layer{j}.weight"), xavier(&mut rng, w[0], w[1]));
        params.insert(format!("{prefix}.layer{j}.bias"), Tensor::zeros(&[w[1]]));
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub dim: usize,
}

/// Embedding table plus either the projection or the recurrent weights.
pub fn init_encoder(spec: &EncoderSpec, seed: u64) -> Result<ParameterSet> {
    if spec.vocab_size == 0 || spec.embed_dim == 0 || spec.dim == 0 {
        return Err(Error::Config("encoder sizes must be positive".into()));
    }
    let mut rng = rng::stream(seed, "encoder");
    let mut params = ParameterSet::new();
    params.insert("encoder.embedding", xavier(&mut rng, spec.vocab_size, spec.embed_dim));
    match spec.kind {
        EncoderKind::MeanPool => {
            params.insert("encoder.projection", xavier(&mut rng, spec.embed_dim, spec.dim));
        }
        EncoderKind::SimpleRecurrent => {
            params.insert("encoder.w_x", xavier(&mut rng, spec.embed_dim, spec.dim));
            params.insert("encoder.w_h", xavier(&mut rng, spec.dim, spec.dim));
            params.insert("encoder.bias", Tensor::zeros(&[spec.dim]));
        }
    }
    Ok(params)
}

/// Full architecture of the pair classifier and its adversaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub task_head: HeadSpec,
    pub adversary_head: HeadSpec,
    pub adversaries: usize,
}

pub fn adversary_prefix(i: usize) -> String {
    format!("adversary.{i}")
}

/// Parameters for the encoder, task head and every adversary. Each group
/// draws from its own seed stream, so the adversary count never changes the
/// encoder or task-head initialisation.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParameterSet> {
    let mut params = init_encoder(&spec.encoder, seed)?;
    params.extend(init_head(&spec.task_head, 4 * spec.encoder.dim, "task", seed)?);
    for i in 0..spec.adversaries {
        params.extend(init_head(
            &spec.adversary_head,
            spec.encoder.dim,
            &adversary_prefix(i),
            seed,
        )?);
    }
    Ok(params)
}

/// Encodes a batch of sequences into a `[batch, k]` node.
pub fn encode_batch(
    graph: &mut Graph,
    bound: &Bound,
    kind: EncoderKind,
    sequences: &[&[u32]],
) -> Result<Var> {
    let table = bound.var("encoder.embedding")?;
    match kind {
        EncoderKind::MeanPool => {
            let pooled = graph.embedding_mean(table, sequences)?;
            let proj = bound.var("encoder.projection")?;
            graph.matmul(pooled, proj)
        }
        EncoderKind::SimpleRecurrent => {
            let w_x = bound.var("encoder.w_x")?;
            let w_h = bound.var("encoder.w_h")?;
            let bias = bound.var("encoder.bias")?;
            let mut rows = Vec::with_capacity(sequences.len());
            for seq in sequences {
                let x = graph.gather_rows(table, seq)?;
                let xw = graph.matmul(x, w_x)?;
                let xw = graph.add(xw, bias)?;
                let mut states = Vec::with_capacity(seq.len());
                for t in 0..seq.len() {
                    let input = graph.select_row(xw, t)?;
                    let pre = match states.last() {
                        Some(&prev) => {
                            let rec = graph.matmul(prev, w_h)?;
                            graph.add(input, rec)?
                        }
                        None => input,
                    };
                    states.push(graph.tanh(pre)?);
                }
                rows.push(graph.max_over_time(&states)?);
            }
            graph.concat_rows(&rows)
        }
    }
}

/// `[e_h ; e_p ; e_h - e_p ; e_h * e_p]` along the feature axis.
pub fn combine(graph: &mut Graph, hypothesis: Var, premise: Var) -> Result<Var> {
    let (h, p) = (graph.value(hypothesis), graph.value(premise));
    if h.shape() != p.shape() {
        return Err(Error::ShapeMismatch {
            op: "combine",
            left: h.shape().to_vec(),
            right: p.shape().to_vec(),
        });
    }
    let diff = graph.sub(hypothesis, premise)?;
    let prod = graph.mul(hypothesis, premise)?;
    graph.concat(&[hypothesis, premise, diff, prod])
}

/// Feed-forward evaluation of the head stored under `prefix`.
pub fn head_logits(graph: &mut Graph, bound: &Bound, prefix: &str, input: Var) -> Result<Var> {
    let mut x = input;
    let mut j = 0;
    loop {
        let w = match bound.var(&format!("{prefix}.layer{j}.weight")) {
            Ok(w) => w,
            Err(e) if j == 0 => return Err(e),
            Err(_) => break,
        };
        if j > 0 {
            x = graph.tanh(x)?;
        }
        let b = bound.var(&format!("{prefix}.layer{j}.bias"))?;
        let z = graph.matmul(x, w)?;
        x = graph.add(z, b)?;
        j += 1;
    }
    Ok(x)
}

/// Encodes one sequence outside of any training graph.
pub fn encode(params: &ParameterSet, kind: EncoderKind, sequence: &[u32]) -> Result<Vec<f64>> {
    Ok(encode_many(params, kind, &[sequence])?.into_data())
}

/// Encodes many sequences as a `[n, k]` tensor, in chunks to bound graph size.
pub fn encode_many(params: &ParameterSet, kind: EncoderKind, sequences: &[&[u32]]) -> Result<Tensor> {
    if sequences.is_empty() {
        return Err(Error::EmptySequence);
    }
    let encoder = params.subset("encoder");
    let mut data = Vec::new();
    let mut cols = 0;
    for chunk in sequences.chunks(256) {
        let mut g = Graph::new();
        let bound = encoder.bind(&mut g, false);
        let e = encode_batch(&mut g, &bound, kind, chunk)?;
        cols = g.value(e).cols();
        data.extend_from_slice(g.value(e).data());
    }
    Tensor::new(vec![sequences.len(), cols], data)
}

/// Head scores for a `[n, width]` feature matrix, evaluated without gradients.
pub fn head_scores(params: &ParameterSet, prefix: &str, features: &Tensor) -> Result<Tensor> {
    let head = params.subset(prefix);
    let mut g = Graph::new();
    let bound = head.bind(&mut g, false);
    let x = g.constant(features.clone());
    let out = head_logits(&mut g, &bound, prefix, x)?;
    Ok(g.value(out).clone())
}

/// Arg-max class per row, ties to the lowest index.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    (0..scores.rows())
        .map(|r| {
            let row = scores.row(r);
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
