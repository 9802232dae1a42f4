//! Central finite-difference oracle for the autodiff engine.
//!
//! A case builds a scalar loss as a weighted sum of parts. Finite differences
//! see only forward values, so the gradient of a part whose path from a
//! parameter crosses a reversal node with scale `c` is `-c` times its
//! finite-difference slope. Each case states that sign through `weight`.

use std::collections::BTreeSet;

use ensemble_debias::autodiff::{Graph, ReversalCoefficient, Tensor, Var};
use ensemble_debias::data::{Example, Label};
use ensemble_debias::nn::{self, Bound, EncoderKind, EncoderSpec, HeadSpec, ModelSpec, ParameterSet};
use ensemble_debias::train::minimax_loss;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub const STEP: f64 = 1e-5;

pub struct Built {
    pub total: Var,
    pub parts: Vec<Var>,
}

type Builder = Box<dyn Fn(&mut Graph, &Bound) -> Built>;
type Weight = Box<dyn Fn(usize, &str) -> f64>;

pub struct Case {
    pub name: String,
    pub params: ParameterSet,
    pub build: Builder,
    pub weight: Weight,
    pub ops: &'static [&'static str],
}

#[derive(Debug, Default)]
pub struct Report {
    pub graphs: usize,
    pub entries: usize,
    pub max_rel_error: f64,
    pub worst: String,
    pub ops: BTreeSet<&'static str>,
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn part_values(case: &Case, params: &ParameterSet) -> Vec<f64> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let built = (case.build)(&mut g, &bound);
    built.parts.iter().map(|p| g.value(*p).data()[0]).collect()
}

/// Checks every parameter entry of `case`; returns the largest relative error.
pub fn check_case(case: &Case) -> (f64, usize, String) {
    let mut g = Graph::new();
    let bound = case.params.bind(&mut g, true);
    let built = (case.build)(&mut g, &bound);
    let grads = g.backward(built.total).expect("scalar loss");
    let mut worst = (0.0, String::new());
    let mut entries = 0;
    let names: Vec<String> = case.params.names().cloned().collect();
    for name in &names {
        let analytic = grads.get(bound.var(name).unwrap());
        let len = case.params.get(name).unwrap().len();
        for i in 0..len {
            let mut plus = case.params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += STEP;
            let mut minus = case.params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= STEP;
            let (vp, vm) = (part_values(case, &plus), part_values(case, &minus));
            let oracle: f64 = vp
                .iter()
                .zip(&vm)
                .enumerate()
                .map(|(k, (p, m))| (case.weight)(k, name) * (p - m) / (2.0 * STEP))
                .sum();
            let e = rel_error(analytic.data()[i], oracle);
            entries += 1;
            if e > worst.0 {
                worst = (e, format!("{} {name}[{i}]: analytic {} vs fd {oracle}", case.name, analytic.data()[i]));
            }
        }
    }
    (worst.0, entries, worst.1)
}

pub fn run(cases: &[Case]) -> Report {
    let mut report = Report::default();
    for case in cases {
        let (e, n, w) = check_case(case);
        report.graphs += 1;
        report.entries += n;
        report.ops.extend(case.ops.iter().copied());
        if e >= report.max_rel_error {
            report.max_rel_error = e;
            report.worst = w;
        }
    }
    report
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn plain() -> Weight {
    Box::new(|_, _| 1.0)
}

fn labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..3)).collect()
}

/// Dense layer, row broadcast, tanh, row selection, both vector-matrix forms,
/// scaling and batch cross-entropy.
fn dense_case(rng: &mut ChaCha8Rng, idx: usize) -> Case {
    let (b, d, h) = (rng.gen_range(1..5), rng.gen_range(2..5), rng.gen_range(2..5));
    let mut params = ParameterSet::new();
    params.insert("x", uniform(rng, &[b, d]));
    params.insert("w", uniform(rng, &[d, h]));
    params.insert("c", uniform(rng, &[h]));
    params.insert("v", uniform(rng, &[h, 3]));
    params.insert("m", uniform(rng, &[3, h]));
    let y = labels(rng, b);
    let row = rng.gen_range(0..b);
    let single = rng.gen_range(0..3);
    let factor = rng.gen_range(0.1..2.0);
    Case {
        name: format!("dense#{idx}"),
        params,
        build: Box::new(move |g, p| {
            let z = g.matmul(p.var("x").unwrap(), p.var("w").unwrap()).unwrap();
            let z = g.add(z, p.var("c").unwrap()).unwrap();
            let t = g.tanh(z).unwrap();
            let logits = g.matmul(t, p.var("v").unwrap()).unwrap();
            let ce = g.cross_entropy(logits, &y).unwrap();
            let r = g.select_row(t, row).unwrap();
            let left = g.matmul(r, p.var("v").unwrap()).unwrap();
            let right = g.matmul(p.var("m").unwrap(), r).unwrap();
            let both = g.add(left, right).unwrap();
            let ce2 = g.cross_entropy(both, &[single]).unwrap();
            let ce2 = g.scale(ce2, factor).unwrap();
            let total = g.add(ce, ce2).unwrap();
            Built { total, parts: vec![total] }
        }),
        weight: plain(),
        ops: &["matmul", "add", "tanh", "select_row", "scale", "cross_entropy"],
    }
}

/// Elementwise ops, concatenation along both axes, reductions and max over time.
fn elementwise_case(rng: &mut ChaCha8Rng, idx: usize) -> Case {
    let (r, d) = (rng.gen_range(2..5), rng.gen_range(2..5));
    let mut params = ParameterSet::new();
    params.insert("a", uniform(rng, &[r, d]));
    params.insert("b", uniform(rng, &[r, d]));
    params.insert("u", uniform(rng, &[d]));
    params.insert("w", uniform(rng, &[2 * d, 3]));
    let y = rng.gen_range(0..3);
    Case {
        name: format!("elementwise#{idx}"),
        params,
        build: Box::new(move |g, p| {
            let (a, b, u) = (p.var("a").unwrap(), p.var("b").unwrap(), p.var("u").unwrap());
            let s = g.sub(a, b).unwrap();
            let m = g.mul(s, a).unwrap();
            let wide = g.concat(&[m, b]).unwrap();
            let steps: Vec<Var> = (0..r).map(|t| g.select_row(wide, t).unwrap()).collect();
            let pooled = g.max_over_time(&steps).unwrap();
            let logits = g.matmul(pooled, p.var("w").unwrap()).unwrap();
            let ce = g.cross_entropy(logits, &[y]).unwrap();
            let stacked = g.concat_rows(&[s, u]).unwrap();
            let col = g.mean_rows(stacked).unwrap();
            let t = g.tanh(col).unwrap();
            let prod = g.mul(t, u).unwrap();
            let s1 = g.sum(prod).unwrap();
            let m1 = g.mean(m).unwrap();
            let tail = g.add(s1, m1).unwrap();
            let total = g.add(ce, tail).unwrap();
            Built { total, parts: vec![total] }
        }),
        weight: plain(),
        ops: &["sub", "mul", "concat", "max_over_time", "concat_rows", "mean_rows", "sum", "mean"],
    }
}

/// Embedding lookups, both as a gathered sequence and as a bag mean.
fn embedding_case(rng: &mut ChaCha8Rng, idx: usize) -> Case {
    let (v, d) = (rng.gen_range(3..7), rng.gen_range(2..5));
    let mut params = ParameterSet::new();
    params.insert("table", uniform(rng, &[v, d]));
    params.insert("w", uniform(rng, &[d, 3]));
    let seqs: Vec<Vec<u32>> = (0..rng.gen_range(1..4))
        .map(|_| (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..v as u32)).collect())
        .collect();
    let y = labels(rng, seqs.len());
    Case {
        name: format!("embedding#{idx}"),
        params,
        build: Box::new(move |g, p| {
            let table = p.var("table").unwrap();
            let refs: Vec<&[u32]> = seqs.iter().map(|s| s.as_slice()).collect();
            let bag = g.embedding_mean(table, &refs).unwrap();
            let logits = g.matmul(bag, p.var("w").unwrap()).unwrap();
            let ce = g.cross_entropy(logits, &y).unwrap();
            let rows = g.gather_rows(table, &seqs[0]).unwrap();
            let t = g.tanh(rows).unwrap();
            let m = g.mean(t).unwrap();
            let total = g.add(ce, m).unwrap();
            Built { total, parts: vec![total] }
        }),
        weight: plain(),
        ops: &["embedding_mean", "gather_rows"],
    }
}

/// A shared trunk read by a plain head and by a head behind a reversal node.
fn reversal_case(rng: &mut ChaCha8Rng, idx: usize) -> Case {
    let (b, d, h) = (rng.gen_range(1..4), rng.gen_range(2..5), rng.gen_range(2..5));
    let mut params = ParameterSet::new();
    params.insert("trunk.x", uniform(rng, &[b, d]));
    params.insert("trunk.w", uniform(rng, &[d, h]));
    params.insert("head.a", uniform(rng, &[h, 3]));
    params.insert("head.b", uniform(rng, &[h, 3]));
    let y = labels(rng, b);
    let c = if idx % 4 == 0 { 0.0 } else { rng.gen_range(0.0..2.0) };
    Case {
        name: format!("reversal#{idx}"),
        params,
        build: Box::new(move |g, p| {
            let z = g.matmul(p.var("trunk.x").unwrap(), p.var("trunk.w").unwrap()).unwrap();
            let h = g.tanh(z).unwrap();
            let la = g.matmul(h, p.var("head.a").unwrap()).unwrap();
            let a = g.cross_entropy(la, &y).unwrap();
            let r = g.grad_reverse(h, ReversalCoefficient::new(c).unwrap());
            let lb = g.matmul(r, p.var("head.b").unwrap()).unwrap();
            let bl = g.cross_entropy(lb, &y).unwrap();
            let total = g.add(a, bl).unwrap();
            Built { total, parts: vec![a, bl] }
        }),
        weight: Box::new(move |part, name| if part == 1 && name.starts_with("trunk.") { -c } else { 1.0 }),
        ops: &["grad_reverse"],
    }
}

pub fn tiny_batch(rng: &mut ChaCha8Rng, vocab: usize, size: usize) -> Vec<Example> {
    (0..size)
        .map(|_| {
            let mut seq = |lo: usize, hi: usize| -> Vec<u32> {
                (0..rng.gen_range(lo..=hi)).map(|_| rng.gen_range(0..vocab as u32)).collect()
            };
            let premise = seq(2, 5);
            let hypothesis = seq(1, 4);
            let label = Label::ALL[rng.gen_range(0..3)];
            Example::new(premise, hypothesis, label).unwrap()
        })
        .collect()
}

pub fn tiny_model(kind: EncoderKind, adversaries: usize, adversary_head: HeadSpec, seed: u64) -> (ModelSpec, ParameterSet) {
    let spec = ModelSpec {
        encoder: EncoderSpec {
            kind,
            vocab_size: 7,
            embed_dim: 3,
            dim: 4,
        },
        task_head: HeadSpec::OneHidden { hidden: 5 },
        adversary_head,
        adversaries,
    };
    let params = nn::init_params(&spec, seed).unwrap();
    (spec, params)
}

/// The full minimax objective through either encoder.
fn minimax_case(rng: &mut ChaCha8Rng, idx: usize, kind: EncoderKind) -> Case {
    let n = rng.gen_range(1..4);
    let lambda = [0.0, 0.3, 0.7, 1.0][idx % 4];
    let head = if idx % 2 == 0 { HeadSpec::Linear } else { HeadSpec::Mlp3 { hidden: 3 } };
    let (_, mut params) = tiny_model(kind, n, head, rng.gen());
    // Move off the zero biases so every branch is exercised.
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        for x in params.get_mut(&name).unwrap().data_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
    }
    let size = rng.gen_range(1..4);
    let batch = tiny_batch(rng, 7, size);
    Case {
        name: format!("minimax-{kind:?}#{idx}"),
        params,
        build: Box::new(move |g, p| {
            let refs: Vec<&Example> = batch.iter().collect();
            let l = minimax_loss(g, p, kind, &refs, lambda, n).unwrap();
            let mut parts = vec![l.task];
            parts.extend(l.adversaries);
            Built { total: l.total, parts }
        }),
        weight: Box::new(move |part, name| {
            if part == 0 {
                1.0 - lambda
            } else if name.starts_with("encoder.") {
                -lambda / n as f64
            } else {
                lambda / n as f64
            }
        }),
        ops: match kind {
            EncoderKind::MeanPool => &["encoder:mean_pool", "grad_reverse", "concat", "sub", "mul"],
            EncoderKind::SimpleRecurrent => &["encoder:simple_recurrent", "grad_reverse", "max_over_time", "gather_rows"],
        },
    }
}

/// `count` random graphs cycling through every template.
pub fn random_cases(count: usize, seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| match i % 6 {
            0 => dense_case(&mut rng, i),
            1 => elementwise_case(&mut rng, i),
            2 => embedding_case(&mut rng, i),
            3 => reversal_case(&mut rng, i),
            4 => minimax_case(&mut rng, i, EncoderKind::MeanPool),
            _ => minimax_case(&mut rng, i, EncoderKind::SimpleRecurrent),
        })
        .collect()
}

pub const ALL_OPS: &[&str] = &[
    "matmul",
    "add",
    "sub",
    "mul",
    "tanh",
    "concat",
    "mean",
    "max_over_time",
    "cross_entropy",
    "grad_reverse",
    "encoder:mean_pool",
    "encoder:simple_recurrent",
];
