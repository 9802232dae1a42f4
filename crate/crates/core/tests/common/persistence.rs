use ensemble_debias::data::Corpus;
use ensemble_debias::nn::{self, EncoderKind, HeadSpec};
use ensemble_debias::probe::{probe_seeds, relearn_bias, ProbeConfig};
use ensemble_debias::train::{train, Checkpoint, TrainConfig};

use super::minimax::small_corpus;

#[derive(Debug)]
pub struct Persistence {
    pub checkpoints_identical: bool,
    pub reports_identical: bool,
    /// Largest |encode(f64 params) - encode(loaded checkpoint)|.
    pub max_encode_diff: f64,
    pub round_trip: bool,
    pub corruption_detected: bool,
}

impl Persistence {
    pub fn passed(&self) -> bool {
        self.checkpoints_identical
            && self.reports_identical
            && self.max_encode_diff <= 1e-6
            && self.round_trip
            && self.corruption_detected
    }
}

fn config(kind: EncoderKind) -> TrainConfig {
    TrainConfig {
        lambda: 0.5,
        adversaries: 2,
        dim: 8,
        embed_dim: 6,
        encoder: kind,
        task_head: HeadSpec::OneHidden { hidden: 8 },
        max_epochs: 3,
        batch_size: 16,
        spectators: 2,
        seed: 12,
        ..Default::default()
    }
}

fn corrupted_variants(bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut magic = bytes.to_vec();
    magic[1] ^= 0xff;
    out.push(magic);
    let mut version = bytes.to_vec();
    version[4] = version[4].wrapping_add(1);
    out.push(version);
    out.push(bytes[..bytes.len() / 2].to_vec());
    out.push(bytes[..bytes.len() - 2].to_vec());
    out
}

pub fn check(dir: &std::path::Path) -> Persistence {
    let corpus: Corpus = small_corpus(0.9, 300);
    let mut out = Persistence {
        checkpoints_identical: true,
        reports_identical: true,
        max_encode_diff: 0.0,
        round_trip: true,
        corruption_detected: true,
    };
    for kind in [EncoderKind::MeanPool, EncoderKind::SimpleRecurrent] {
        let cfg = config(kind);
        let a = train(&corpus, &cfg).unwrap();
        let b = train(&corpus, &cfg).unwrap();
        let ca = Checkpoint::new(cfg.clone(), corpus.vocab.clone(), a.params.clone());
        let cb = Checkpoint::new(cfg.clone(), corpus.vocab.clone(), b.params);
        out.checkpoints_identical &= ca.to_bytes().unwrap() == cb.to_bytes().unwrap();

        let seeds = probe_seeds(5, 3);
        let probe = ProbeConfig {
            max_epochs: 5,
            ..Default::default()
        };
        let ra = relearn_bias(&ca, &corpus, &HeadSpec::Linear, &seeds, &probe).unwrap();
        let rb = relearn_bias(&cb, &corpus, &HeadSpec::Linear, &seeds, &probe).unwrap();
        out.reports_identical &= ra == rb;

        let path = dir.join(format!("{kind:?}.aedb"));
        ca.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        out.round_trip &= loaded == ca && loaded.id().unwrap() == ca.id().unwrap();
        for ex in corpus.dev.iter().take(50) {
            let full = nn::encode(&a.params, kind, &ex.hypothesis).unwrap();
            let stored = nn::encode(loaded.params(), kind, &ex.hypothesis).unwrap();
            for (x, y) in full.iter().zip(&stored) {
                out.max_encode_diff = out.max_encode_diff.max((x - y).abs());
            }
        }
        let bytes = ca.to_bytes().unwrap();
        out.corruption_detected &= corrupted_variants(&bytes)
            .iter()
            .all(|bad| Checkpoint::from_bytes(bad).is_err());
    }
    out
}
