use std::fs;
use std::path::Path;
use std::sync::mpsc;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataSpec, ExperimentConfig, CHECKPOINT_DIR, PROBE_DIR, REPORT_DIR};
use crate::data::{load_embeddings, Corpus, Example};
use crate::error::{Error, Result};
use crate::nn;
use crate::probe::{self, relearn_bias, BagOfWordsClassifier, ProbeReport};
use crate::train::{self, Checkpoint, TrainConfig, TrainLog};

/// Evaluation names of the test split and its hard subset in cell records.
pub const TEST_NAME: &str = "test";
pub const HARD_NAME: &str = "test-hard";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridCell {
    pub dim: usize,
    pub adversaries: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    /// Best in-training adversary's dev accuracy at the last epoch.
    pub final_adversary_accuracy: Option<f64>,
    pub final_max_spectator_accuracy: Option<f64>,
}

impl TrainSummary {
    fn of(log: &TrainLog) -> Self {
        let last = log.last();
        Self {
            epochs_run: log.epochs.len(),
            best_epoch: log.best_epoch,
            best_dev_accuracy: log.best_dev_accuracy,
            final_adversary_accuracy: last.and_then(|r| r.max_adversary_accuracy()),
            final_max_spectator_accuracy: last.and_then(|r| r.max_spectator_accuracy()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub name: String,
    pub examples: usize,
    /// `None` when the set is empty, e.g. an empty hard subset.
    pub accuracy: Option<f64>,
}

/// Everything one grid cell produced. Stored as `probes/<key>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub key: String,
    pub cell: GridCell,
    pub checkpoint_id: String,
    /// Relative to the output directory.
    pub checkpoint_file: String,
    pub train: TrainSummary,
    pub log: TrainLog,
    pub probe: ProbeReport,
    pub evaluations: Vec<Evaluation>,
}

impl CellRecord {
    pub fn evaluation(&self, name: &str) -> Option<&Evaluation> {
        self.evaluations.iter().find(|e| e.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: GridCell,
    pub key: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    /// Sorted by (dim, adversaries, seed).
    pub cells: Vec<CellRecord>,
    pub failures: Vec<CellFailure>,
    /// Cells whose artifacts already existed.
    pub skipped: usize,
}

impl GridResult {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Content hash of everything that determines a cell's artifacts.
pub fn cell_key(config: &ExperimentConfig, cell: &GridCell) -> Result<String> {
    #[derive(Serialize)]
    struct KeyMaterial<'a> {
        version: u32,
        data: &'a DataSpec,
        train: TrainConfig,
        probe: &'a probe::ProbeSettings,
        hard_subset: &'a super::HardSubsetSpec,
        eval_sets: &'a [super::EvalSet],
    }
    let material = KeyMaterial {
        version: 1,
        data: &config.data,
        train: config.cell_config(cell),
        probe: &config.probe,
        hard_subset: &config.hard_subset,
        eval_sets: &config.eval_sets,
    };
    let digest = Sha256::digest(serde_json::to_vec(&material)?);
    Ok(hex::encode(&digest[..8]))
}

struct Shared {
    corpus: Corpus,
    embeddings: Option<crate::autodiff::Tensor>,
    eval: Vec<(String, Vec<Example>)>,
}

fn prepare(config: &ExperimentConfig) -> Result<Shared> {
    let corpus = config.data.load()?;
    let embeddings = match &config.data {
        DataSpec::Jsonl {
            embeddings: Some(path), ..
        } => {
            let table = load_embeddings(path, &corpus.vocab, config.train.seed)?;
            if table.cols() != config.train.embed_dim {
                return Err(Error::Config(format!(
                    "embedding file has width {}, config expects {}",
                    table.cols(),
                    config.train.embed_dim
                )));
            }
            Some(table)
        }
        _ => None,
    };
    let bow = BagOfWordsClassifier::train(&corpus, config.hard_subset.seed, &config.hard_subset.optimizer)?;
    let hard = probe::hard_subset(&corpus.test, &bow)?;
    info!(
        "hypothesis-only model: dev accuracy {:.4}, hard subset {} of {} test pairs",
        bow.dev_accuracy,
        hard.len(),
        corpus.test.len()
    );
    let mut eval = vec![(TEST_NAME.to_string(), corpus.test.clone()), (HARD_NAME.to_string(), hard)];
    for set in &config.eval_sets {
        eval.push((set.name.clone(), set.load(&corpus)?));
    }
    Ok(Shared {
        corpus,
        embeddings,
        eval,
    })
}

fn run_cell(config: &ExperimentConfig, shared: &Shared, cell: &GridCell, key: &str) -> Result<CellRecord> {
    let out = &config.output;
    let train_config = config.cell_config(cell);
    let mut params = nn::init_params(&train_config.model_spec(shared.corpus.vocab.len()), train_config.seed)?;
    if let Some(table) = &shared.embeddings {
        *params.get_mut("encoder.embedding")? = table.clone();
    }
    let outcome = train::train_from(&shared.corpus, &train_config, params)?;
    let checkpoint = Checkpoint::new(train_config, shared.corpus.vocab.clone(), outcome.params);
    let checkpoint_file = format!("{CHECKPOINT_DIR}/{key}.aedb");
    checkpoint.save(&out.join(&checkpoint_file))?;

    let report = relearn_bias(
        &checkpoint,
        &shared.corpus,
        &config.probe.head,
        &config.probe.seeds(),
        &config.probe.optimizer,
    )?;
    let evaluations = shared
        .eval
        .iter()
        .map(|(name, examples)| {
            let accuracy = if examples.is_empty() {
                None
            } else {
                Some(probe::evaluate(&checkpoint, examples)?)
            };
            Ok(Evaluation {
                name: name.clone(),
                examples: examples.len(),
                accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let record = CellRecord {
        key: key.to_string(),
        cell: *cell,
        checkpoint_id: report.checkpoint_id.clone(),
        checkpoint_file,
        train: TrainSummary::of(&outcome.log),
        log: outcome.log,
        probe: report,
        evaluations,
    };
    write_json(&out.join(PROBE_DIR).join(format!("{key}.json")), &record)?;
    Ok(record)
}

pub(super) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn existing_record(path: &Path, key: &str) -> Option<CellRecord> {
    let text = fs::read_to_string(path).ok()?;
    let record: CellRecord = serde_json::from_str(&text).ok()?;
    (record.key == key).then_some(record)
}

/// Runs every cell of the grid: train, checkpoint, relearn the bias, and
/// evaluate on the test set, its hard subset and any extra evaluation sets.
///
/// Cells whose record already exists under `probes/` are skipped. A failing
/// cell is recorded and the others proceed. Cells run on a bounded worker
/// pool and report back over a channel; only this function writes the
/// run-level files.
pub fn run_grid(config: &ExperimentConfig) -> Result<GridResult> {
    config.validate()?;
    let out = &config.output;
    for dir in [CHECKPOINT_DIR, PROBE_DIR, REPORT_DIR] {
        let path = out.join(dir);
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
    }
    write_json(&out.join("config.json"), config)?;

    let mut result = GridResult::default();
    let mut pending = Vec::new();
    for cell in config.grid.cells() {
        let key = cell_key(config, &cell)?;
        match existing_record(&out.join(PROBE_DIR).join(format!("{key}.json")), &key) {
            Some(record) => {
                result.skipped += 1;
                result.cells.push(record);
            }
            None => pending.push((cell, key)),
        }
    }
    info!("{} cells to run, {} already complete", pending.len(), result.skipped);

    if !pending.is_empty() {
        let shared = prepare(config)?;
        let workers = config
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        let (tx, rx) = mpsc::channel();
        pool.in_place_scope(|scope| {
            for (cell, key) in &pending {
                let tx = tx.clone();
                let shared = &shared;
                scope.spawn(move |_| {
                    let outcome = run_cell(config, shared, cell, key);
                    let _ = tx.send((*cell, key.clone(), outcome));
                });
            }
            drop(tx);
            for (cell, key, outcome) in rx.iter() {
                match outcome {
                    Ok(record) => {
                        info!(
                            "cell k={} n={} seed={}: relearned bias {:.4}",
                            cell.dim, cell.adversaries, cell.seed, record.probe.max_accuracy
                        );
                        result.cells.push(record);
                    }
                    Err(e) => {
                        warn!("cell k={} n={} seed={} failed: {e}", cell.dim, cell.adversaries, cell.seed);
                        result.failures.push(CellFailure {
                            cell,
                            key,
                            error: e.to_string(),
                        });
                    }
                }
            }
        });
    }
    result.cells.sort_by_key(|r| r.cell);
    result.failures.sort_by_key(|f| f.cell);
    write_json(&out.join(REPORT_DIR).join("failures.json"), &result.failures)?;
    Ok(result)
}
