//! Config-driven experiment batches: the dimension x adversary-count grid
//! over several seeds, and the report tables built from its artifacts.

mod grid;
mod report;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Corpus, Example, SplitSizes, SyntheticSpec};
use crate::error::{Error, Result};
use crate::probe::{ProbeConfig, ProbeSettings};
use crate::stats::DEFAULT_BOOTSTRAP_ITERATIONS;
use crate::train::TrainConfig;

pub use grid::{
    cell_key, run_grid, CellFailure, CellRecord, Evaluation, GridCell, GridResult, TrainSummary, HARD_NAME, TEST_NAME,
};
pub use report::{load_grid_result, report, DeltaTable, ReportSummary, TableCell};

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const PROBE_DIR: &str = "probes";
pub const REPORT_DIR: &str = "reports";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSpec {
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
        sizes: SplitSizes,
    },
    Jsonl {
        train: PathBuf,
        dev: PathBuf,
        test: PathBuf,
        /// Optional word vectors replacing the initial embedding table.
        #[serde(default)]
        embeddings: Option<PathBuf>,
    },
}

impl DataSpec {
    pub fn load(&self) -> Result<Corpus> {
        match self {
            DataSpec::Synthetic { spec, sizes } => data::generate(spec, *sizes),
            DataSpec::Jsonl { train, dev, test, .. } => data::load_jsonl(train, dev, test),
        }
    }
}

/// An extra evaluation corpus sharing the training vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum EvalSource {
    Jsonl { path: PathBuf },
    Synthetic { spec: SyntheticSpec, size: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub name: String,
    #[serde(flatten)]
    pub source: EvalSource,
}

impl EvalSet {
    pub fn load(&self, corpus: &Corpus) -> Result<Vec<Example>> {
        match &self.source {
            EvalSource::Jsonl { path } => data::load_jsonl_with_vocab(path, &corpus.vocab),
            EvalSource::Synthetic { spec, size } => {
                if spec.vocabulary() != corpus.vocab {
                    return Err(Error::VocabMismatch(format!(
                        "evaluation set `{}` uses a different synthetic vocabulary",
                        self.name
                    )));
                }
                let sizes = SplitSizes {
                    train: 0,
                    dev: 0,
                    test: *size,
                };
                Ok(data::generate(spec, sizes)?.test)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: Vec<usize>,
    pub adversaries: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl GridSpec {
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::with_capacity(self.dims.len() * self.adversaries.len() * self.seeds.len());
        for &dim in &self.dims {
            for &adversaries in &self.adversaries {
                for &seed in &self.seeds {
                    out.push(GridCell { dim, adversaries, seed });
                }
            }
        }
        out
    }
}

/// Settings of the hypothesis-only model that defines the hard test subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardSubsetSpec {
    pub seed: u64,
    #[serde(default)]
    pub optimizer: ProbeConfig,
}

impl Default for HardSubsetSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            optimizer: ProbeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSpec,
    pub grid: GridSpec,
    /// Template for every cell; `dim`, `adversaries` and `seed` come from the
    /// grid, and cells without adversaries train with `lambda = 0`.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub probe: ProbeSettings,
    #[serde(default)]
    pub hard_subset: HardSubsetSpec,
    #[serde(default)]
    pub eval_sets: Vec<EvalSet>,
    /// Worker threads for grid cells; defaults to the number of logical cores.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_iterations")]
    pub bootstrap_iterations: usize,
    pub output: PathBuf,
}

fn default_iterations() -> usize {
    DEFAULT_BOOTSTRAP_ITERATIONS
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub lambda: Option<f64>,
    pub adversaries: Option<usize>,
    pub dim: Option<usize>,
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Small grid sized for a laptop: k in {32, 64, 128}, n in {0, 1, 5, 10},
    /// three seeds, 20k synthetic training pairs.
    pub fn desk(output: PathBuf) -> Self {
        Self {
            data: DataSpec::Synthetic {
                spec: SyntheticSpec::default(),
                sizes: SplitSizes {
                    train: 20_000,
                    dev: 2_000,
                    test: 2_000,
                },
            },
            grid: GridSpec {
                dims: vec![32, 64, 128],
                adversaries: vec![0, 1, 5, 10],
                seeds: vec![0, 1, 2],
            },
            train: TrainConfig::default(),
            probe: ProbeSettings::default(),
            hard_subset: HardSubsetSpec::default(),
            eval_sets: Vec::new(),
            workers: None,
            bootstrap_iterations: DEFAULT_BOOTSTRAP_ITERATIONS,
            output,
        }
    }

    /// The full grid: k in {256, 512, 1024, 2048}, n in {0, 1, 5, 10, 20},
    /// ten seeds.
    pub fn full(output: PathBuf) -> Self {
        let mut c = Self::desk(output);
        c.grid = GridSpec {
            dims: vec![256, 512, 1024, 2048],
            adversaries: vec![0, 1, 5, 10, 20],
            seeds: (0..10).collect(),
        };
        if let DataSpec::Synthetic { sizes, .. } = &mut c.data {
            sizes.train = 100_000;
            sizes.dev = 5_000;
            sizes.test = 5_000;
        }
        c
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(l) = o.lambda {
            self.train.lambda = l;
        }
        if let Some(n) = o.adversaries {
            self.grid.adversaries = vec![n];
        }
        if let Some(k) = o.dim {
            self.grid.dims = vec![k];
        }
        if let Some(s) = o.seed {
            self.grid.seeds = vec![s];
        }
        if let Some(b) = o.beta {
            if let DataSpec::Synthetic { spec, .. } = &mut self.data {
                spec.leak_rate = b;
            }
        }
        if let Some(out) = &o.out {
            self.output = out.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.dims.is_empty() || g.adversaries.is_empty() || g.seeds.is_empty() {
            return Err(Error::Config("grid must have at least one dimension, adversary count and seed".into()));
        }
        let distinct: HashSet<u64> = g.seeds.iter().copied().collect();
        if distinct.len() != g.seeds.len() {
            return Err(Error::Config("grid seeds must be distinct".into()));
        }
        for cell in g.cells() {
            self.cell_config(&cell).validate()?;
        }
        if self.probe.count == 0 {
            return Err(Error::Config("at least one probe is required".into()));
        }
        self.probe.head.validate()?;
        if self.bootstrap_iterations < 1000 {
            return Err(Error::Config("bootstrap needs at least 1000 iterations".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        let mut names = HashSet::new();
        for e in &self.eval_sets {
            if matches!(e.name.as_str(), grid::TEST_NAME | grid::HARD_NAME) || !names.insert(&e.name) {
                return Err(Error::Config(format!("duplicate evaluation set name `{}`", e.name)));
            }
        }
        if let DataSpec::Synthetic { spec, .. } = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// Training config of one grid cell.
    pub fn cell_config(&self, cell: &GridCell) -> TrainConfig {
        TrainConfig {
            dim: cell.dim,
            adversaries: cell.adversaries,
            seed: cell.seed,
            lambda: if cell.adversaries == 0 { 0.0 } else { self.train.lambda },
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_overrides_apply() {
        let mut c = ExperimentConfig::desk("out".into());
        c.validate().unwrap();
        assert_eq!(c.grid.cells().len(), 36);
        ExperimentConfig::full("x".into()).validate().unwrap();
        c.apply(&Overrides {
            lambda: Some(0.3),
            adversaries: Some(5),
            dim: Some(16),
            seed: Some(9),
            beta: Some(0.7),
            out: Some("elsewhere".into()),
        });
        assert_eq!(c.grid.cells(), vec![GridCell { dim: 16, adversaries: 5, seed: 9 }]);
        assert_eq!(c.train.lambda, 0.3);
        assert_eq!(c.output, PathBuf::from("elsewhere"));
        match &c.data {
            DataSpec::Synthetic { spec, .. } => assert_eq!(spec.leak_rate, 0.7),
            _ => unreachable!(),
        }
    }

    #[test]
    fn invalid_grids_are_config_errors() {
        let mut c = ExperimentConfig::desk("out".into());
        c.grid.seeds = vec![1, 1];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.grid.seeds = vec![];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk("out".into());
        c.train.lambda = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn baseline_cells_train_without_adversarial_term() {
        let c = ExperimentConfig::desk("out".into());
        let cfg = c.cell_config(&GridCell { dim: 32, adversaries: 0, seed: 1 });
        assert_eq!(cfg.lambda, 0.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn config_json_round_trips() {
        let c = ExperimentConfig::desk("out".into());
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
