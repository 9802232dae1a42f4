use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use ensemble_debias::data::{self, load_jsonl, write_jsonl, Corpus, SplitSizes, SyntheticSpec};
use ensemble_debias::experiment::{self, ExperimentConfig, Overrides};
use ensemble_debias::nn::HeadSpec;
use ensemble_debias::probe::{self, probe_seeds, ProbeConfig, ProbeSettings, ScenarioSpec};
use ensemble_debias::stats::{self, SampleSet, DEFAULT_BOOTSTRAP_ITERATIONS};
use ensemble_debias::train::{self, Checkpoint, TrainConfig};
use ensemble_debias::Error;

/// Ensemble adversarial training against hypothesis-only bias.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic biased corpus as train/dev/test JSON-lines files.
    GenData {
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write its checkpoint and training log.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Checkpoint path; the log is written next to it as `<out>.log.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Freeze a checkpoint and relearn the hypothesis-only bias with fresh probes.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        probes: ProbeArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Linear vs MLP adversaries during training and during relearning.
    Scenario {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Use the width and adversary count of a preset (512 or 2048).
        #[arg(long)]
        preset: Option<usize>,
        /// Hidden width of the MLP heads.
        #[arg(long, default_value_t = 256)]
        hidden: usize,
        #[command(flatten)]
        probes: ProbeArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bootstrap and Mann-Whitney tests on two groups of accuracies.
    Stats {
        /// JSON file with a list of sample sets ({label, a_label, b_label, a, b}).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BOOTSTRAP_ITERATIONS)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Bonferroni factor; defaults to the number of sample sets.
        #[arg(long)]
        factor: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the dimension x adversary-count grid.
    Grid {
        /// Experiment config (JSON). Without it a preset is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Build report tables from a grid output directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

#[derive(Args)]
struct SynthArgs {
    /// Leak rate of the planted hypothesis-only bias.
    #[arg(long, default_value_t = 0.9)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, default_value_t = 40)]
    vocab_size: usize,
    #[arg(long, default_value_t = 20_000)]
    train_size: usize,
    #[arg(long, default_value_t = 2_000)]
    dev_size: usize,
    #[arg(long, default_value_t = 2_000)]
    test_size: usize,
    /// Draw entailment hypotheses from the short half of the length range.
    #[arg(long)]
    length_artifact: bool,
}

impl SynthArgs {
    fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            vocab_size: self.vocab_size,
            leak_rate: self.beta,
            length_artifact: self.length_artifact,
            seed: self.data_seed,
            ..Default::default()
        }
    }

    fn sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.train_size,
            dev: self.dev_size,
            test: self.test_size,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Directory with train.jsonl, dev.jsonl and test.jsonl. Without it a
    /// synthetic corpus is generated.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthArgs,
}

impl DataArgs {
    fn load(&self) -> Result<Corpus> {
        let corpus = match &self.data_dir {
            Some(dir) => load_jsonl(&dir.join("train.jsonl"), &dir.join("dev.jsonl"), &dir.join("test.jsonl"))?,
            None => data::generate(&self.synth.spec(), self.synth.sizes())?,
        };
        Ok(corpus)
    }
}

#[derive(Args)]
struct ModelArgs {
    /// TrainConfig JSON; the flags below override it.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    adversaries: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ModelArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut c = match &self.train_config {
            Some(path) => read_json(path)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if let Some(v) = self.adversaries {
            c.adversaries = v;
        }
        if let Some(v) = self.dim {
            c.dim = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long, default_value_t = 20)]
    probes: usize,
    #[arg(long, default_value_t = 1000)]
    probe_seed: u64,
    /// Probe head: `linear` or `mlp3`.
    #[arg(long, default_value = "linear")]
    probe_head: String,
    #[arg(long, default_value_t = 256)]
    probe_hidden: usize,
}

impl ProbeArgs {
    fn head(&self) -> Result<HeadSpec> {
        match self.probe_head.as_str() {
            "linear" => Ok(HeadSpec::Linear),
            "mlp3" => Ok(HeadSpec::Mlp3 {
                hidden: self.probe_hidden,
            }),
            other => Err(Error::Config(format!("unknown probe head `{other}`")).into()),
        }
    }

    fn settings(&self, head: HeadSpec) -> ProbeSettings {
        ProbeSettings {
            head,
            count: self.probes,
            base_seed: self.probe_seed,
            optimizer: ProbeConfig::default(),
        }
    }
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    adversaries: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())).into())
}

fn emit_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData { synth, out } => {
            let corpus = data::generate(&synth.spec(), synth.sizes())?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (name, split) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
                write_jsonl(&out.join(format!("{name}.jsonl")), split, &corpus.vocab)?;
            }
            info!("wrote {} examples to {}", corpus.train.len() + corpus.dev.len() + corpus.test.len(), out.display());
        }
        Command::Train { data, model, out } => {
            let config = model.config()?;
            let corpus = data.load()?;
            let outcome = train::train(&corpus, &config)?;
            let checkpoint = Checkpoint::new(config, corpus.vocab.clone(), outcome.params);
            checkpoint.save(&out)?;
            let mut log_path = out.clone().into_os_string();
            log_path.push(".log.json");
            emit_json(&outcome.log, Some(Path::new(&log_path)))?;
            println!(
                "checkpoint {} ({}): best dev accuracy {:.4} at epoch {}",
                out.display(),
                checkpoint.id()?,
                outcome.log.best_dev_accuracy,
                outcome.log.best_epoch
            );
        }
        Command::Probe {
            checkpoint,
            data,
            probes,
            out,
        } => {
            let head = probes.head()?;
            let checkpoint = Checkpoint::load(&checkpoint)?;
            let corpus = data.load()?;
            let report = probe::relearn_bias(
                &checkpoint,
                &corpus,
                &head,
                &probe_seeds(probes.probe_seed, probes.probes),
                &ProbeConfig::default(),
            )?;
            emit_json(&report, out.as_deref())?;
        }
        Command::Scenario {
            data,
            mut model,
            preset,
            hidden,
            probes,
            out,
        } => {
            if let Some(p) = preset {
                let (dim, n) = probe::SCENARIO_PRESETS
                    .iter()
                    .copied()
                    .find(|(d, _)| *d == p)
                    .ok_or_else(|| Error::Config(format!("no scenario preset for {p} dimensions")))?;
                model.dim = Some(dim);
                model.adversaries = Some(n);
            }
            let config = model.config()?;
            let corpus = data.load()?;
            let outcomes = probe::run_scenarios(
                &ScenarioSpec::matrix(hidden),
                &corpus,
                &config,
                &probes.settings(HeadSpec::Linear),
            )?;
            for o in &outcomes {
                eprintln!("{:<28} relearned bias {:.4}", o.spec.name(), o.report.max_accuracy);
            }
            emit_json(&outcomes, out.as_deref())?;
        }
        Command::Stats {
            input,
            iterations,
            seed,
            factor,
            out,
        } => {
            let sets: Vec<SampleSet> = read_json(&input)?;
            if sets.is_empty() {
                return Err(Error::Config("no sample sets in input".into()).into());
            }
            let factor = factor.unwrap_or(sets.len());
            let rows = sets
                .iter()
                .map(|s| stats::compare(s, iterations, seed, factor))
                .collect::<Result<Vec<_>, _>>()?;
            print!("{}", stats::format_comparison_table(&rows));
            if let Some(path) = out {
                emit_json(&rows, Some(&path))?;
            }
        }
        Command::Grid {
            config,
            preset,
            overrides,
        } => {
            let mut cfg = match &config {
                Some(path) => ExperimentConfig::from_path(path)?,
                None => match preset {
                    Preset::Desk => ExperimentConfig::desk("grid-out".into()),
                    Preset::Full => ExperimentConfig::full("grid-out".into()),
                },
            };
            cfg.apply(&Overrides {
                lambda: overrides.lambda,
                adversaries: overrides.adversaries,
                dim: overrides.dim,
                seed: overrides.seed,
                beta: overrides.beta,
                out: overrides.out,
            });
            let result = experiment::run_grid(&cfg)?;
            println!(
                "{} cells complete ({} skipped), {} failed; artifacts in {}",
                result.cells.len(),
                result.skipped,
                result.failures.len(),
                cfg.output.display()
            );
            for f in &result.failures {
                eprintln!(
                    "failed: k={} n={} seed={}: {}",
                    f.cell.dim, f.cell.adversaries, f.cell.seed, f.error
                );
            }
            if !result.succeeded() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report { dir } => {
            let summary = experiment::report(&dir)?;
            print!("{}", fs::read_to_string(dir.join(experiment::REPORT_DIR).join("bias_relearn.csv"))?);
            if !summary.significance.is_empty() {
                print!("\n{}", stats::format_comparison_table(&summary.significance));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
