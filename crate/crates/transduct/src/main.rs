use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::error;
use transduct::config::ExperimentConfig;
use transduct::experiment::{self, stages, RunOutcome};
use transduct::{Dataset, Mode};

#[derive(Parser)]
#[command(name = "transduct", version, about = "Transductive novelty detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the split and train the networks.
    Train(RunArgs),
    /// Fit the detector on a trained checkpoint and score the unlabeled set.
    Detect(RunArgs),
    /// Compute AUROC from stored scores and export image grids.
    Eval(RunArgs),
    /// Train, detect and evaluate in one go.
    Run(RunArgs),
    /// Run a grid of classes, contamination rates and methods and write the
    /// aggregated results table.
    ReproduceTable(TableArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Base configuration file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    dataset: Option<Dataset>,
    /// Seed; repeat for several runs.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Cap on iterations per epoch, for quick runs.
    #[arg(long)]
    iterations_per_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    /// Also train the negative-side image critic.
    #[arg(long)]
    negative_branch: bool,
    /// Samples per class used to fit the detector.
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory holding `mnist/` or `cifar10/`; falls back to
    /// `$TRANSDUCT_DATA_ROOT`.
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Log per-epoch losses.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    novel_class: Option<u8>,
    #[arg(long)]
    pi: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    common: Common,
    /// Novel classes; defaults to every class of the dataset.
    #[arg(long = "class", value_delimiter = ',')]
    classes: Vec<u8>,
    #[arg(long = "pis", value_delimiter = ',', default_value = "0.05,0.1,0.2,0.3")]
    pis: Vec<f64>,
    #[arg(
        long = "modes",
        value_enum,
        value_delimiter = ',',
        default_value = "transduct,vanilla"
    )]
    modes: Vec<Mode>,
}

impl Common {
    fn base(&self, class: Option<u8>, pi: Option<f64>, mode: Option<Mode>) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => {
                let Some(dataset) = self.dataset else {
                    bail!("either --config or --dataset is required");
                };
                let default_class = if dataset == Dataset::Synthetic2d { 1 } else { 0 };
                ExperimentConfig::new(dataset, default_class, 0.1, Mode::Transduct)
            }
        };
        if let Some(d) = self.dataset {
            if d != cfg.experiment.dataset {
                bail!(
                    "--dataset {} conflicts with the configuration file ({})",
                    d.name(),
                    cfg.experiment.dataset.name()
                );
            }
        }
        let e = &mut cfg.experiment;
        if let Some(c) = class {
            e.novel_class = c;
        }
        if let Some(p) = pi {
            e.pi = p;
        }
        if let Some(m) = mode {
            e.mode = m;
        }
        if !self.seeds.is_empty() {
            e.seeds = self.seeds.clone();
        }
        if let Some(o) = &self.out {
            e.output_dir = o.clone();
        }
        if let Some(r) = &self.data_root {
            e.data_root = Some(r.clone());
        }
        if let Some(n) = self.checkpoint_every {
            e.checkpoint_every = n;
        }
        let t = &mut cfg.train;
        if let Some(n) = self.epochs {
            t.epochs = n;
        }
        if let Some(n) = self.iterations_per_epoch {
            t.iterations_per_epoch = Some(n);
        }
        if let Some(n) = self.batch_size {
            t.batch_size = n;
        }
        if let Some(lr) = self.learning_rate {
            t.learning_rate = lr;
        }
        if self.negative_branch {
            t.negative_branch = true;
        }
        if let Some(n) = self.samples_per_class {
            cfg.detector.samples_per_class = n;
        }
        Ok(cfg)
    }
}

fn report(outcome: &RunOutcome) -> ExitCode {
    for r in &outcome.reports {
        println!(
            "{} class {} pi {:.2} ({:.4}) {} seed {}: AUROC {:.4}",
            r.dataset.name(),
            r.novel_class,
            r.pi_requested,
            r.pi_actual,
            r.mode.name(),
            r.seed,
            r.auroc
        );
    }
    for (seed, msg) in &outcome.failures {
        error!("seed {seed}: {msg}");
    }
    if outcome.all_succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let outcome = match cli.command {
        Command::Train(a) => stages::train(&a.common.base(a.novel_class, a.pi, a.mode)?)?,
        Command::Detect(a) => stages::detect(&a.common.base(a.novel_class, a.pi, a.mode)?)?,
        Command::Eval(a) => stages::eval(&a.common.base(a.novel_class, a.pi, a.mode)?)?,
        Command::Run(a) => experiment::run_experiment(&a.common.base(a.novel_class, a.pi, a.mode)?)?,
        Command::ReproduceTable(a) => {
            let base = a.common.base(None, None, None)?;
            let classes = if !a.classes.is_empty() {
                a.classes.clone()
            } else if base.experiment.dataset == Dataset::Synthetic2d {
                vec![1]
            } else {
                (0..10).collect()
            };
            let (outcome, rows) = experiment::reproduce_table(&base, &classes, &a.pis, &a.modes)?;
            for r in &rows {
                println!(
                    "{:>10} {:>9} {:.2} {}",
                    r.novel_class,
                    r.method.name(),
                    r.pi,
                    r.formatted()
                );
            }
            return Ok(report(&RunOutcome {
                reports: Vec::new(),
                failures: outcome.failures,
            }));
        }
    };
    Ok(report(&outcome))
}

fn verbose(cli: &Cli) -> bool {
    match &cli.command {
        Command::Train(a) | Command::Detect(a) | Command::Eval(a) | Command::Run(a) => a.common.verbose,
        Command::ReproduceTable(a) => a.common.verbose,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if verbose(&cli) { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
