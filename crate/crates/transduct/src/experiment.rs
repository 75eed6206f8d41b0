//! End-to-end runs: split, train, fit the detector, score, evaluate.
//!
//! Each stage can run on its own from the files the previous stage left in
//! the output directory. Only [`evaluate_stage`] sees the unlabeled set's
//! ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use transduct_core::detector::{fit_latent_detector, fit_vanilla_detector, score_batch};
use transduct_core::model::generate;
use transduct_core::prior::sample_positive;
use transduct_core::split::{make_novelty_split, make_synthetic_2d};
use transduct_core::training::EpochMetrics;
use transduct_core::{
    auroc, seeded_rng, ImageBatch, ImageStore, NoveltySplit, TrainingData, TransductModel, UnimodalPrior, VanillaModel,
};

use crate::checkpoint::{Checkpoint, TrainedNetworks};
use crate::config::{ExperimentConfig, Mode};
use crate::datasets::{resolve_data_root, Dataset};
use crate::error::{Error, IoContext, Result};
use crate::grid::{export_image_grid, grid_dims};
use crate::report::{
    artifact_name, phase_summary, read_last_epoch, read_scores_csv, split_manifest, write_metrics_csv, write_report,
    write_scores_csv, EpochSummary, EvalReport,
};

const DETECTOR_SALT: u64 = 0x6465_7465_6374;
const GRID_SALT: u64 = 0x6772_6964;
/// Tiles per grid side.
pub const GRID_SIDE: usize = 8;

/// Output paths of one seed.
#[derive(Clone, Debug)]
pub struct SeedPaths {
    dir: PathBuf,
    dataset: Dataset,
    class: u8,
    pi: f64,
    seed: u64,
    mode: Mode,
}

impl SeedPaths {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Self {
        let e = &config.experiment;
        SeedPaths {
            dir: e.output_dir.clone(),
            dataset: e.dataset,
            class: e.novel_class,
            pi: e.pi,
            seed,
            mode: e.mode,
        }
    }

    /// `kind` is prefixed with the mode so both methods can share a directory.
    pub fn file(&self, kind: &str, ext: &str) -> PathBuf {
        let kind = format!("{}_{kind}", self.mode.name());
        self.dir
            .join(artifact_name(self.dataset, self.class, self.pi, self.seed, &kind, ext))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.file("checkpoint", "ckpt")
    }

    pub fn metrics(&self) -> PathBuf {
        self.file("metrics", "csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.file("split", "txt")
    }

    pub fn scores(&self) -> PathBuf {
        self.file("scores", "csv")
    }

    pub fn report(&self) -> PathBuf {
        self.file("report", "json")
    }

    pub fn real_grid(&self) -> PathBuf {
        self.file("real_novel", "png")
    }

    pub fn fake_grid(&self) -> PathBuf {
        self.file("fake_novel", "png")
    }

    pub fn error(&self) -> PathBuf {
        self.file("error", "txt")
    }
}

/// Path of the configuration file written for a cell.
pub fn config_path(config: &ExperimentConfig) -> PathBuf {
    let e = &config.experiment;
    let name = format!(
        "{}_{}_{}_{}_config.toml",
        e.dataset.name(),
        e.novel_class,
        crate::report::format_pi(e.pi),
        e.mode.name()
    );
    e.output_dir.join(name)
}

/// Loads the labeled store an image experiment needs; `None` for synthetic data.
pub fn load_store(config: &ExperimentConfig) -> Result<Option<ImageStore>> {
    let dataset = config.experiment.dataset;
    if dataset == Dataset::Synthetic2d {
        return Ok(None);
    }
    let root = resolve_data_root(config.experiment.data_root.as_deref()).ok_or_else(|| {
        Error::Format(format!(
            "{} needs a data root: pass --data-root or set {}",
            dataset.name(),
            crate::datasets::DATA_ROOT_ENV
        ))
    })?;
    info!("loading {} from {}", dataset.name(), root.display());
    Ok(Some(dataset.load(&root)?))
}

pub fn build_split(config: &ExperimentConfig, seed: u64, store: Option<&ImageStore>) -> Result<NoveltySplit> {
    let e = &config.experiment;
    let split = match store {
        None => make_synthetic_2d(config.synthetic.n_negative, config.synthetic.n_unlabeled, e.pi, seed)?,
        Some(store) => make_novelty_split(store, e.novel_class, e.pi, seed)?,
    };
    Ok(split)
}

/// Trains one seed and writes its metrics and checkpoint(s).
pub fn train_stage(config: &ExperimentConfig, seed: u64, data: TrainingData<'_>) -> Result<Checkpoint> {
    let paths = SeedPaths::new(config, seed);
    let arch = config.arch();
    let train = config.train_config(seed);
    let every = config.experiment.checkpoint_every;
    let mut save_error = None;
    let (networks, metrics) = match config.experiment.mode {
        Mode::Transduct => {
            let prior = config.prior_config()?;
            let mut model = TransductModel::new(&arch, prior.clone(), train.clone())?;
            let metrics = model.train(data, &mut (), |m, nets| {
                log_epoch(seed, m);
                if every > 0 && m.epoch % every == 0 {
                    let ckpt = Checkpoint {
                        arch: arch.clone(),
                        train: train.clone(),
                        epoch: m.epoch,
                        networks: TrainedNetworks::Transduct {
                            nets: nets.clone(),
                            prior: prior.clone(),
                        },
                        detector: None,
                    };
                    if let Err(e) = ckpt.save(&paths.file(&format!("epoch{:04}", m.epoch), "ckpt")) {
                        save_error.get_or_insert(e);
                    }
                }
            })?;
            let nets = model.into_networks();
            (TrainedNetworks::Transduct { nets, prior }, metrics)
        }
        Mode::Vanilla => {
            let prior = UnimodalPrior::standard(arch.latent_dim);
            let mut model = VanillaModel::new(&arch, prior.clone(), train.clone())?;
            let metrics = model.train(data, &mut (), |m, nets| {
                log_epoch(seed, m);
                if every > 0 && m.epoch % every == 0 {
                    let ckpt = Checkpoint {
                        arch: arch.clone(),
                        train: train.clone(),
                        epoch: m.epoch,
                        networks: TrainedNetworks::Vanilla {
                            nets: nets.clone(),
                            prior: prior.clone(),
                        },
                        detector: None,
                    };
                    if let Err(e) = ckpt.save(&paths.file(&format!("epoch{:04}", m.epoch), "ckpt")) {
                        save_error.get_or_insert(e);
                    }
                }
            })?;
            (
                TrainedNetworks::Vanilla {
                    nets: model.into_networks(),
                    prior,
                },
                metrics,
            )
        }
    };
    if let Some(e) = save_error {
        return Err(e);
    }
    write_metrics_csv(&paths.metrics(), &metrics)?;
    let ckpt = Checkpoint {
        arch,
        train,
        epoch: metrics.len(),
        networks,
        detector: None,
    };
    ckpt.save(&paths.checkpoint())?;
    Ok(ckpt)
}

fn log_epoch(seed: u64, m: &EpochMetrics) {
    let parts: Vec<String> = phase_summary(m).iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
    info!("seed {seed} epoch {} {}", m.epoch, parts.join(" "));
    let bad = m.non_finite_iterations();
    if bad > 0 {
        warn!("seed {seed} epoch {}: {bad} iterations with non-finite losses", m.epoch);
    }
}

/// Fits the detector matching the checkpoint's model, stores it in the
/// checkpoint and returns novelty scores for `x_u`.
pub fn detect_stage(
    config: &ExperimentConfig,
    seed: u64,
    ckpt: &mut Checkpoint,
    data: TrainingData<'_>,
) -> Result<Vec<f64>> {
    let paths = SeedPaths::new(config, seed);
    let mut rng = seeded_rng(seed ^ DETECTOR_SALT);
    let det_cfg = config.detector_config();
    let (detector, scores) = match &ckpt.networks {
        TrainedNetworks::Transduct { nets, prior } => {
            let d = fit_latent_detector(nets, data.x_n, prior, &det_cfg, &mut rng)?;
            let s = score_batch(&d, Some(&nets.encoder), data.x_u)?;
            (d, s)
        }
        TrainedNetworks::Vanilla { nets, prior } => {
            let d = fit_vanilla_detector(&nets.generator, data.x_n, prior, &det_cfg, &mut rng)?;
            let s = score_batch(&d, None, data.x_u)?;
            (d, s)
        }
    };
    ckpt.detector = Some(detector);
    ckpt.save(&paths.checkpoint())?;
    write_scores_csv(&paths.scores(), &scores)?;
    Ok(scores)
}

/// Fake novelties: decoded positive-mode codes, or unimodal codes for the
/// vanilla model.
pub fn fake_novelties(ckpt: &Checkpoint, count: usize, seed: u64) -> Result<ImageBatch> {
    let mut rng = seeded_rng(seed ^ GRID_SALT);
    let z = match &ckpt.networks {
        TrainedNetworks::Transduct { prior, .. } => sample_positive(prior, count, &mut rng)?,
        TrainedNetworks::Vanilla { prior, .. } => prior.sample(count, &mut rng)?,
    };
    Ok(generate(ckpt.networks.generator(), &z)?)
}

/// Computes AUROC against the hidden labels and writes the report and the
/// real/fake novelty grids.
pub fn evaluate_stage(
    config: &ExperimentConfig,
    seed: u64,
    split: &NoveltySplit,
    scores: &[f64],
    ckpt: &Checkpoint,
    final_epoch: &EpochSummary,
) -> Result<EvalReport> {
    let paths = SeedPaths::new(config, seed);
    let labels = split.evaluation_labels().is_novel();
    let value = auroc(scores, labels)?;

    let x_u = split.training_data().x_u;
    let novel_idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut artifacts = vec![paths.checkpoint(), paths.scores()];
    if let Some((rows, cols)) = grid_dims(novel_idx.len(), GRID_SIDE) {
        let real = x_u.select(&novel_idx[..rows * cols]);
        export_image_grid(&real, rows, cols, &paths.real_grid())?;
        let fake = fake_novelties(ckpt, GRID_SIDE * GRID_SIDE, seed)?;
        export_image_grid(&fake, GRID_SIDE, GRID_SIDE, &paths.fake_grid())?;
        artifacts.push(paths.real_grid());
        artifacts.push(paths.fake_grid());
    }
    let report = EvalReport {
        dataset: config.experiment.dataset,
        novel_class: config.experiment.novel_class,
        mode: config.experiment.mode,
        pi_requested: split.pi_requested(),
        pi_actual: split.pi_actual(),
        seed,
        auroc: value,
        final_losses: final_epoch.losses.clone(),
        non_finite_iterations: final_epoch.non_finite_iterations,
        artifacts,
    };
    write_report(&paths.report(), &report)?;
    info!(
        "{} class {} pi {} seed {seed} {}: AUROC {value:.4}",
        report.dataset.name(),
        report.novel_class,
        report.pi_requested,
        report.mode.name()
    );
    Ok(report)
}

fn prepare_output(config: &ExperimentConfig) -> Result<()> {
    let dir = &config.experiment.output_dir;
    fs::create_dir_all(dir).at(dir)?;
    let path = config_path(config);
    fs::write(&path, config.to_toml()?).at(&path)
}

fn write_manifest(paths: &SeedPaths, split: &NoveltySplit) -> Result<()> {
    let path = paths.manifest();
    fs::write(&path, split_manifest(split)).at(&path)
}

/// All stages for one seed.
pub fn run_seed(config: &ExperimentConfig, seed: u64, store: Option<&ImageStore>) -> Result<EvalReport> {
    let paths = SeedPaths::new(config, seed);
    let split = build_split(config, seed, store)?;
    write_manifest(&paths, &split)?;
    let data = split.training_data();
    let mut ckpt = train_stage(config, seed, data)?;
    let scores = detect_stage(config, seed, &mut ckpt, data)?;
    let last = last_epoch_summary(config, seed)?;
    evaluate_stage(config, seed, &split, &scores, &ckpt, &last)
}

/// Outcome of a multi-seed run.
#[derive(Debug, Default)]
pub struct RunOutcome {
    pub reports: Vec<EvalReport>,
    pub failures: Vec<(u64, String)>,
}

impl RunOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs every seed of `config`; a failing seed is recorded and the rest
/// continue. The seeds that finish are aggregated into the cell's table.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    prepare_output(config)?;
    let store = load_store(config)?;
    let mut outcome = RunOutcome::default();
    for &seed in &config.experiment.seeds {
        match run_seed(config, seed, store.as_ref()) {
            Ok(r) => outcome.reports.push(r),
            Err(e) => record_failure(config, seed, e, &mut outcome),
        }
    }
    if !outcome.reports.is_empty() {
        crate::report::export_results_table(&outcome.reports, &cell_table_path(config))?;
    }
    Ok(outcome)
}

/// Aggregate table of a single (dataset, class, pi, mode) cell.
pub fn cell_table_path(config: &ExperimentConfig) -> PathBuf {
    let e = &config.experiment;
    let name = format!(
        "{}_{}_{}_{}_table.csv",
        e.dataset.name(),
        e.novel_class,
        crate::report::format_pi(e.pi),
        e.mode.name()
    );
    e.output_dir.join(name)
}

fn record_failure(config: &ExperimentConfig, seed: u64, e: Error, outcome: &mut RunOutcome) {
    let msg = e.to_string();
    warn!("seed {seed} failed: {msg}");
    let path = SeedPaths::new(config, seed).error();
    if let Err(io) = fs::write(&path, format!("{msg}\n")) {
        warn!("could not write {}: {io}", path.display());
    }
    outcome.failures.push((seed, msg));
}

/// Stage-wise entry points used by the command line.
pub mod stages {
    use super::*;

    pub fn train(config: &ExperimentConfig) -> Result<RunOutcome> {
        for_each_seed(config, |seed, store| {
            let paths = SeedPaths::new(config, seed);
            let split = build_split(config, seed, store)?;
            write_manifest(&paths, &split)?;
            train_stage(config, seed, split.training_data())?;
            Ok(None)
        })
    }

    pub fn detect(config: &ExperimentConfig) -> Result<RunOutcome> {
        for_each_seed(config, |seed, store| {
            let paths = SeedPaths::new(config, seed);
            let split = build_split(config, seed, store)?;
            let mut ckpt = Checkpoint::load_expecting(&paths.checkpoint(), &config.arch())?;
            detect_stage(config, seed, &mut ckpt, split.training_data())?;
            Ok(None)
        })
    }

    pub fn eval(config: &ExperimentConfig) -> Result<RunOutcome> {
        let outcome = for_each_seed(config, |seed, store| {
            let paths = SeedPaths::new(config, seed);
            let split = build_split(config, seed, store)?;
            let ckpt = Checkpoint::load_expecting(&paths.checkpoint(), &config.arch())?;
            let scores = read_scores_csv(&paths.scores())?;
            let last = last_epoch_summary(config, seed)?;
            Ok(Some(evaluate_stage(config, seed, &split, &scores, &ckpt, &last)?))
        })?;
        if !outcome.reports.is_empty() {
            crate::report::export_results_table(&outcome.reports, &cell_table_path(config))?;
        }
        Ok(outcome)
    }

    fn for_each_seed(
        config: &ExperimentConfig,
        mut f: impl FnMut(u64, Option<&ImageStore>) -> Result<Option<EvalReport>>,
    ) -> Result<RunOutcome> {
        config.validate()?;
        prepare_output(config)?;
        let store = load_store(config)?;
        let mut outcome = RunOutcome::default();
        for &seed in &config.experiment.seeds {
            match f(seed, store.as_ref()) {
                Ok(Some(r)) => outcome.reports.push(r),
                Ok(None) => {}
                Err(e) => record_failure(config, seed, e, &mut outcome),
            }
        }
        Ok(outcome)
    }
}

/// Final-epoch losses from the metrics CSV, so evaluation does not depend on
/// training having run in this process.
fn last_epoch_summary(config: &ExperimentConfig, seed: u64) -> Result<EpochSummary> {
    let path = SeedPaths::new(config, seed).metrics();
    if !path.exists() {
        warn!("{} is missing; the report will carry no losses", path.display());
        return Ok(EpochSummary::default());
    }
    read_last_epoch(&path)
}

/// Where the cell's artifacts go, for callers that only have the config.
pub fn output_dir(config: &ExperimentConfig) -> &Path {
    &config.experiment.output_dir
}

/// Path of the aggregated results table for a dataset.
pub fn table_path(dir: &Path, dataset: Dataset) -> PathBuf {
    dir.join(format!("{}_table.csv", dataset.name()))
}

/// Runs every (class, pi, mode) cell on top of `base` and writes the
/// aggregated table. Failed seeds are collected in the outcome; the table
/// covers the seeds that finished.
pub fn reproduce_table(
    base: &ExperimentConfig,
    classes: &[u8],
    pis: &[f64],
    modes: &[Mode],
) -> Result<(RunOutcome, Vec<crate::report::TableRow>)> {
    let mut outcome = RunOutcome::default();
    let store = load_store(base)?;
    for &class in classes {
        for &pi in pis {
            for &mode in modes {
                let mut cfg = base.clone();
                cfg.experiment.novel_class = class;
                cfg.experiment.pi = pi;
                cfg.experiment.mode = mode;
                cfg.validate()?;
                prepare_output(&cfg)?;
                for &seed in &cfg.experiment.seeds {
                    match run_seed(&cfg, seed, store.as_ref()) {
                        Ok(r) => outcome.reports.push(r),
                        Err(e) => record_failure(&cfg, seed, e, &mut outcome),
                    }
                }
            }
        }
    }
    let path = table_path(&base.experiment.output_dir, base.experiment.dataset);
    let rows = crate::report::export_results_table(&outcome.reports, &path)?;
    info!("wrote {}", path.display());
    Ok((outcome, rows))
}
