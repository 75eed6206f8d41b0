//! The transductive training procedure and its vanilla, image-only variant.
//!
//! One transductive iteration runs, in order:
//!
//! 1. a reconstruction step on an `X_u` batch (encoder and generator),
//! 2. a latent regularization step on `X_u` (encoder), then `n_critic`
//!    updates of `D_zu` against the mixture prior,
//! 3. and 4. the same two phases on `X_n`, with `D_zn` and the negative mode,
//! 5. one generator step against `D_Xu` on a contaminated batch `X_u'`, then
//!    `n_critic` updates of `D_Xu` with `X_u` batches as the real side,
//! 6. optionally, one generator step against `D_Xn` on decoded negative codes
//!    and `n_critic` updates of `D_Xn` with `X_n` as the real side.
//!
//! Every step builds a fresh graph, so no update ever reuses a forward pass
//! made before another network changed.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::batch::ImageBatch;
use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::losses::{critic_loss_graph, generator_loss_graph, reconstruction_graph, GpConfig};
use crate::model::{detached, generate, ArchConfig, Critic, Generator, NetRole, NetworkSet, Networks};
use crate::nn::Sequential;
use crate::optim::{Adam, AdamConfig};
use crate::prior::{
    check_contamination, sample_negative, sample_positive, sample_unlabeled, LatentBatch, PriorConfig, UnimodalPrior,
};
use crate::split::TrainingData;
use crate::tensor::Tensor;
use crate::{seeded_rng, SeededRng};

/// Consecutive iterations with a non-finite loss before training aborts.
pub const DIVERGENCE_PATIENCE: usize = 10;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    /// `m`.
    pub batch_size: usize,
    pub n_critic: usize,
    pub gp: GpConfig,
    /// Contamination rate used to build `X_u'`.
    pub pi: f64,
    pub epochs: usize,
    /// Defaults to one pass over `X_u`.
    pub iterations_per_epoch: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Also train negative generation against `D_Xn`.
    pub negative_branch: bool,
}

impl TrainConfig {
    pub fn new(batch_size: usize, pi: f64, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            batch_size,
            n_critic: 5,
            gp: GpConfig::default(),
            pi,
            epochs,
            iterations_per_epoch: None,
            adam: AdamConfig::default(),
            seed,
            negative_branch: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.n_critic == 0 {
            return bad("n_critic must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.iterations_per_epoch == Some(0) {
            return bad("iterations per epoch must be positive".into());
        }
        if !(self.gp.lambda >= 0.0 && self.gp.lambda.is_finite()) {
            return bad(format!("penalty weight must be non-negative, got {}", self.gp.lambda));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return bad(format!("invalid optimizer settings {a:?}"));
        }
        check_contamination(self.pi)?;
        fake_count(self.batch_size, self.pi)?;
        Ok(())
    }
}

/// `int(pi * m)`: the number of generated samples in a contaminated batch.
pub fn fake_count(batch_size: usize, pi: f64) -> Result<usize> {
    check_contamination(pi)?;
    let k = libm::floor(pi * batch_size as f64) as usize;
    if k == 0 {
        return Err(Error::ZeroFakeCount { batch_size, pi });
    }
    Ok(k)
}

/// A contaminated batch `X_u'`: generated positives followed by real negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedBatch {
    pub images: ImageBatch,
    pub fake_count: usize,
    pub fake_indices: Vec<usize>,
}

impl MixedBatch {
    pub fn real_count(&self) -> usize {
        self.images.count() - self.fake_count
    }
}

/// Codes for the fake part and pool indices for the real part of a mixed batch.
fn draw_mixture<R: Rng + ?Sized>(
    pool: &ImageBatch,
    m: usize,
    pi: f64,
    sample_codes: impl FnOnce(usize, &mut R) -> Result<LatentBatch>,
    rng: &mut R,
) -> Result<(LatentBatch, Vec<usize>)> {
    let k = fake_count(m, pi)?;
    let real = m - k;
    if pool.count() < real {
        return Err(Error::InsufficientPool {
            available: pool.count(),
            required: real,
        });
    }
    let z = sample_codes(k, rng)?;
    let idx = index::sample(rng, pool.count(), real).into_vec();
    Ok((z, idx))
}

fn assemble(g: &Generator, pool: &ImageBatch, z: &LatentBatch, idx: &[usize]) -> Result<MixedBatch> {
    let fake = generate(g, z)?;
    if fake.shape() != pool.shape() {
        return Err(shape_err(pool.shape(), fake.shape()));
    }
    let k = fake.count();
    let images = if idx.is_empty() {
        fake
    } else {
        ImageBatch::concat(&[&fake, &pool.select(idx)])?
    };
    Ok(MixedBatch {
        images,
        fake_count: k,
        fake_indices: (0..k).collect(),
    })
}

/// Builds `X_u'` from `int(pi * m)` decoded positive-prior codes and
/// `m - int(pi * m)` images drawn without replacement from `x_n_pool`.
pub fn build_contaminated_batch<R: Rng + ?Sized>(
    x_n_pool: &ImageBatch,
    g: &Generator,
    prior: &PriorConfig,
    m: usize,
    pi: f64,
    rng: &mut R,
) -> Result<MixedBatch> {
    let (z, idx) = draw_mixture(x_n_pool, m, pi, |k, r| sample_positive(prior, k, r), rng)?;
    assemble(g, x_n_pool, &z, &idx)
}

/// Same proportions as [`build_contaminated_batch`], with codes from a
/// single Gaussian.
pub fn build_vanilla_batch<R: Rng + ?Sized>(
    x_n_pool: &ImageBatch,
    g: &Generator,
    prior: &UnimodalPrior,
    m: usize,
    pi: f64,
    rng: &mut R,
) -> Result<MixedBatch> {
    let (z, idx) = draw_mixture(x_n_pool, m, pi, |k, r| prior.sample(k, r), rng)?;
    assemble(g, x_n_pool, &z, &idx)
}

/// A single optimizer step within an iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    ReconstructUnlabeled,
    RegularizeEncoderUnlabeled,
    CriticLatentUnlabeled,
    ReconstructNegative,
    RegularizeEncoderNegative,
    CriticLatentNegative,
    GenerateUnlabeled,
    CriticImageUnlabeled,
    GenerateNegative,
    CriticImageNegative,
}

impl Phase {
    pub const ALL: [Phase; 10] = [
        Phase::ReconstructUnlabeled,
        Phase::RegularizeEncoderUnlabeled,
        Phase::CriticLatentUnlabeled,
        Phase::ReconstructNegative,
        Phase::RegularizeEncoderNegative,
        Phase::CriticLatentNegative,
        Phase::GenerateUnlabeled,
        Phase::CriticImageUnlabeled,
        Phase::GenerateNegative,
        Phase::CriticImageNegative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::ReconstructUnlabeled => "rec_u",
            Phase::RegularizeEncoderUnlabeled => "reg_enc_u",
            Phase::CriticLatentUnlabeled => "critic_zu",
            Phase::ReconstructNegative => "rec_n",
            Phase::RegularizeEncoderNegative => "reg_enc_n",
            Phase::CriticLatentNegative => "critic_zn",
            Phase::GenerateUnlabeled => "adv_gen_u",
            Phase::CriticImageUnlabeled => "critic_xu",
            Phase::GenerateNegative => "adv_gen_n",
            Phase::CriticImageNegative => "critic_xn",
        }
    }

    /// The networks a step of this phase changes.
    pub fn updates(self) -> &'static [NetRole] {
        match self {
            Phase::ReconstructUnlabeled | Phase::ReconstructNegative => &[NetRole::Encoder, NetRole::Generator],
            Phase::RegularizeEncoderUnlabeled | Phase::RegularizeEncoderNegative => &[NetRole::Encoder],
            Phase::CriticLatentUnlabeled => &[NetRole::LatentCriticUnlabeled],
            Phase::CriticLatentNegative => &[NetRole::LatentCriticNegative],
            Phase::GenerateUnlabeled | Phase::GenerateNegative => &[NetRole::Generator],
            Phase::CriticImageUnlabeled => &[NetRole::ImageCriticUnlabeled],
            Phase::CriticImageNegative => &[NetRole::ImageCriticNegative],
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Called after every applied parameter update.
pub trait UpdateObserver {
    fn after_update(&mut self, phase: Phase, nets: &dyn Networks);
}

impl UpdateObserver for () {
    fn after_update(&mut self, _: Phase, _: &dyn Networks) {}
}

/// Losses of one iteration; critic phases report the mean over their updates.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    losses: [Option<f32>; 10],
    /// First phase whose loss or gradient was non-finite.
    pub non_finite: Option<Phase>,
}

impl IterationRecord {
    pub fn loss(&self, phase: Phase) -> Option<f32> {
        self.losses[phase.slot()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub records: Vec<IterationRecord>,
}

impl EpochMetrics {
    pub fn phase_mean(&self, phase: Phase) -> Option<f64> {
        let values: Vec<f64> = self
            .records
            .iter()
            .filter_map(|r| r.loss(phase))
            .map(f64::from)
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }

    pub fn non_finite_iterations(&self) -> usize {
        self.records.iter().filter(|r| r.non_finite.is_some()).count()
    }
}

/// Shuffled index stream that reshuffles after each full pass.
#[derive(Clone, Debug)]
struct BatchStream {
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    fn new(len: usize) -> Self {
        BatchStream {
            order: (0..len).collect(),
            pos: len,
        }
    }

    fn restart(&mut self) {
        self.pos = self.order.len();
    }

    fn next<R: Rng + ?Sized>(&mut self, m: usize, rng: &mut R) -> Vec<usize> {
        if self.pos + m > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + m].to_vec();
        self.pos += m;
        out
    }
}

#[derive(Clone, Debug)]
struct Streams {
    sizes: (usize, usize),
    /// Drives the once-per-iteration `X_u` batch; one pass per epoch.
    pass: BatchStream,
    unlabeled: BatchStream,
    negative: BatchStream,
}

/// Optimizer state, random source and bookkeeping shared by both procedures.
#[derive(Clone, Debug)]
struct Engine {
    config: TrainConfig,
    rng: SeededRng,
    optimizers: Vec<((Phase, NetRole), Adam)>,
    streams: Option<Streams>,
    iterations: u64,
    epochs: usize,
    non_finite_run: usize,
    losses: [Option<f32>; 10],
    non_finite: Option<Phase>,
}

impl Engine {
    fn new(config: TrainConfig, rng: SeededRng) -> Self {
        Engine {
            config,
            rng,
            optimizers: Vec::new(),
            streams: None,
            iterations: 0,
            epochs: 0,
            non_finite_run: 0,
            losses: [None; 10],
            non_finite: None,
        }
    }

    fn check_data(&mut self, data: TrainingData<'_>, shape: crate::ImageShape) -> Result<()> {
        for b in [data.x_n, data.x_u] {
            if b.shape() != shape {
                return Err(shape_err(shape, b.shape()));
            }
            if b.count() < self.config.batch_size {
                return Err(Error::InsufficientPool {
                    available: b.count(),
                    required: self.config.batch_size,
                });
            }
        }
        let sizes = (data.x_n.count(), data.x_u.count());
        if self.streams.as_ref().map(|s| s.sizes) != Some(sizes) {
            self.streams = Some(Streams {
                sizes,
                pass: BatchStream::new(sizes.1),
                unlabeled: BatchStream::new(sizes.1),
                negative: BatchStream::new(sizes.0),
            });
        }
        Ok(())
    }

    fn iterations_per_epoch(&self, data: TrainingData<'_>) -> usize {
        self.config
            .iterations_per_epoch
            .unwrap_or((data.x_u.count() / self.config.batch_size).max(1))
    }

    fn streams(&mut self) -> (&mut Streams, &mut SeededRng) {
        (self.streams.as_mut().expect("streams prepared"), &mut self.rng)
    }

    fn pass_batch(&mut self, x_u: &ImageBatch) -> Tensor {
        let m = self.config.batch_size;
        let (s, rng) = self.streams();
        x_u.select(&s.pass.next(m, rng)).to_tensor()
    }

    fn unlabeled_batch(&mut self, x_u: &ImageBatch) -> Tensor {
        let m = self.config.batch_size;
        let (s, rng) = self.streams();
        x_u.select(&s.unlabeled.next(m, rng)).to_tensor()
    }

    fn negative_batch(&mut self, x_n: &ImageBatch) -> Tensor {
        let m = self.config.batch_size;
        let (s, rng) = self.streams();
        x_n.select(&s.negative.next(m, rng)).to_tensor()
    }

    fn optimizer(&mut self, phase: Phase, role: NetRole) -> &mut Adam {
        let pos = match self.optimizers.iter().position(|(k, _)| *k == (phase, role)) {
            Some(p) => p,
            None => {
                self.optimizers.push(((phase, role), Adam::new(self.config.adam)));
                self.optimizers.len() - 1
            }
        };
        &mut self.optimizers[pos].1
    }

    fn begin_iteration(&mut self) {
        self.losses = [None; 10];
        self.non_finite = None;
    }

    /// Differentiates `loss` with respect to each target's parameters and
    /// applies one Adam step per target. Nothing is applied when the loss or
    /// any gradient is non-finite.
    fn apply(
        &mut self,
        nets: &mut dyn Networks,
        phase: Phase,
        g: &mut Graph,
        loss: Var,
        targets: &[(NetRole, &[Var])],
        observer: &mut dyn UpdateObserver,
    ) -> Option<f32> {
        let value = g.value(loss).item();
        let wrt: Vec<Var> = targets.iter().flat_map(|(_, v)| v.iter().copied()).collect();
        let grads = g.grad(loss, &wrt);
        if !value.is_finite() || grads.iter().any(|&v| !g.value(v).is_finite()) {
            self.non_finite.get_or_insert(phase);
            return None;
        }
        let mut offset = 0;
        for &(role, vars) in targets {
            let gs: Vec<&Tensor> = grads[offset..offset + vars.len()].iter().map(|&v| g.value(v)).collect();
            offset += vars.len();
            let opt = self.optimizer(phase, role);
            let net = nets.network_mut(role).expect("target network present");
            opt.step(net.params_mut(), &gs);
        }
        observer.after_update(phase, nets);
        Some(value)
    }

    fn record(&mut self, phase: Phase, values: &[Option<f32>]) {
        let ok: Vec<f32> = values.iter().filter_map(|v| *v).collect();
        self.losses[phase.slot()] = if ok.len() == values.len() && !ok.is_empty() {
            Some(ok.iter().sum::<f32>() / ok.len() as f32)
        } else {
            None
        };
    }

    fn end_iteration(&mut self) -> Result<IterationRecord> {
        self.iterations += 1;
        if let Some(phase) = self.non_finite {
            self.non_finite_run += 1;
            if self.non_finite_run >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged {
                    iterations: self.non_finite_run,
                    phase: phase.name(),
                });
            }
        } else {
            self.non_finite_run = 0;
        }
        Ok(IterationRecord {
            iteration: self.iterations,
            losses: self.losses,
            non_finite: self.non_finite,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn critic_step<N: Networks + GeneratorAccess>(
    engine: &mut Engine,
    nets: &mut N,
    phase: Phase,
    role: NetRole,
    fake: &Tensor,
    real: &Tensor,
    observer: &mut dyn UpdateObserver,
) -> Option<f32> {
    let mut g = Graph::new();
    let critic = nets.critic(role);
    let params = critic.net().bind(&mut g);
    let gp = engine.config.gp;
    let loss = critic_loss_graph(&mut g, critic, &params, fake, real, gp, &mut engine.rng);
    engine.apply(nets, phase, &mut g, loss, &[(role, &params)], observer)
}

fn bind_pair(g: &mut Graph, a: &Sequential, b: &Sequential) -> (Vec<Var>, Vec<Var>) {
    (a.bind(g), b.bind(g))
}

/// The transductive model: all six networks, the bimodal prior and the
/// training state.
#[derive(Clone, Debug)]
pub struct TransductModel {
    nets: NetworkSet,
    prior: PriorConfig,
    engine: Engine,
}

impl TransductModel {
    /// Initializes all networks from `config.seed`.
    pub fn new(arch: &ArchConfig, prior: PriorConfig, config: TrainConfig) -> Result<Self> {
        let mut rng = seeded_rng(config.seed);
        let nets = NetworkSet::new(arch, config.negative_branch, &mut rng)?;
        Self::assemble(nets, prior, config, rng)
    }

    /// Continues from existing networks; optimizer state starts fresh.
    pub fn from_networks(nets: NetworkSet, prior: PriorConfig, config: TrainConfig) -> Result<Self> {
        let rng = seeded_rng(config.seed);
        Self::assemble(nets, prior, config, rng)
    }

    fn assemble(nets: NetworkSet, prior: PriorConfig, config: TrainConfig, rng: SeededRng) -> Result<Self> {
        config.validate()?;
        prior.validate()?;
        if prior.latent_dim != nets.encoder.latent_dim() {
            return Err(shape_err(nets.encoder.latent_dim(), prior.latent_dim));
        }
        if prior.contamination != config.pi {
            return Err(Error::InvalidConfig(format!(
                "prior contamination {} differs from training contamination {}",
                prior.contamination, config.pi
            )));
        }
        if config.negative_branch != nets.d_xn.is_some() {
            return Err(Error::InvalidConfig(
                "negative branch setting does not match the network set".into(),
            ));
        }
        Ok(TransductModel {
            nets,
            prior,
            engine: Engine::new(config, rng),
        })
    }

    pub fn networks(&self) -> &NetworkSet {
        &self.nets
    }

    pub fn into_networks(self) -> NetworkSet {
        self.nets
    }

    pub fn prior(&self) -> &PriorConfig {
        &self.prior
    }

    pub fn config(&self) -> &TrainConfig {
        &self.engine.config
    }

    pub fn iterations(&self) -> u64 {
        self.engine.iterations
    }

    /// Runs one iteration of all phases.
    pub fn iteration(&mut self, data: TrainingData<'_>, observer: &mut dyn UpdateObserver) -> Result<IterationRecord> {
        self.engine.check_data(data, self.nets.encoder.input_shape())?;
        self.run_iteration(data, observer)
    }

    /// Runs one epoch.
    pub fn epoch(&mut self, data: TrainingData<'_>, observer: &mut dyn UpdateObserver) -> Result<EpochMetrics> {
        self.engine.check_data(data, self.nets.encoder.input_shape())?;
        if let Some(s) = self.engine.streams.as_mut() {
            s.pass.restart();
        }
        let n = self.engine.iterations_per_epoch(data);
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            records.push(self.run_iteration(data, observer)?);
        }
        self.engine.epochs += 1;
        Ok(EpochMetrics {
            epoch: self.engine.epochs,
            records,
        })
    }

    /// Runs the configured number of epochs, reporting each as it finishes.
    pub fn train(
        &mut self,
        data: TrainingData<'_>,
        observer: &mut dyn UpdateObserver,
        mut on_epoch: impl FnMut(&EpochMetrics, &NetworkSet),
    ) -> Result<Vec<EpochMetrics>> {
        let mut all = Vec::with_capacity(self.engine.config.epochs);
        for _ in 0..self.engine.config.epochs {
            let metrics = self.epoch(data, observer)?;
            on_epoch(&metrics, &self.nets);
            all.push(metrics);
        }
        Ok(all)
    }

    fn run_iteration(&mut self, data: TrainingData<'_>, obs: &mut dyn UpdateObserver) -> Result<IterationRecord> {
        self.engine.begin_iteration();
        let n_critic = self.engine.config.n_critic;
        let m = self.engine.config.batch_size;

        // (1), (2): X_u against the mixture prior
        let x = self.engine.pass_batch(data.x_u);
        self.reconstruct(Phase::ReconstructUnlabeled, x, obs);
        let x = self.engine.unlabeled_batch(data.x_u);
        self.regularize(
            Phase::RegularizeEncoderUnlabeled,
            NetRole::LatentCriticUnlabeled,
            x,
            obs,
        );
        let mut losses = Vec::with_capacity(n_critic);
        for _ in 0..n_critic {
            let x = self.engine.unlabeled_batch(data.x_u);
            let fake = detached(self.nets.encoder.net(), &x)?;
            let real = sample_unlabeled(&self.prior, m, &mut self.engine.rng)?.into_codes();
            losses.push(critic_step(
                &mut self.engine,
                &mut self.nets,
                Phase::CriticLatentUnlabeled,
                NetRole::LatentCriticUnlabeled,
                &fake,
                &real,
                obs,
            ));
        }
        self.engine.record(Phase::CriticLatentUnlabeled, &losses);

        // (3), (4): X_n against the negative mode
        let x = self.engine.negative_batch(data.x_n);
        self.reconstruct(Phase::ReconstructNegative, x, obs);
        let x = self.engine.negative_batch(data.x_n);
        self.regularize(Phase::RegularizeEncoderNegative, NetRole::LatentCriticNegative, x, obs);
        losses.clear();
        for _ in 0..n_critic {
            let x = self.engine.negative_batch(data.x_n);
            let fake = detached(self.nets.encoder.net(), &x)?;
            let real = sample_negative(&self.prior, m, &mut self.engine.rng)?.into_codes();
            losses.push(critic_step(
                &mut self.engine,
                &mut self.nets,
                Phase::CriticLatentNegative,
                NetRole::LatentCriticNegative,
                &fake,
                &real,
                obs,
            ));
        }
        self.engine.record(Phase::CriticLatentNegative, &losses);

        // (5): contaminated batches against D_Xu
        let prior = &self.prior;
        let (z, idx) = draw_mixture(
            data.x_n,
            m,
            self.engine.config.pi,
            |k, r| sample_positive(prior, k, r),
            &mut self.engine.rng,
        )?;
        let real = data.x_n.select(&idx).to_tensor();
        let loss = mixed_generator_step(
            &mut self.engine,
            &mut self.nets,
            Phase::GenerateUnlabeled,
            NetRole::ImageCriticUnlabeled,
            z.codes(),
            &real,
            obs,
        );
        self.engine.record(Phase::GenerateUnlabeled, &[loss]);
        losses.clear();
        for _ in 0..n_critic {
            let mixed = build_contaminated_batch(
                data.x_n,
                &self.nets.generator,
                &self.prior,
                m,
                self.engine.config.pi,
                &mut self.engine.rng,
            )?;
            let real = self.engine.unlabeled_batch(data.x_u);
            losses.push(critic_step(
                &mut self.engine,
                &mut self.nets,
                Phase::CriticImageUnlabeled,
                NetRole::ImageCriticUnlabeled,
                &mixed.images.to_tensor(),
                &real,
                obs,
            ));
        }
        self.engine.record(Phase::CriticImageUnlabeled, &losses);

        // (6): optional negative generation against D_Xn
        if self.nets.d_xn.is_some() {
            let z = sample_negative(&self.prior, m, &mut self.engine.rng)?;
            let loss = mixed_generator_step(
                &mut self.engine,
                &mut self.nets,
                Phase::GenerateNegative,
                NetRole::ImageCriticNegative,
                z.codes(),
                &Tensor::zeros(&[0]),
                obs,
            );
            self.engine.record(Phase::GenerateNegative, &[loss]);
            losses.clear();
            for _ in 0..n_critic {
                let z = sample_negative(&self.prior, m, &mut self.engine.rng)?;
                let fake = detached(self.nets.generator.net(), z.codes())?;
                let real = self.engine.negative_batch(data.x_n);
                losses.push(critic_step(
                    &mut self.engine,
                    &mut self.nets,
                    Phase::CriticImageNegative,
                    NetRole::ImageCriticNegative,
                    &fake,
                    &real,
                    obs,
                ));
            }
            self.engine.record(Phase::CriticImageNegative, &losses);
        }

        self.engine.end_iteration()
    }

    fn reconstruct(&mut self, phase: Phase, x: Tensor, obs: &mut dyn UpdateObserver) {
        let mut g = Graph::new();
        let (ev, gv) = bind_pair(&mut g, self.nets.encoder.net(), self.nets.generator.net());
        let xv = g.leaf(x);
        let z = self.nets.encoder.net().forward(&mut g, &ev, xv);
        let x_hat = self.nets.generator.net().forward(&mut g, &gv, z);
        let loss = reconstruction_graph(&mut g, xv, x_hat);
        let targets: [(NetRole, &[Var]); 2] = [(NetRole::Encoder, &ev), (NetRole::Generator, &gv)];
        let value = self.engine.apply(&mut self.nets, phase, &mut g, loss, &targets, obs);
        self.engine.record(phase, &[value]);
    }

    fn regularize(&mut self, phase: Phase, critic_role: NetRole, x: Tensor, obs: &mut dyn UpdateObserver) {
        let critic = match critic_role {
            NetRole::LatentCriticNegative => &self.nets.d_zn,
            _ => &self.nets.d_zu,
        };
        let mut g = Graph::new();
        let (ev, dv) = bind_pair(&mut g, self.nets.encoder.net(), critic.net());
        let xv = g.leaf(x);
        let z = self.nets.encoder.net().forward(&mut g, &ev, xv);
        let loss = generator_loss_graph(&mut g, critic, &dv, z);
        let value = self
            .engine
            .apply(&mut self.nets, phase, &mut g, loss, &[(NetRole::Encoder, &ev)], obs);
        self.engine.record(phase, &[value]);
    }
}

/// One generator step minimizing `-mean D(concat(G(z), real))`; `real` may
/// have zero rows.
fn mixed_generator_step<N: Networks + GeneratorAccess>(
    engine: &mut Engine,
    nets: &mut N,
    phase: Phase,
    critic_role: NetRole,
    z: &Tensor,
    real: &Tensor,
    obs: &mut dyn UpdateObserver,
) -> Option<f32> {
    let mut g = Graph::new();
    let generator = nets.generator_net();
    let critic = nets.critic(critic_role);
    let (gv, dv) = bind_pair(&mut g, generator, critic.net());
    let zv = g.leaf(z.clone());
    let fake = generator.forward(&mut g, &gv, zv);
    let input = if real.is_empty() {
        fake
    } else {
        let rv = g.leaf(real.clone());
        g.concat(&[fake, rv])
    };
    let loss = generator_loss_graph(&mut g, critic, &dv, input);
    engine.apply(nets, phase, &mut g, loss, &[(NetRole::Generator, &gv)], obs)
}

/// Generator and critic lookup shared by both models.
trait GeneratorAccess {
    fn generator_net(&self) -> &Sequential;
    fn critic(&self, role: NetRole) -> &Critic;
}

impl GeneratorAccess for NetworkSet {
    fn generator_net(&self) -> &Sequential {
        self.generator.net()
    }

    fn critic(&self, role: NetRole) -> &Critic {
        match role {
            NetRole::LatentCriticUnlabeled => &self.d_zu,
            NetRole::LatentCriticNegative => &self.d_zn,
            NetRole::ImageCriticNegative => self.d_xn.as_ref().expect("negative branch enabled"),
            _ => &self.d_xu,
        }
    }
}

/// Generator and image critic of the vanilla model.
#[derive(Clone, Debug, PartialEq)]
pub struct VanillaNetworks {
    pub generator: Generator,
    pub d_xu: Critic,
}

impl Networks for VanillaNetworks {
    fn network(&self, role: NetRole) -> Option<&Sequential> {
        match role {
            NetRole::Generator => Some(self.generator.net()),
            NetRole::ImageCriticUnlabeled => Some(self.d_xu.net()),
            _ => None,
        }
    }

    fn network_mut(&mut self, role: NetRole) -> Option<&mut Sequential> {
        match role {
            NetRole::Generator => Some(self.generator.net_mut()),
            NetRole::ImageCriticUnlabeled => Some(self.d_xu.net_mut()),
            _ => None,
        }
    }
}

impl GeneratorAccess for VanillaNetworks {
    fn generator_net(&self) -> &Sequential {
        self.generator.net()
    }

    fn critic(&self, _: NetRole) -> &Critic {
        &self.d_xu
    }
}

/// The image-only baseline: a generator fed by one Gaussian, trained
/// against `D_Xu` on contaminated batches.
#[derive(Clone, Debug)]
pub struct VanillaModel {
    nets: VanillaNetworks,
    prior: UnimodalPrior,
    engine: Engine,
}

impl VanillaModel {
    pub fn new(arch: &ArchConfig, prior: UnimodalPrior, config: TrainConfig) -> Result<Self> {
        let mut rng = seeded_rng(config.seed);
        let generator = Generator::new(arch, &mut rng)?;
        let d_xu = Critic::image(arch, &mut rng)?;
        Self::from_networks(VanillaNetworks { generator, d_xu }, prior, config, rng)
    }

    fn from_networks(nets: VanillaNetworks, prior: UnimodalPrior, config: TrainConfig, rng: SeededRng) -> Result<Self> {
        config.validate()?;
        if prior.latent_dim() != nets.generator.latent_dim() {
            return Err(shape_err(nets.generator.latent_dim(), prior.latent_dim()));
        }
        Ok(VanillaModel {
            nets,
            prior,
            engine: Engine::new(config, rng),
        })
    }

    /// Continues from existing networks; optimizer state starts fresh.
    pub fn resume(nets: VanillaNetworks, prior: UnimodalPrior, config: TrainConfig) -> Result<Self> {
        let rng = seeded_rng(config.seed);
        Self::from_networks(nets, prior, config, rng)
    }

    pub fn networks(&self) -> &VanillaNetworks {
        &self.nets
    }

    pub fn into_networks(self) -> VanillaNetworks {
        self.nets
    }

    pub fn prior(&self) -> &UnimodalPrior {
        &self.prior
    }

    pub fn config(&self) -> &TrainConfig {
        &self.engine.config
    }

    pub fn iteration(&mut self, data: TrainingData<'_>, observer: &mut dyn UpdateObserver) -> Result<IterationRecord> {
        self.engine.check_data(data, self.nets.generator.output_shape())?;
        self.run_iteration(data, observer)
    }

    pub fn epoch(&mut self, data: TrainingData<'_>, observer: &mut dyn UpdateObserver) -> Result<EpochMetrics> {
        self.engine.check_data(data, self.nets.generator.output_shape())?;
        let n = self.engine.iterations_per_epoch(data);
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            records.push(self.run_iteration(data, observer)?);
        }
        self.engine.epochs += 1;
        Ok(EpochMetrics {
            epoch: self.engine.epochs,
            records,
        })
    }

    pub fn train(
        &mut self,
        data: TrainingData<'_>,
        observer: &mut dyn UpdateObserver,
        mut on_epoch: impl FnMut(&EpochMetrics, &VanillaNetworks),
    ) -> Result<Vec<EpochMetrics>> {
        let mut all = Vec::with_capacity(self.engine.config.epochs);
        for _ in 0..self.engine.config.epochs {
            let metrics = self.epoch(data, observer)?;
            on_epoch(&metrics, &self.nets);
            all.push(metrics);
        }
        Ok(all)
    }

    fn run_iteration(&mut self, data: TrainingData<'_>, obs: &mut dyn UpdateObserver) -> Result<IterationRecord> {
        self.engine.begin_iteration();
        let m = self.engine.config.batch_size;
        let pi = self.engine.config.pi;
        let prior = &self.prior;
        let (z, idx) = draw_mixture(data.x_n, m, pi, |k, r| prior.sample(k, r), &mut self.engine.rng)?;
        let real = data.x_n.select(&idx).to_tensor();
        let loss = mixed_generator_step(
            &mut self.engine,
            &mut self.nets,
            Phase::GenerateUnlabeled,
            NetRole::ImageCriticUnlabeled,
            z.codes(),
            &real,
            obs,
        );
        self.engine.record(Phase::GenerateUnlabeled, &[loss]);
        let mut losses = Vec::with_capacity(self.engine.config.n_critic);
        for _ in 0..self.engine.config.n_critic {
            let mixed = build_vanilla_batch(data.x_n, &self.nets.generator, &self.prior, m, pi, &mut self.engine.rng)?;
            let real = self.engine.unlabeled_batch(data.x_u);
            losses.push(critic_step(
                &mut self.engine,
                &mut self.nets,
                Phase::CriticImageUnlabeled,
                NetRole::ImageCriticUnlabeled,
                &mixed.images.to_tensor(),
                &real,
                obs,
            ));
        }
        self.engine.record(Phase::CriticImageUnlabeled, &losses);
        self.engine.end_iteration()
    }
}

/// One transductive epoch.
pub fn transduct_epoch(model: &mut TransductModel, data: TrainingData<'_>) -> Result<EpochMetrics> {
    model.epoch(data, &mut ())
}

/// One vanilla epoch.
pub fn vanilla_epoch(model: &mut VanillaModel, data: TrainingData<'_>) -> Result<EpochMetrics> {
    model.epoch(data, &mut ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::ImageShape;

    fn pool(count: usize) -> ImageBatch {
        let shape = ImageShape::new(1, 1, 2);
        ImageBatch::new(shape, (0..count * 2).map(|i| i as f32).collect()).unwrap()
    }

    fn generator() -> Generator {
        Generator::new(&ArchConfig::synthetic_2d(), &mut seeded_rng(0)).unwrap()
    }

    #[test]
    fn fake_counts() {
        assert_eq!(fake_count(64, 0.10).unwrap(), 6);
        assert_eq!(fake_count(10, 0.30).unwrap(), 3);
        assert!(matches!(fake_count(10, 0.05), Err(Error::ZeroFakeCount { .. })));
        assert_eq!(fake_count(10, 1.0).unwrap(), 10);
        assert!(fake_count(10, 0.0).is_err());
    }

    #[test]
    fn mixed_batch_layout() {
        let prior = PriorConfig::default_for(2, 0.10).unwrap();
        let x_n = pool(100);
        let b = build_contaminated_batch(&x_n, &generator(), &prior, 64, 0.10, &mut seeded_rng(1)).unwrap();
        assert_eq!(b.images.count(), 64);
        assert_eq!(b.fake_count, 6);
        assert_eq!(b.real_count(), 58);
        assert_eq!(b.fake_indices, (0..6).collect::<Vec<_>>());
        // real rows are distinct pool rows
        let mut seen: Vec<f32> = (6..64).map(|i| b.images.sample(i)[0]).collect();
        seen.sort_by(f32::total_cmp);
        seen.dedup();
        assert_eq!(seen.len(), 58);
        assert!(seen.iter().all(|v| v.fract() == 0.0 && *v as usize % 2 == 0));
    }

    #[test]
    fn mixed_batch_errors() {
        let prior = PriorConfig::default_for(2, 0.05).unwrap();
        let g = generator();
        let mut rng = seeded_rng(2);
        assert!(matches!(
            build_contaminated_batch(&pool(100), &g, &prior, 10, 0.05, &mut rng),
            Err(Error::ZeroFakeCount { .. })
        ));
        assert!(matches!(
            build_contaminated_batch(&pool(5), &g, &prior, 10, 0.30, &mut rng),
            Err(Error::InsufficientPool {
                available: 5,
                required: 7
            })
        ));
    }

    #[test]
    fn vanilla_batch_shares_proportions() {
        let b = build_vanilla_batch(
            &pool(20),
            &generator(),
            &UnimodalPrior::standard(2),
            10,
            0.30,
            &mut seeded_rng(3),
        )
        .unwrap();
        assert_eq!((b.fake_count, b.real_count()), (3, 7));
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::new(10, 0.3, 1, 0);
        assert!(cfg.validate().is_ok());
        cfg.pi = 0.05;
        assert!(cfg.validate().is_err());
        cfg.pi = 0.3;
        cfg.n_critic = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn batch_stream_covers_every_index_per_pass() {
        let mut s = BatchStream::new(10);
        let mut rng = seeded_rng(4);
        let mut seen: Vec<usize> = (0..5).flat_map(|_| s.next(2, &mut rng)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }
}
