//! Alternating critic/generator training on toy mixtures.
//!
//! Each outer iteration runs `n_d` critic steps and one generator step. Every
//! step draws its own real and latent batches, so the critic and generator
//! phases of one iteration never share samples. Both objectives are
//! minimized.

use std::fmt::Write as _;
use std::io;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::data::{sample_latent, sample_real, stream_rng, LatentPrior, MixtureName, MixtureSpec, Stream};
use crate::losses::{gradient_penalty, named_loss, Assembly, GeneratorMode, GpConfig, LossError, LossName, NamedLoss};
use crate::metrics::{MetricsError, MetricsReport, Reference};
use crate::nn::{
    pack, read_checkpoint, write_checkpoint, Activation, BoundParams, CheckpointError, Mode, Network, NetworkSpec,
    NnError,
};
use crate::optim::{Adam, OptimError};

pub const RUNLOG_HEADER: &str = "iter,loss_d,loss_g,mean_c_real,mean_c_fake,jsd,modes,hq_frac,frechet,wall_ms";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: usize,
        reason: String,
        /// Networks as of the last metric interval, if one was reached.
        last_good: Option<Box<Checkpoint>>,
    },
    #[error("observer failed: {0}")]
    Observer(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossName,
    pub dataset: MixtureName,
    /// Mini-batch size `m`.
    pub batch_size: usize,
    pub n_d: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Gradient-penalty weight; only used by losses that carry a penalty.
    pub lambda: f64,
    /// Generator iterations.
    pub iterations: usize,
    pub metric_interval: usize,
    /// Generated and reference samples per metric evaluation.
    pub metric_samples: usize,
    pub seed: u64,
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub spectral_norm: bool,
    pub batch_norm: bool,
    /// Samples concatenated into one critic input.
    pub pack: usize,
    /// Whether run records carry elapsed wall time; off keeps logs reproducible byte for byte.
    pub record_wall_time: bool,
}

impl TrainConfig {
    /// Defaults for `loss`, with the optimizer preset that loss is usually trained with.
    pub fn new(loss: LossName, seed: u64) -> Self {
        let preset = named_loss(loss).default_preset();
        TrainConfig {
            loss,
            dataset: MixtureName::Ring8,
            batch_size: 64,
            n_d: preset.n_d,
            lr: preset.lr,
            beta1: preset.beta1,
            beta2: preset.beta2,
            lambda: 10.0,
            iterations: 20_000,
            metric_interval: 500,
            metric_samples: 10_000,
            seed,
            latent_dim: 8,
            generator_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            spectral_norm: false,
            batch_norm: false,
            pack: 1,
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.n_d < 1 {
            return fail("n_d must be at least 1".into());
        }
        if self.batch_size < 2 {
            return fail(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if self.iterations < 1 {
            return fail("iterations must be at least 1".into());
        }
        if self.metric_interval < 1 {
            return fail("metric interval must be at least 1".into());
        }
        if self.metric_samples < 1 {
            return fail("metric samples must be at least 1".into());
        }
        if self.latent_dim < 1 {
            return fail("latent dimension must be at least 1".into());
        }
        if self.pack < 1 || self.batch_size % self.pack != 0 {
            return fail(format!("pack {} must divide batch size {}", self.pack, self.batch_size));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return fail(format!("learning rate must be finite and >= 0, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        GpConfig::new(self.lambda).map_err(|e| TrainError::Config(e.to_string()))?;
        if self.generator_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return fail("hidden layer widths must be positive".into());
        }
        Ok(())
    }

    pub fn generator_spec(&self) -> NetworkSpec {
        NetworkSpec::mlp(
            self.latent_dim,
            &self.generator_hidden,
            2,
            Activation::Relu,
            self.batch_norm,
            false,
        )
    }

    pub fn critic_spec(&self) -> NetworkSpec {
        NetworkSpec::mlp(
            2 * self.pack,
            &self.critic_hidden,
            1,
            Activation::LeakyRelu(0.2),
            false,
            self.spectral_norm,
        )
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub iteration: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub mean_c_real: f64,
    pub mean_c_fake: f64,
    pub metrics: MetricsReport,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<RunRecord>,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RUNLOG_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.iteration,
                r.loss_d,
                r.loss_g,
                r.mean_c_real,
                r.mean_c_fake,
                r.metrics.jsd,
                r.metrics.modes,
                r.metrics.hq_fraction,
                r.metrics.frechet,
                r.wall_ms
            )
            .expect("write to string");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == RUNLOG_HEADER => {}
            other => return Err(format!("unexpected header {other:?}")),
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 10 {
                return Err(format!("line {lineno}: expected 10 fields, got {}", f.len()));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|e| format!("line {lineno}: {e}"));
            let int = |k: usize| f[k].parse::<u64>().map_err(|e| format!("line {lineno}: {e}"));
            records.push(RunRecord {
                iteration: int(0)? as usize,
                loss_d: num(1)?,
                loss_g: num(2)?,
                mean_c_real: num(3)?,
                mean_c_fake: num(4)?,
                metrics: MetricsReport {
                    jsd: num(5)?,
                    modes: int(6)? as usize,
                    hq_fraction: num(7)?,
                    frechet: num(8)?,
                },
                wall_ms: int(9)?,
            });
        }
        Ok(RunLog { records })
    }

    /// Record with the lowest JSD.
    pub fn best(&self) -> Option<&RunRecord> {
        self.records.iter().min_by(|a, b| a.metrics.jsd.total_cmp(&b.metrics.jsd))
    }
}

/// Generator and critic at a given iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub generator: Network,
    pub critic: Network,
}

impl Checkpoint {
    pub fn write<W: io::Write>(&self, out: W) -> io::Result<()> {
        let mut arrays = vec![crate::nn::NamedArray {
            name: "iteration".into(),
            tensor: Tensor::scalar(self.iteration as f64),
        }];
        arrays.extend(self.generator.to_named_arrays("generator."));
        arrays.extend(self.critic.to_named_arrays("critic."));
        write_checkpoint(out, &arrays)
    }

    /// Reads a checkpoint into networks shaped by `config`.
    pub fn read<R: io::BufRead>(input: R, config: &TrainConfig) -> Result<Self, TrainError> {
        let arrays = read_checkpoint(input)?;
        let iteration = arrays
            .iter()
            .find(|a| a.name == "iteration")
            .map(|a| a.tensor.data().first().copied().unwrap_or(0.0) as usize)
            .ok_or_else(|| NnError::MissingParam("iteration".into()))?;
        let mut generator = Network::init(&config.generator_spec(), 0)?;
        let mut critic = Network::init(&config.critic_spec(), 0)?;
        generator.load_named_arrays("generator.", &arrays)?;
        critic.load_named_arrays("critic.", &arrays)?;
        Ok(Checkpoint {
            iteration,
            generator,
            critic,
        })
    }
}

/// How many batches and updates a run has performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub real_batches: usize,
    pub latent_batches: usize,
    pub interpolation_batches: usize,
    pub critic_steps: usize,
    pub generator_steps: usize,
}

/// Values from the most recent critic and generator steps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub loss_d: f64,
    pub loss_g: f64,
    pub mean_c_real: f64,
    pub mean_c_fake: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: RunLog,
    pub final_checkpoint: Checkpoint,
    pub counters: Counters,
}

pub struct Trainer {
    config: TrainConfig,
    loss: NamedLoss,
    spec: MixtureSpec,
    prior: LatentPrior,
    generator: Network,
    critic: Network,
    opt_g: Adam,
    opt_d: Adam,
    rng: ChaCha8Rng,
    reference: Option<Reference>,
    metric_z: Option<Tensor>,
    last_samples: Option<Tensor>,
    iteration: usize,
    counters: Counters,
    stats: StepStats,
}

fn numeric(reason: impl std::fmt::Display, iteration: usize) -> TrainError {
    TrainError::Diverged {
        iteration,
        reason: reason.to_string(),
        last_good: None,
    }
}

fn is_numeric_autodiff(e: &AutodiffError) -> bool {
    matches!(e, AutodiffError::NonFinite { .. } | AutodiffError::Domain { .. })
}

fn classify(e: LossError, iteration: usize) -> TrainError {
    match e {
        LossError::Autodiff(ref a) if is_numeric_autodiff(a) => numeric(e, iteration),
        LossError::Network(NnError::Autodiff(ref a)) if is_numeric_autodiff(a) => numeric(e, iteration),
        LossError::Network(NnError::DegenerateLayer { .. }) => numeric(e, iteration),
        other => TrainError::Loss(other),
    }
}

fn classify_nn(e: NnError, iteration: usize) -> TrainError {
    classify(LossError::Network(e), iteration)
}

fn classify_optim(e: OptimError, iteration: usize) -> TrainError {
    match e {
        OptimError::NonFiniteGradient { .. } => numeric(e, iteration),
        other => TrainError::Config(other.to_string()),
    }
}

impl Trainer {
    /// Initializes networks from the run's init stream.
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let loss = named_loss(config.loss);
        let mut init = stream_rng(config.seed, Stream::Init);
        let generator = Network::init_with(&config.generator_spec(), &mut init)?;
        let critic = Network::init_with(&config.critic_spec(), &mut init)?;
        let opt_g = Adam::new(&generator.param_shapes(), config.lr, config.beta1, config.beta2);
        let opt_d = Adam::new(&critic.param_shapes(), config.lr, config.beta1, config.beta2);
        Ok(Trainer {
            spec: MixtureSpec::by_name(config.dataset),
            prior: LatentPrior { dim: config.latent_dim },
            rng: stream_rng(config.seed, Stream::Train),
            loss,
            generator,
            critic,
            opt_g,
            opt_d,
            reference: None,
            metric_z: None,
            last_samples: None,
            iteration: 0,
            counters: Counters::default(),
            stats: StepStats::default(),
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn loss(&self) -> &NamedLoss {
        &self.loss
    }

    pub fn generator(&self) -> &Network {
        &self.generator
    }

    pub fn critic(&self) -> &Network {
        &self.critic
    }

    pub fn generator_mut(&mut self) -> &mut Network {
        &mut self.generator
    }

    pub fn critic_mut(&mut self) -> &mut Network {
        &mut self.critic
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn stats(&self) -> StepStats {
        self.stats
    }

    /// Samples generated for the most recent metric evaluation.
    pub fn last_samples(&self) -> Option<&Tensor> {
        self.last_samples.as_ref()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            generator: self.generator.clone(),
            critic: self.critic.clone(),
        }
    }

    fn draw_real(&mut self) -> Tensor {
        self.counters.real_batches += 1;
        sample_real(&self.spec, self.config.batch_size, &mut self.rng)
    }

    fn draw_latent(&mut self) -> Tensor {
        self.counters.latent_batches += 1;
        sample_latent(&self.prior, self.config.batch_size, &mut self.rng)
    }

    /// Critic values of a `[m, 2]` batch as a `[m / pack]` vector.
    fn critic_values(
        critic: &mut Network,
        tape: &mut Tape,
        params: &BoundParams,
        x: Var,
        pack_k: usize,
    ) -> Result<Var, LossError> {
        let packed = pack(tape, x, pack_k)?;
        let c = critic.forward(tape, params, packed, Mode::Train)?;
        let n = tape.shape(c)[0];
        Ok(tape.reshape(c, &[n])?)
    }

    fn critic_step(&mut self) -> Result<(), TrainError> {
        let it = self.iteration + 1;
        if self.config.spectral_norm {
            self.critic.power_iterate(1).map_err(|e| classify_nn(e, it))?;
        }
        let x_real = self.draw_real();
        let z = self.draw_latent();
        let x_fake = self.generator.predict(&z, Mode::Train).map_err(|e| classify_nn(e, it))?;

        let k = self.config.pack;
        let mut tape = Tape::new();
        let params = self.critic.bind(&mut tape, true);
        let xr = tape.constant(x_real.clone());
        let xf = tape.constant(x_fake.clone());
        let run = |tape: &mut Tape, critic: &mut Network| -> Result<(Var, Var, Var), LossError> {
            let cr = Self::critic_values(critic, tape, &params, xr, k)?;
            let cf = Self::critic_values(critic, tape, &params, xf, k)?;
            let loss = self.loss.record_d(tape, cr, cf)?;
            Ok((cr, cf, loss))
        };
        let (cr, cf, mut total) = run(&mut tape, &mut self.critic).map_err(|e| classify(e, it))?;

        if self.loss.gradient_penalty {
            let rows = self.config.batch_size / k;
            let eps: Vec<f64> = (0..rows).map(|_| self.rng.random::<f64>()).collect();
            self.counters.interpolation_batches += 1;
            let packed_r = crate::nn::pack_tensor(&x_real, k)?;
            let packed_f = crate::nn::pack_tensor(&x_fake, k)?;
            let critic = &mut self.critic;
            let penalty = gradient_penalty(
                &mut tape,
                |t, x| Ok(critic.forward(t, &params, x, Mode::Train)?),
                &packed_r,
                &packed_f,
                &eps,
                &GpConfig { lambda: self.config.lambda },
            )
            .map_err(|e| classify(e, it))?;
            total = tape.add(total, penalty).map_err(|e| classify(e.into(), it))?;
        }

        let loss_d = tape.value(total).item();
        if !loss_d.is_finite() {
            return Err(numeric("non-finite critic loss", it));
        }
        let grads = tape
            .backward(total, params.vars())
            .map_err(|e| classify(e.into(), it))?
            .into_tensors();
        self.opt_d
            .step(&mut self.critic.params_mut(), &grads)
            .map_err(|e| classify_optim(e, it))?;
        self.counters.critic_steps += 1;
        self.stats.loss_d = loss_d;
        self.stats.mean_c_real = tape.value(cr).mean();
        self.stats.mean_c_fake = tape.value(cf).mean();
        Ok(())
    }

    fn generator_step(&mut self) -> Result<(), TrainError> {
        let it = self.iteration + 1;
        let x_real = if self.loss.is_relativistic() {
            Some(self.draw_real())
        } else {
            None
        };
        let z = self.draw_latent();

        let k = self.config.pack;
        let mut tape = Tape::new();
        let gparams = self.generator.bind(&mut tape, true);
        let cparams = self.critic.bind(&mut tape, false);
        let zv = tape.constant(z);
        let result = (|| -> Result<Var, LossError> {
            let xf = self.generator.forward(&mut tape, &gparams, zv, Mode::Train)?;
            let cf = Self::critic_values(&mut self.critic, &mut tape, &cparams, xf, k)?;
            let cr = match x_real {
                Some(x) => {
                    let xr = tape.constant(x);
                    Self::critic_values(&mut self.critic, &mut tape, &cparams, xr, k)?
                }
                // Standard generator losses have no real-data term.
                None => tape.constant(Tensor::zeros(tape.shape(cf))),
            };
            self.loss.record_g(&mut tape, cr, cf)
        })();
        let loss = result.map_err(|e| classify(e, it))?;
        let loss_g = tape.value(loss).item();
        if !loss_g.is_finite() {
            return Err(numeric("non-finite generator loss", it));
        }
        let grads = tape
            .backward(loss, gparams.vars())
            .map_err(|e| classify(e.into(), it))?
            .into_tensors();
        self.opt_g
            .step(&mut self.generator.params_mut(), &grads)
            .map_err(|e| classify_optim(e, it))?;
        self.counters.generator_steps += 1;
        self.stats.loss_g = loss_g;
        Ok(())
    }

    /// One outer iteration: `n_d` critic steps, then one generator step.
    pub fn step(&mut self) -> Result<StepStats, TrainError> {
        for _ in 0..self.config.n_d {
            self.critic_step()?;
        }
        self.generator_step()?;
        self.iteration += 1;
        Ok(self.stats)
    }

    /// Metrics of the current generator against a fixed reference sample.
    ///
    /// The reference and the latent batch are drawn once from the metrics
    /// stream, so they never perturb the training stream.
    pub fn evaluate(&mut self) -> Result<MetricsReport, TrainError> {
        if self.reference.is_none() {
            let mut rng = stream_rng(self.config.seed, Stream::Metrics);
            let real = sample_real(&self.spec, self.config.metric_samples, &mut rng);
            self.reference = Some(Reference::new(self.spec.clone(), &real)?);
            self.metric_z = Some(sample_latent(&self.prior, self.config.metric_samples, &mut rng));
        }
        let z = self.metric_z.as_ref().expect("drawn with the reference");
        let samples = self
            .generator
            .predict(z, Mode::Eval)
            .map_err(|e| classify_nn(e, self.iteration))?;
        if !samples.is_finite() {
            return Err(numeric("generator produced non-finite samples", self.iteration));
        }
        let report = self.reference.as_ref().expect("initialized").evaluate(&samples)?;
        self.last_samples = Some(samples);
        Ok(report)
    }

    /// Trains for the configured number of iterations, calling `observer`
    /// after each logged record.
    pub fn run<F>(mut self, mut observer: F) -> Result<TrainOutcome, TrainError>
    where
        F: FnMut(&RunRecord, &Trainer) -> Result<(), TrainError>,
    {
        let start = Instant::now();
        let mut log = RunLog::default();
        let mut last_good: Option<Checkpoint> = None;
        while self.iteration < self.config.iterations {
            let outcome = self.step().and_then(|stats| {
                let t = self.iteration;
                if t % self.config.metric_interval != 0 && t != self.config.iterations {
                    return Ok(None);
                }
                let metrics = self.evaluate()?;
                Ok(Some(RunRecord {
                    iteration: t,
                    loss_d: stats.loss_d,
                    loss_g: stats.loss_g,
                    mean_c_real: stats.mean_c_real,
                    mean_c_fake: stats.mean_c_fake,
                    metrics,
                    wall_ms: if self.config.record_wall_time {
                        start.elapsed().as_millis() as u64
                    } else {
                        0
                    },
                }))
            });
            match outcome {
                Ok(None) => {}
                Ok(Some(record)) => {
                    observer(&record, &self)?;
                    log.records.push(record);
                    last_good = Some(self.checkpoint());
                }
                Err(TrainError::Diverged { iteration, reason, .. }) => {
                    return Err(TrainError::Diverged {
                        iteration,
                        reason,
                        last_good: last_good.map(Box::new),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        Ok(TrainOutcome {
            log,
            final_checkpoint: self.checkpoint(),
            counters: self.counters,
        })
    }
}

fn require(loss: &NamedLoss, ok: bool, what: &str) -> Result<(), TrainError> {
    if ok {
        Ok(())
    } else {
        Err(TrainError::Config(format!("{} is not {what}", loss.name)))
    }
}

/// Relativistic training with index-wise pairing; needs a symmetric
/// non-saturating objective.
pub fn train_rgan<F>(config: TrainConfig, observer: F) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&RunRecord, &Trainer) -> Result<(), TrainError>,
{
    let loss = named_loss(config.loss);
    require(
        &loss,
        matches!(loss.assembly, Assembly::Relativistic | Assembly::RelativisticPaired),
        "a paired relativistic loss",
    )?;
    if !loss.spec.symmetric || loss.spec.mode != GeneratorMode::NonSaturating {
        return Err(TrainError::Loss(LossError::NotSymmetric(loss.name.to_string())));
    }
    Trainer::new(config)?.run(observer)
}

/// Relativistic-average training.
pub fn train_ragan<F>(config: TrainConfig, observer: F) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&RunRecord, &Trainer) -> Result<(), TrainError>,
{
    let loss = named_loss(config.loss);
    require(
        &loss,
        loss.assembly == Assembly::RelativisticAverage,
        "a relativistic-average loss",
    )?;
    Trainer::new(config)?.run(observer)
}

/// Non-relativistic training.
pub fn train_standard<F>(config: TrainConfig, observer: F) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&RunRecord, &Trainer) -> Result<(), TrainError>,
{
    let loss = named_loss(config.loss);
    require(&loss, loss.assembly == Assembly::Standard, "a standard loss")?;
    Trainer::new(config)?.run(observer)
}

/// Dispatches to the training routine matching the configured loss.
pub fn train<F>(config: TrainConfig, observer: F) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&RunRecord, &Trainer) -> Result<(), TrainError>,
{
    match named_loss(config.loss).assembly {
        Assembly::Standard => train_standard(config, observer),
        Assembly::Relativistic | Assembly::RelativisticPaired => train_rgan(config, observer),
        Assembly::RelativisticAverage => train_ragan(config, observer),
    }
}
