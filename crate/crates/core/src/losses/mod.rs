//! GAN objectives.
//!
//! Every loss is described by four scalar maps `(f1, f2, g1, g2)` applied to
//! critic outputs and combined by an [`Assembly`] rule:
//!
//! | assembly                  | critic loss                                 | generator loss                              |
//! |---------------------------|---------------------------------------------|---------------------------------------------|
//! | `Standard`                | `E f1(Cr) + E f2(Cf)`                       | `E g1(Cr) + E g2(Cf)`                       |
//! | `Relativistic`            | `E f1(Cr − Cf) + E f2(Cf − Cr)`             | `E g1(Cr − Cf) + E g2(Cf − Cr)`             |
//! | `RelativisticPaired`      | `E f1(Cr − Cf)`                             | `E f1(Cf − Cr)`                             |
//! | `RelativisticAverage`     | `E f1(Cr − mean Cf) + E f2(Cf − mean Cr)`   | `E g1(Cr − mean Cf) + E g2(Cf − mean Cr)`   |
//!
//! Relativistic pairs are formed index-wise (real `i` with fake `i`) and all
//! expectations are batch means.

mod oracle;
mod penalty;
mod zoo;

use thiserror::Error;

use crate::autodiff::{log_sigmoid, sigmoid, softplus, AutodiffError, Tape, Tensor, Var};
use crate::nn::NnError;

pub use oracle::{closed_form_gradients_oracle, OracleBatch, OracleKind};
pub use penalty::{gradient_penalty, interpolate, GpConfig};
pub use zoo::{named_loss, LossName, NamedLoss};

/// Largest batch accepted by [`loss_rad_pairwise_oracle`].
pub const PAIRWISE_ORACLE_MAX_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("unknown loss `{name}`; valid names: {valid}")]
    UnknownLoss { name: String, valid: String },
    #[error("loss `{0}` does not satisfy f2(-y) = f1(y)")]
    NotSymmetric(String),
    #[error("invalid loss spec `{name}`: {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error("invalid critic batch: {0}")]
    Batch(String),
    #[error("pairwise oracle is limited to batches of {max}, got {m}")]
    OracleTooLarge { m: usize, max: usize },
}

/// Scalar-to-scalar maps used to build objectives.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarFn {
    Zero,
    /// `y`
    Identity,
    /// `-y`
    Negate,
    /// `-log(sigmoid(y))`
    NegLogSigmoid,
    /// `-log(1 - sigmoid(y))`
    NegLogOneMinusSigmoid,
    /// `(y - target)²`
    Squared { target: f64 },
    /// `max(0, 1 - y)`
    HingeBelow,
    /// `max(0, 1 + y)`
    HingeAbove,
    /// `-f(y)`
    Neg(Box<ScalarFn>),
}

impl ScalarFn {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Identity => y,
            ScalarFn::Negate => -y,
            ScalarFn::NegLogSigmoid => -log_sigmoid(y),
            ScalarFn::NegLogOneMinusSigmoid => softplus(y),
            ScalarFn::Squared { target } => (y - target) * (y - target),
            ScalarFn::HingeBelow => (1.0 - y).max(0.0),
            ScalarFn::HingeAbove => (1.0 + y).max(0.0),
            ScalarFn::Neg(f) => -f.eval(y),
        }
    }

    /// Records `f` applied elementwise to `x`.
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        match self {
            ScalarFn::Zero => tape.scale(x, 0.0),
            ScalarFn::Identity => Ok(x),
            ScalarFn::Negate => tape.neg(x),
            ScalarFn::NegLogSigmoid => {
                let l = tape.log_sigmoid(x)?;
                tape.neg(l)
            }
            ScalarFn::NegLogOneMinusSigmoid => {
                // 1 - sigmoid(y) = sigmoid(-y)
                let n = tape.neg(x)?;
                let l = tape.log_sigmoid(n)?;
                tape.neg(l)
            }
            ScalarFn::Squared { target } => {
                let d = tape.shift(x, -target)?;
                tape.square(d)
            }
            ScalarFn::HingeBelow => {
                let n = tape.neg(x)?;
                let d = tape.shift(n, 1.0)?;
                tape.max0(d)
            }
            ScalarFn::HingeAbove => {
                let d = tape.shift(x, 1.0)?;
                tape.max0(d)
            }
            ScalarFn::Neg(f) => {
                let v = f.apply(tape, x)?;
                tape.neg(v)
            }
        }
    }

    pub fn negated(&self) -> ScalarFn {
        match self {
            ScalarFn::Neg(f) => (**f).clone(),
            ScalarFn::Identity => ScalarFn::Negate,
            ScalarFn::Negate => ScalarFn::Identity,
            ScalarFn::Zero => ScalarFn::Zero,
            f => ScalarFn::Neg(Box::new(f.clone())),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, ScalarFn::Zero)
    }
}

/// How the generator maps relate to the critic maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorMode {
    /// `g1 = f2`, `g2 = f1`.
    NonSaturating,
    /// `g1 = -f1`, `g2 = -f2`.
    Saturating,
    /// Generator maps given explicitly (e.g. terms the generator cannot affect are dropped).
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub name: String,
    pub f1: ScalarFn,
    pub f2: ScalarFn,
    pub g1: ScalarFn,
    pub g2: ScalarFn,
    /// `f2(-y) = f1(y)` for all `y`.
    pub symmetric: bool,
    pub mode: GeneratorMode,
}

impl LossSpec {
    /// Validates the flags against the maps.
    pub fn new(
        name: impl Into<String>,
        f1: ScalarFn,
        f2: ScalarFn,
        g1: ScalarFn,
        g2: ScalarFn,
        symmetric: bool,
        mode: GeneratorMode,
    ) -> Result<Self, LossError> {
        let spec = LossSpec {
            name: name.into(),
            f1,
            f2,
            g1,
            g2,
            symmetric,
            mode,
        };
        let invalid = |reason: &str| LossError::InvalidSpec {
            name: spec.name.clone(),
            reason: reason.into(),
        };
        if symmetric && !spec.check_symmetry() {
            return Err(invalid("symmetric flag set but f2(-y) != f1(y)"));
        }
        match mode {
            GeneratorMode::NonSaturating if spec.g1 != spec.f2 || spec.g2 != spec.f1 => {
                return Err(invalid("non-saturating requires g1 = f2 and g2 = f1"));
            }
            GeneratorMode::Saturating
                if spec.g1 != spec.f1.negated() || spec.g2 != spec.f2.negated() =>
            {
                return Err(invalid("saturating requires g1 = -f1 and g2 = -f2"));
            }
            _ => {}
        }
        Ok(spec)
    }

    /// Samples `y` on a grid over [-10, 10] and checks `f2(-y) = f1(y)` to 1e-12.
    pub fn check_symmetry(&self) -> bool {
        (0..=2000).all(|i| {
            let y = -10.0 + 0.01 * i as f64;
            (self.f2.eval(-y) - self.f1.eval(y)).abs() <= 1e-12
        })
    }

    /// Sigmoid cross-entropy maps, non-saturating; the family behind RSGAN and RaSGAN.
    pub fn sigmoid_family() -> Self {
        LossSpec::from_f("SGAN-family", ScalarFn::NegLogSigmoid, ScalarFn::NegLogOneMinusSigmoid)
            .expect("valid")
    }

    /// `f1(y) = -y`, `f2(y) = y`, non-saturating.
    pub fn ipm() -> Self {
        LossSpec::from_f("IPM", ScalarFn::Negate, ScalarFn::Identity).expect("valid")
    }

    /// Non-saturating spec from `(f1, f2)`, with the symmetry flag detected.
    pub fn from_f(name: &str, f1: ScalarFn, f2: ScalarFn) -> Result<Self, LossError> {
        let probe = LossSpec {
            name: name.into(),
            f1: f1.clone(),
            f2: f2.clone(),
            g1: f2.clone(),
            g2: f1.clone(),
            symmetric: false,
            mode: GeneratorMode::NonSaturating,
        };
        let symmetric = probe.check_symmetry();
        LossSpec::new(name, f1, f2.clone(), f2, probe.g2, symmetric, GeneratorMode::NonSaturating)
    }

    /// The same critic maps with the saturating generator `g = -f`.
    pub fn saturating(&self) -> Self {
        LossSpec {
            name: format!("{}-saturating", self.name),
            g1: self.f1.negated(),
            g2: self.f2.negated(),
            mode: GeneratorMode::Saturating,
            ..self.clone()
        }
    }
}

/// How critic outputs enter the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assembly {
    Standard,
    Relativistic,
    RelativisticPaired,
    RelativisticAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Discriminator,
    Generator,
}

/// Critic outputs on a real and a fake mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticBatch {
    c_real: Vec<f64>,
    c_fake: Vec<f64>,
}

impl CriticBatch {
    pub fn new(c_real: Vec<f64>, c_fake: Vec<f64>) -> Result<Self, LossError> {
        if c_real.is_empty() {
            return Err(LossError::Batch("empty batch".into()));
        }
        if c_real.len() != c_fake.len() {
            return Err(LossError::Batch(format!(
                "{} real and {} fake critic values",
                c_real.len(),
                c_fake.len()
            )));
        }
        if c_real.iter().chain(&c_fake).any(|v| !v.is_finite()) {
            return Err(LossError::Batch("non-finite critic value".into()));
        }
        Ok(CriticBatch { c_real, c_fake })
    }

    pub fn c_real(&self) -> &[f64] {
        &self.c_real
    }

    pub fn c_fake(&self) -> &[f64] {
        &self.c_fake
    }

    pub fn m(&self) -> usize {
        self.c_real.len()
    }

    fn record(&self, tape: &mut Tape) -> (Var, Var) {
        (
            tape.constant(Tensor::vector(self.c_real.clone())),
            tape.constant(Tensor::vector(self.c_fake.clone())),
        )
    }
}

fn mean_of(tape: &mut Tape, f: &ScalarFn, x: Var) -> Result<Option<Var>, AutodiffError> {
    if f.is_zero() {
        return Ok(None);
    }
    let v = f.apply(tape, x)?;
    Ok(Some(tape.mean(v)?))
}

fn add_terms(tape: &mut Tape, terms: [Option<Var>; 2]) -> Result<Var, AutodiffError> {
    match terms {
        [Some(a), Some(b)] => tape.add(a, b),
        [Some(a), None] | [None, Some(a)] => Ok(a),
        [None, None] => Ok(tape.constant(Tensor::scalar(0.0))),
    }
}

/// Differences `(Cr − x, Cf − y)` that feed `(f1|g1, f2|g2)` under `assembly`.
fn arguments(
    tape: &mut Tape,
    assembly: Assembly,
    c_real: Var,
    c_fake: Var,
) -> Result<(Var, Var), AutodiffError> {
    Ok(match assembly {
        Assembly::Standard => (c_real, c_fake),
        Assembly::Relativistic | Assembly::RelativisticPaired => {
            (tape.sub(c_real, c_fake)?, tape.sub(c_fake, c_real)?)
        }
        Assembly::RelativisticAverage => {
            let shape = tape.shape(c_real).to_vec();
            let mean_fake = tape.mean(c_fake)?;
            let mean_fake = tape.expand(mean_fake, &shape)?;
            let mean_real = tape.mean(c_real)?;
            let mean_real = tape.expand(mean_real, &shape)?;
            (tape.sub(c_real, mean_fake)?, tape.sub(c_fake, mean_real)?)
        }
    })
}

fn check_pairing(tape: &Tape, c_real: Var, c_fake: Var) -> Result<(), LossError> {
    let (r, f) = (tape.shape(c_real), tape.shape(c_fake));
    if r.len() != 1 || r != f || r[0] == 0 {
        return Err(LossError::Batch(format!("critic outputs must be equal-length vectors, got {r:?} and {f:?}")));
    }
    Ok(())
}

/// Records the critic (`Side::Discriminator`) or generator loss on the tape.
///
/// `c_real` and `c_fake` are `[m]` vectors of critic outputs.
pub fn record_loss(
    tape: &mut Tape,
    spec: &LossSpec,
    assembly: Assembly,
    side: Side,
    c_real: Var,
    c_fake: Var,
) -> Result<Var, LossError> {
    check_pairing(tape, c_real, c_fake)?;
    if assembly == Assembly::RelativisticPaired {
        if !spec.symmetric {
            return Err(LossError::NotSymmetric(spec.name.clone()));
        }
        let diff = match side {
            Side::Discriminator => tape.sub(c_real, c_fake)?,
            Side::Generator => tape.sub(c_fake, c_real)?,
        };
        let v = spec.f1.apply(tape, diff)?;
        return Ok(tape.mean(v)?);
    }
    let (a, b) = arguments(tape, assembly, c_real, c_fake)?;
    let (fa, fb) = match side {
        Side::Discriminator => (&spec.f1, &spec.f2),
        Side::Generator => (&spec.g1, &spec.g2),
    };
    let ta = mean_of(tape, fa, a)?;
    let tb = mean_of(tape, fb, b)?;
    Ok(add_terms(tape, [ta, tb])?)
}

fn evaluate(spec: &LossSpec, assembly: Assembly, side: Side, cb: &CriticBatch) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let (r, f) = cb.record(&mut tape);
    let v = record_loss(&mut tape, spec, assembly, side, r, f)?;
    Ok(tape.value(v).item())
}

/// `E[f1(Cr)] + E[f2(Cf)]`.
pub fn loss_standard_d(spec: &LossSpec, cb: &CriticBatch) -> Result<f64, LossError> {
    evaluate(spec, Assembly::Standard, Side::Discriminator, cb)
}

/// `E[g1(Cr)] + E[g2(Cf)]`.
pub fn loss_standard_g(spec: &LossSpec, cb: &CriticBatch) -> Result<f64, LossError> {
    evaluate(spec, Assembly::Standard, Side::Generator, cb)
}

/// `(L_D, L_G)` with index-wise relativistic pairing.
pub fn loss_relativistic(spec: &LossSpec, cb: &CriticBatch) -> Result<(f64, f64), LossError> {
    Ok((
        evaluate(spec, Assembly::Relativistic, Side::Discriminator, cb)?,
        evaluate(spec, Assembly::Relativistic, Side::Generator, cb)?,
    ))
}

/// `E[f1(Cr − Cf)]` (critic side) or `E[f1(Cf − Cr)]` (generator side).
/// Only defined for symmetric specs.
pub fn loss_relativistic_simplified(spec: &LossSpec, cb: &CriticBatch, side: Side) -> Result<f64, LossError> {
    evaluate(spec, Assembly::RelativisticPaired, side, cb)
}

/// `(L_D, L_G)` comparing each critic value with the mean of the opposite batch.
pub fn loss_relativistic_average(spec: &LossSpec, cb: &CriticBatch) -> Result<(f64, f64), LossError> {
    Ok((
        evaluate(spec, Assembly::RelativisticAverage, Side::Discriminator, cb)?,
        evaluate(spec, Assembly::RelativisticAverage, Side::Generator, cb)?,
    ))
}

/// Real and fake terms of the all-pairs averaged-sigmoid critic loss:
/// `-E_r log(mean_f σ(Cr − Cf))` and `-E_f log(1 − mean_r σ(Cf − Cr))`.
pub fn rad_pairwise_terms(cb: &CriticBatch) -> Result<(f64, f64), LossError> {
    let m = cb.m();
    if m > PAIRWISE_ORACLE_MAX_BATCH {
        return Err(LossError::OracleTooLarge {
            m,
            max: PAIRWISE_ORACLE_MAX_BATCH,
        });
    }
    let n = m as f64;
    let real_term = cb
        .c_real
        .iter()
        .map(|&r| -(cb.c_fake.iter().map(|&f| sigmoid(r - f)).sum::<f64>() / n).ln())
        .sum::<f64>()
        / n;
    // 1 − mean_r σ(Cf − Cr) = mean_r σ(Cr − Cf)
    let fake_term = cb
        .c_fake
        .iter()
        .map(|&f| -(cb.c_real.iter().map(|&r| sigmoid(r - f)).sum::<f64>() / n).ln())
        .sum::<f64>()
        / n;
    Ok((real_term, fake_term))
}

/// The O(m²) all-pairs critic loss; test-only, capped at
/// [`PAIRWISE_ORACLE_MAX_BATCH`] samples.
pub fn loss_rad_pairwise_oracle(cb: &CriticBatch) -> Result<f64, LossError> {
    let (a, b) = rad_pairwise_terms(cb)?;
    Ok(a + b)
}

/// `sigmoid(C(x_r))` and `sigmoid(C(x_r) − mean C(x_f))`.
pub fn absolute_and_relative_probability(c_real: f64, mean_fake: f64) -> (f64, f64) {
    (sigmoid(c_real), sigmoid(c_real - mean_fake))
}
