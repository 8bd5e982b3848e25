use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::optim::{AdamPreset, DCGAN_PRESET, WGAN_GP_PRESET};

use super::{record_loss, Assembly, CriticBatch, GeneratorMode, LossError, LossSpec, ScalarFn, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossName {
    Sgan,
    Rsgan,
    RaSgan,
    Lsgan,
    RaLsgan,
    HingeGan,
    RaHingeGan,
    WganGp,
    RsganGp,
    RaSganGp,
}

impl LossName {
    pub const ALL: [LossName; 10] = [
        LossName::Sgan,
        LossName::Rsgan,
        LossName::RaSgan,
        LossName::Lsgan,
        LossName::RaLsgan,
        LossName::HingeGan,
        LossName::RaHingeGan,
        LossName::WganGp,
        LossName::RsganGp,
        LossName::RaSganGp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossName::Sgan => "SGAN",
            LossName::Rsgan => "RSGAN",
            LossName::RaSgan => "RaSGAN",
            LossName::Lsgan => "LSGAN",
            LossName::RaLsgan => "RaLSGAN",
            LossName::HingeGan => "HingeGAN",
            LossName::RaHingeGan => "RaHingeGAN",
            LossName::WganGp => "WGAN-GP",
            LossName::RsganGp => "RSGAN-GP",
            LossName::RaSganGp => "RaSGAN-GP",
        }
    }

    pub fn valid_names() -> String {
        LossName::ALL.map(LossName::as_str).join(", ")
    }
}

impl fmt::Display for LossName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossName {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LossName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| LossError::UnknownLoss {
                name: s.to_string(),
                valid: LossName::valid_names(),
            })
    }
}

/// A registered objective: maps, assembly rule and whether the critic loss
/// carries a gradient penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedLoss {
    pub name: LossName,
    pub spec: LossSpec,
    pub assembly: Assembly,
    pub gradient_penalty: bool,
}

impl NamedLoss {
    /// Critic loss without the penalty term.
    pub fn record_d(&self, tape: &mut Tape, c_real: Var, c_fake: Var) -> Result<Var, LossError> {
        record_loss(tape, &self.spec, self.assembly, Side::Discriminator, c_real, c_fake)
    }

    pub fn record_g(&self, tape: &mut Tape, c_real: Var, c_fake: Var) -> Result<Var, LossError> {
        record_loss(tape, &self.spec, self.assembly, Side::Generator, c_real, c_fake)
    }

    /// `(L_D, L_G)` on fixed critic values, penalty excluded.
    pub fn losses(&self, cb: &CriticBatch) -> Result<(f64, f64), LossError> {
        let mut tape = Tape::new();
        let (r, f) = cb.record(&mut tape);
        let d = self.record_d(&mut tape, r, f)?;
        let g = self.record_g(&mut tape, r, f)?;
        Ok((tape.value(d).item(), tape.value(g).item()))
    }

    /// Whether the generator loss depends on real critic values.
    pub fn is_relativistic(&self) -> bool {
        self.assembly != Assembly::Standard
    }

    /// Optimizer settings used for this loss unless overridden.
    pub fn default_preset(&self) -> AdamPreset {
        if self.name == LossName::WganGp {
            WGAN_GP_PRESET
        } else {
            DCGAN_PRESET
        }
    }
}

fn explicit(name: &str, f1: ScalarFn, f2: ScalarFn, g1: ScalarFn, g2: ScalarFn) -> LossSpec {
    let symmetric = LossSpec {
        name: name.into(),
        f1: f1.clone(),
        f2: f2.clone(),
        g1: g1.clone(),
        g2: g2.clone(),
        symmetric: false,
        mode: GeneratorMode::Explicit,
    }
    .check_symmetry();
    LossSpec::new(name, f1, f2, g1, g2, symmetric, GeneratorMode::Explicit).expect("registry spec")
}

/// Looks up one of the ten registered objectives.
pub fn named_loss(name: LossName) -> NamedLoss {
    use ScalarFn::*;
    let label = name.as_str();
    let sigmoid = || LossSpec {
        name: label.into(),
        ..LossSpec::sigmoid_family()
    };
    let (spec, assembly, gradient_penalty) = match name {
        // The generator term on real data is dropped: it does not depend on G.
        LossName::Sgan => (
            explicit(label, NegLogSigmoid, NegLogOneMinusSigmoid, Zero, NegLogSigmoid),
            Assembly::Standard,
            false,
        ),
        LossName::Rsgan => (sigmoid(), Assembly::RelativisticPaired, false),
        LossName::RaSgan => (sigmoid(), Assembly::RelativisticAverage, false),
        LossName::Lsgan => (
            explicit(
                label,
                Squared { target: 0.0 },
                Squared { target: 1.0 },
                Zero,
                Squared { target: 0.0 },
            ),
            Assembly::Standard,
            false,
        ),
        LossName::RaLsgan => (
            LossSpec::from_f(label, Squared { target: 1.0 }, Squared { target: -1.0 }).expect("registry spec"),
            Assembly::RelativisticAverage,
            false,
        ),
        LossName::HingeGan => (
            explicit(label, HingeBelow, HingeAbove, Zero, Negate),
            Assembly::Standard,
            false,
        ),
        LossName::RaHingeGan => (
            LossSpec::from_f(label, HingeBelow, HingeAbove).expect("registry spec"),
            Assembly::RelativisticAverage,
            false,
        ),
        LossName::WganGp => (
            explicit(label, Negate, Identity, Zero, Negate),
            Assembly::Standard,
            true,
        ),
        LossName::RsganGp => (sigmoid(), Assembly::RelativisticPaired, true),
        LossName::RaSganGp => (sigmoid(), Assembly::RelativisticAverage, true),
    };
    NamedLoss {
        name,
        spec,
        assembly,
        gradient_penalty,
    }
}
