//! Gradient verification: finite differences for every registered loss and
//! the closed-form SGAN/IPM gradients against autodiff.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Tensor, Var};
use crate::losses::{
    closed_form_gradients_oracle, gradient_penalty, named_loss, GpConfig, LossError, LossName, NamedLoss,
    OracleBatch, OracleKind,
};
use crate::nn::{Activation, Mode, Network, NetworkSpec};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Relative tolerance for finite-difference checks.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Below this magnitude errors are judged in absolute terms (1e-6 absolute).
pub const FD_FLOOR: f64 = 1e-2;
/// Relative tolerance for closed-form vs autodiff gradients.
pub const ORACLE_TOLERANCE: f64 = 1e-8;

/// `max_i |a_i − b_i| / max(‖a‖∞, ‖b‖∞)`.
pub fn normwise_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// `|a − b| / max(|a|, |b|, floor)`, maximized over components.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Default)]
pub struct GradcheckOptions {
    /// Negates the autodiff gradient of this loss before comparing; used to
    /// confirm the check can fail.
    pub sign_flip: Option<LossName>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub label: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradcheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(GradcheckRow::passed)
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, random_vec(rng, rows * cols, scale)).expect("shape")
}

fn loss_value(loss: &NamedLoss, generator_side: bool, r: &[f64], f: &[f64]) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let rv = tape.constant(Tensor::vector(r.to_vec()));
    let fv = tape.constant(Tensor::vector(f.to_vec()));
    let v = if generator_side {
        loss.record_g(&mut tape, rv, fv)?
    } else {
        loss.record_d(&mut tape, rv, fv)?
    };
    Ok(tape.value(v).item())
}

/// Max relative error between autodiff and central differences of `L_D`
/// (or `L_G`) with respect to the critic outputs.
pub fn fd_check_critic_outputs(
    loss: &NamedLoss,
    generator_side: bool,
    c_real: &[f64],
    c_fake: &[f64],
    flip: bool,
) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let rv = tape.leaf(Tensor::vector(c_real.to_vec()));
    let fv = tape.leaf(Tensor::vector(c_fake.to_vec()));
    let v = if generator_side {
        loss.record_g(&mut tape, rv, fv)?
    } else {
        loss.record_d(&mut tape, rv, fv)?
    };
    let grads = tape.backward(v, &[rv, fv])?.into_tensors();
    let mut analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
    if flip {
        analytic.iter_mut().for_each(|g| *g = -*g);
    }

    let mut numeric = Vec::with_capacity(analytic.len());
    for which in 0..2 {
        let n = c_real.len();
        for i in 0..n {
            let (mut r, mut f) = (c_real.to_vec(), c_fake.to_vec());
            let target = if which == 0 { &mut r } else { &mut f };
            let x0 = target[i];
            target[i] = x0 + FD_STEP;
            let up = loss_value(loss, generator_side, &r, &f)?;
            let target = if which == 0 { &mut r } else { &mut f };
            target[i] = x0 - FD_STEP;
            let down = loss_value(loss, generator_side, &r, &f)?;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(max_relative_error(&analytic, &numeric, FD_FLOOR))
}

/// A small smooth critic, so interpolate gradients are differentiable everywhere.
pub fn smooth_critic(input_dim: usize, hidden: usize, seed: u64) -> Network {
    let spec = NetworkSpec::mlp(input_dim, &[hidden], 1, Activation::Tanh, false, false);
    Network::init(&spec, seed).expect("valid spec")
}

/// Inputs of a critic-loss evaluation on a network.
#[derive(Debug, Clone)]
pub struct CriticProblem {
    pub x_real: Tensor,
    pub x_fake: Tensor,
    pub eps: Vec<f64>,
    pub lambda: f64,
}

/// `L_D` (plus the penalty when the loss carries one) and its gradient with
/// respect to the critic parameters.
pub fn critic_loss_and_grad(
    loss: &NamedLoss,
    critic: &mut Network,
    problem: &CriticProblem,
) -> Result<(f64, Vec<Tensor>), LossError> {
    let mut tape = Tape::new();
    let params = critic.bind(&mut tape, true);
    let per_row = |tape: &mut Tape, critic: &mut Network, x: Var| -> Result<Var, LossError> {
        let c = critic.forward(tape, &params, x, Mode::Eval)?;
        let n = tape.shape(c)[0];
        Ok(tape.reshape(c, &[n])?)
    };
    let xr = tape.constant(problem.x_real.clone());
    let xf = tape.constant(problem.x_fake.clone());
    let cr = per_row(&mut tape, critic, xr)?;
    let cf = per_row(&mut tape, critic, xf)?;
    let mut total = loss.record_d(&mut tape, cr, cf)?;
    if loss.gradient_penalty {
        let pen = gradient_penalty(
            &mut tape,
            |t, x| per_row(t, critic, x),
            &problem.x_real,
            &problem.x_fake,
            &problem.eps,
            &GpConfig { lambda: problem.lambda },
        )?;
        total = tape.add(total, pen)?;
    }
    let value = tape.value(total).item();
    let grads = tape.backward(total, params.vars())?.into_tensors();
    Ok((value, grads))
}

/// Max relative error between autodiff and central differences of the
/// critic loss with respect to the critic weights.
pub fn fd_check_critic_weights(
    loss: &NamedLoss,
    critic: &mut Network,
    problem: &CriticProblem,
    flip: bool,
) -> Result<f64, LossError> {
    let (_, grads) = critic_loss_and_grad(loss, critic, problem)?;
    let mut analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
    if flip {
        analytic.iter_mut().for_each(|g| *g = -*g);
    }
    let sizes: Vec<usize> = critic.params().iter().map(|(_, t)| t.len()).collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    for (p, &size) in sizes.iter().enumerate() {
        for j in 0..size {
            let x0 = critic.params_mut()[p].data()[j];
            critic.params_mut()[p].data_mut()[j] = x0 + FD_STEP;
            let up = critic_loss_and_grad(loss, critic, problem)?.0;
            critic.params_mut()[p].data_mut()[j] = x0 - FD_STEP;
            let down = critic_loss_and_grad(loss, critic, problem)?.0;
            critic.params_mut()[p].data_mut()[j] = x0;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(max_relative_error(&analytic, &numeric, FD_FLOOR))
}

/// Autodiff gradient of the loss the oracle `kind` describes.
pub fn autodiff_gradients(
    kind: OracleKind,
    critic: &mut Network,
    generator: &mut Network,
    batch: &OracleBatch,
) -> Result<Vec<Tensor>, LossError> {
    let loss = match kind {
        OracleKind::SganD | OracleKind::SganG => named_loss(LossName::Sgan),
        OracleKind::IpmD | OracleKind::IpmG => named_loss(LossName::WganGp),
    };
    let mut tape = Tape::new();
    let column = |tape: &mut Tape, c: Var| -> Result<Var, LossError> {
        let n = tape.shape(c)[0];
        Ok(tape.reshape(c, &[n])?)
    };
    match kind {
        OracleKind::SganD | OracleKind::IpmD => {
            let cp = critic.bind(&mut tape, true);
            let xr = tape.constant(batch.x_real.clone());
            let xf = tape.constant(batch.x_fake.clone());
            let cr = critic.forward(&mut tape, &cp, xr, Mode::Eval)?;
            let cr = column(&mut tape, cr)?;
            let cf = critic.forward(&mut tape, &cp, xf, Mode::Eval)?;
            let cf = column(&mut tape, cf)?;
            let l = loss.record_d(&mut tape, cr, cf)?;
            Ok(tape.backward(l, cp.vars())?.into_tensors())
        }
        OracleKind::SganG | OracleKind::IpmG => {
            let gp = generator.bind(&mut tape, true);
            let cp = critic.bind(&mut tape, false);
            let z = tape.constant(batch.z.clone());
            let x = generator.forward(&mut tape, &gp, z, Mode::Eval)?;
            let cf = critic.forward(&mut tape, &cp, x, Mode::Eval)?;
            let cf = column(&mut tape, cf)?;
            let cr = tape.constant(Tensor::zeros(&[batch.z.rows()]));
            let l = loss.record_g(&mut tape, cr, cf)?;
            Ok(tape.backward(l, gp.vars())?.into_tensors())
        }
    }
}

/// Random two-layer critic, generator and batch for the oracle comparison.
pub fn oracle_fixture(seed: u64) -> (Network, Network, OracleBatch) {
    let critic_spec = NetworkSpec::mlp(2, &[16], 1, Activation::LeakyRelu(0.2), false, false);
    let generator_spec = NetworkSpec::mlp(4, &[16], 2, Activation::Relu, false, false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let critic = Network::init_with(&critic_spec, &mut rng).expect("valid spec");
    let mut generator = Network::init_with(&generator_spec, &mut rng).expect("valid spec");
    // Nonzero biases so relu units are not all switched at the origin.
    for layer in generator.layers_mut() {
        let n = layer.bias.len();
        layer.bias = Tensor::vector(random_vec(&mut rng, n, 0.3));
    }
    let batch = OracleBatch {
        x_real: random_matrix(&mut rng, 12, 2, 1.5),
        x_fake: random_matrix(&mut rng, 12, 2, 1.5),
        z: random_matrix(&mut rng, 12, 4, 1.0),
    };
    (critic, generator, batch)
}

pub fn oracle_check(kind: OracleKind, seed: u64) -> Result<f64, LossError> {
    let (mut critic, mut generator, batch) = oracle_fixture(seed);
    let closed = closed_form_gradients_oracle(kind, &mut critic, &mut generator, &batch)?;
    let auto = autodiff_gradients(kind, &mut critic, &mut generator, &batch)?;
    let a: Vec<f64> = closed.iter().flat_map(|t| t.data().to_vec()).collect();
    let b: Vec<f64> = auto.iter().flat_map(|t| t.data().to_vec()).collect();
    Ok(normwise_relative_error(&a, &b))
}

/// Runs the oracle comparison for all four kinds and finite-difference
/// checks for every registered loss.
pub fn run_gradcheck(options: &GradcheckOptions) -> Result<GradcheckReport, LossError> {
    let mut report = GradcheckReport::default();
    let kinds = [
        (OracleKind::SganD, "oracle SGAN_D"),
        (OracleKind::SganG, "oracle SGAN_G"),
        (OracleKind::IpmD, "oracle IPM_D"),
        (OracleKind::IpmG, "oracle IPM_G"),
    ];
    for (kind, label) in kinds {
        let mut worst: f64 = 0.0;
        for s in 0..3 {
            worst = worst.max(oracle_check(kind, options.seed.wrapping_add(s))?);
        }
        report.rows.push(GradcheckRow {
            label: label.into(),
            max_rel_err: worst,
            tolerance: ORACLE_TOLERANCE,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x5eed);
    for name in LossName::ALL {
        let loss = named_loss(name);
        let flip = options.sign_flip == Some(name);
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let m = rng.random_range(2..8);
            let r = random_vec(&mut rng, m, 2.0);
            let f = random_vec(&mut rng, m, 2.0);
            worst = worst.max(fd_check_critic_outputs(&loss, false, &r, &f, flip)?);
            worst = worst.max(fd_check_critic_outputs(&loss, true, &r, &f, flip)?);
        }
        let mut critic = smooth_critic(2, 6, rng.random());
        let problem = CriticProblem {
            x_real: random_matrix(&mut rng, 6, 2, 1.0),
            x_fake: random_matrix(&mut rng, 6, 2, 1.0),
            eps: (0..6).map(|_| rng.random::<f64>()).collect(),
            lambda: 10.0,
        };
        worst = worst.max(fd_check_critic_weights(&loss, &mut critic, &problem, flip)?);
        report.rows.push(GradcheckRow {
            label: format!("finite differences {name}"),
            max_rel_err: worst,
            tolerance: FD_TOLERANCE,
        });
    }
    Ok(report)
}
