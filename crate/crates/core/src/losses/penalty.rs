use crate::autodiff::{Tape, Tensor, Var};

use super::LossError;

/// Weight of the gradient penalty on interpolates between real and fake rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpConfig {
    pub lambda: f64,
}

impl GpConfig {
    pub fn new(lambda: f64) -> Result<Self, LossError> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(LossError::Batch(format!("penalty weight must be finite and >= 0, got {lambda}")));
        }
        Ok(GpConfig { lambda })
    }
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { lambda: 10.0 }
    }
}

/// Row-wise `eps_i · x_real_i + (1 − eps_i) · x_fake_i`.
pub fn interpolate(x_real: &Tensor, x_fake: &Tensor, eps: &[f64]) -> Result<Tensor, LossError> {
    if x_real.shape() != x_fake.shape() || x_real.rank() != 2 {
        return Err(LossError::Batch(format!(
            "cannot interpolate {:?} and {:?}",
            x_real.shape(),
            x_fake.shape()
        )));
    }
    if eps.len() != x_real.rows() {
        return Err(LossError::Batch(format!("{} weights for {} rows", eps.len(), x_real.rows())));
    }
    if let Some(e) = eps.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(LossError::Batch(format!("interpolation weight {e} outside [0, 1]")));
    }
    let d = x_real.cols();
    let data = x_real
        .data()
        .iter()
        .zip(x_fake.data())
        .enumerate()
        .map(|(i, (r, f))| {
            let e = eps[i / d];
            e * r + (1.0 - e) * f
        })
        .collect();
    Ok(Tensor::matrix(x_real.rows(), d, data)?)
}

/// Records `λ · mean_i (‖∇ C(x̂_i)‖ − 1)²` on `tape`.
///
/// `critic` maps a `[m, d]` input variable to per-row critic values. The
/// input gradient is itself recorded on the tape, so the result can be
/// differentiated with respect to any critic weights `critic` captured.
pub fn gradient_penalty<F>(
    tape: &mut Tape,
    critic: F,
    x_real: &Tensor,
    x_fake: &Tensor,
    eps: &[f64],
    gp: &GpConfig,
) -> Result<Var, LossError>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var, LossError>,
{
    let x_hat = tape.leaf(interpolate(x_real, x_fake, eps)?);
    let c = critic(tape, x_hat)?;
    let total = tape.sum(c)?;
    let g = tape.grad(total, &[x_hat])?[0];
    let norms = tape.l2_norm_rows(g)?;
    let dev = tape.shift(norms, -1.0)?;
    let sq = tape.square(dev)?;
    let mean = tape.mean(sq)?;
    Ok(tape.scale(mean, gp.lambda)?)
}
