//! Closed-form SGAN and IPM gradients assembled from per-sample critic
//! gradients. Used to cross-check the autodiff path.

use crate::autodiff::{sigmoid, Tape, Tensor};
use crate::nn::{Mode, Network};

use super::LossError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    /// `−E[(1 − σ(C(x_r))) ∇_w C(x_r)] + E[σ(C(x_f)) ∇_w C(x_f)]`
    SganD,
    /// `−E[(1 − σ(C(G(z)))) ∇_x C(G(z)) J_θ G(z)]`
    SganG,
    /// `−E[∇_w C(x_r)] + E[∇_w C(x_f)]`
    IpmD,
    /// `−E[∇_x C(G(z)) J_θ G(z)]`
    IpmG,
}

/// Inputs for the oracle; critic kinds read `x_real`/`x_fake`, generator kinds read `z`.
#[derive(Debug, Clone)]
pub struct OracleBatch {
    pub x_real: Tensor,
    pub x_fake: Tensor,
    pub z: Tensor,
}

fn row_tensor(t: &Tensor, i: usize) -> Tensor {
    Tensor::matrix(1, t.cols(), t.row(i).to_vec()).expect("row")
}

/// `C(x)` and `∇_w C(x)` for a single input row.
fn critic_param_grad(critic: &mut Network, x: Tensor) -> Result<(f64, Vec<Tensor>), LossError> {
    let mut tape = Tape::new();
    let params = critic.bind(&mut tape, true);
    let xv = tape.constant(x);
    let c = critic.forward(&mut tape, &params, xv, Mode::Eval)?;
    let c = tape.sum(c)?;
    let value = tape.value(c).item();
    let grads = tape.backward(c, params.vars())?;
    Ok((value, grads.into_tensors()))
}

/// `C(G(z))` and `∇_x C(G(z)) J_θ G(z)` for a single latent row.
fn generator_param_grad(
    generator: &mut Network,
    critic: &mut Network,
    z: Tensor,
) -> Result<(f64, Vec<Tensor>), LossError> {
    let x = generator.predict(&z, Mode::Eval)?;

    let mut tape = Tape::new();
    let cp = critic.bind(&mut tape, false);
    let xv = tape.leaf(x);
    let c = critic.forward(&mut tape, &cp, xv, Mode::Eval)?;
    let c = tape.sum(c)?;
    let value = tape.value(c).item();
    let dx = tape.backward(c, &[xv])?.into_tensors().remove(0);

    // Vector-Jacobian product: ∇_θ ⟨G(z), dx⟩ = dxᵀ J_θ G(z).
    let mut tape = Tape::new();
    let gp = generator.bind(&mut tape, true);
    let zv = tape.constant(z);
    let out = generator.forward(&mut tape, &gp, zv, Mode::Eval)?;
    let dxv = tape.constant(dx);
    let prod = tape.mul(out, dxv)?;
    let s = tape.sum(prod)?;
    let grads = tape.backward(s, gp.vars())?;
    Ok((value, grads.into_tensors()))
}

fn accumulate(acc: &mut Option<Vec<Tensor>>, grads: Vec<Tensor>, weight: f64) {
    match acc {
        None => *acc = Some(grads.into_iter().map(|g| g.map(|v| weight * v)).collect()),
        Some(acc) => {
            for (a, g) in acc.iter_mut().zip(grads) {
                *a = a.zip_map(&g, |x, y| x + weight * y);
            }
        }
    }
}

/// Gradient of the SGAN or IPM loss with respect to the critic (`*D`) or
/// generator (`*G`) parameters, in [`Network::params`] order.
///
/// Networks are evaluated in eval mode and are not modified.
pub fn closed_form_gradients_oracle(
    kind: OracleKind,
    critic: &mut Network,
    generator: &mut Network,
    batch: &OracleBatch,
) -> Result<Vec<Tensor>, LossError> {
    let mut acc = None;
    match kind {
        OracleKind::SganD | OracleKind::IpmD => {
            let (xr, xf) = (&batch.x_real, &batch.x_fake);
            if xr.rank() != 2 || xr.rows() == 0 || xf.rank() != 2 || xf.rows() == 0 {
                return Err(LossError::Batch("oracle needs non-empty real and fake batches".into()));
            }
            let (nr, nf) = (xr.rows() as f64, xf.rows() as f64);
            for i in 0..xr.rows() {
                let (c, g) = critic_param_grad(critic, row_tensor(xr, i))?;
                let w = match kind {
                    OracleKind::SganD => -(1.0 - sigmoid(c)),
                    _ => -1.0,
                };
                accumulate(&mut acc, g, w / nr);
            }
            for i in 0..xf.rows() {
                let (c, g) = critic_param_grad(critic, row_tensor(xf, i))?;
                let w = match kind {
                    OracleKind::SganD => sigmoid(c),
                    _ => 1.0,
                };
                accumulate(&mut acc, g, w / nf);
            }
        }
        OracleKind::SganG | OracleKind::IpmG => {
            let z = &batch.z;
            if z.rank() != 2 || z.rows() == 0 {
                return Err(LossError::Batch("oracle needs a non-empty latent batch".into()));
            }
            let n = z.rows() as f64;
            for i in 0..z.rows() {
                let (c, g) = generator_param_grad(generator, critic, row_tensor(z, i))?;
                let w = match kind {
                    OracleKind::SganG => -(1.0 - sigmoid(c)),
                    _ => -1.0,
                };
                accumulate(&mut acc, g, w / n);
            }
        }
    }
    Ok(acc.expect("non-empty batch"))
}
