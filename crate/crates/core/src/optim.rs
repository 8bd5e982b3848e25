//! Adam and plain SGD.

use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("gradient {index} contains a non-finite value; step skipped")]
    NonFiniteGradient { index: usize },
    #[error("expected {expected} gradients, got {got}")]
    Count { expected: usize, got: usize },
    #[error("gradient {index}: shape {grad:?} does not match parameter shape {param:?}")]
    Shape {
        index: usize,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
}

/// Learning rate and moment decay rates of a named training setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamPreset {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub n_d: usize,
}

/// lr = 2e-4, β = (0.5, 0.999), one critic step per generator step.
pub const DCGAN_PRESET: AdamPreset = AdamPreset {
    lr: 0.0002,
    beta1: 0.5,
    beta2: 0.999,
    n_d: 1,
};

/// lr = 1e-4, β = (0.5, 0.9), five critic steps per generator step.
pub const WGAN_GP_PRESET: AdamPreset = AdamPreset {
    lr: 0.0001,
    beta1: 0.5,
    beta2: 0.9,
    n_d: 5,
};

pub const ADAM_EPS: f64 = 1e-8;

fn validate(params: &[&mut Tensor], grads: &[Tensor]) -> Result<(), OptimError> {
    if params.len() != grads.len() {
        return Err(OptimError::Count {
            expected: params.len(),
            got: grads.len(),
        });
    }
    for (index, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(OptimError::Shape {
                index,
                param: p.shape().to_vec(),
                grad: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient { index });
        }
    }
    Ok(())
}

/// Bias-corrected Adam without weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(shapes: &[Vec<usize>], lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: ADAM_EPS,
            t: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn from_preset(shapes: &[Vec<usize>], preset: AdamPreset) -> Self {
        Adam::new(shapes, preset.lr, preset.beta1, preset.beta2)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update in place. Nothing is modified if any gradient is
    /// non-finite or misshapen.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), OptimError> {
        validate(params, grads)?;
        if self.m.len() != params.len() {
            return Err(OptimError::Count {
                expected: self.m.len(),
                got: params.len(),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let p = p.data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), OptimError> {
        validate(params, grads)?;
        for (p, g) in params.iter_mut().zip(grads) {
            for (pi, gi) in p.data_mut().iter_mut().zip(g.data()) {
                *pi -= self.lr * gi;
            }
        }
        Ok(())
    }
}
