//! Dense networks for the generator and critic.
//!
//! Layers compute `activation(batch_norm(x Wᵀ + b))`. Critic layers may
//! divide `W` by a power-iteration estimate of its top singular value; the
//! estimate `uᵀ W v` is recorded on the tape with `u` and `v` held constant,
//! so gradients flow through the normalization.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError, NamedArray};

pub const BATCH_NORM_MOMENTUM: f64 = 0.9;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const SPECTRAL_WARM_START: usize = 50;

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("expected input width {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("layer {layer} has a zero weight matrix; spectral normalization is undefined")]
    DegenerateLayer { layer: usize },
    #[error("pack size {k} does not divide batch size {m}")]
    Pack { m: usize, k: usize },
    #[error("parameter count mismatch: network has {expected}, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("parameter {name}: expected shape {expected:?}, got {got:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("missing parameter {0}")]
    MissingParam(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu(alpha) => tape.leaky_relu(x, alpha),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Tensor::filled(&[features], 1.0),
            beta: Tensor::zeros(&[features]),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: BATCH_NORM_MOMENTUM,
            eps: BATCH_NORM_EPS,
        }
    }
}

/// Power-iteration state for one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralNorm {
    /// Left singular vector estimate, length `out`.
    pub u: Vec<f64>,
    /// Right singular vector estimate, length `in`.
    pub v: Vec<f64>,
    /// Last estimate of the top singular value.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub activation: Activation,
    pub spectral: Option<SpectralNorm>,
    pub batch_norm: Option<BatchNorm>,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Self {
        DenseLayer {
            weight,
            bias,
            activation,
            spectral: None,
            batch_norm: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Runs one power iteration and returns the normalized weight.
    ///
    /// Enables spectral normalization with a uniform starting vector if the
    /// layer did not have it yet.
    pub fn spectral_normalize(&mut self) -> Result<Tensor, NnError> {
        self.power_iteration(0)?;
        let sigma = self.spectral.as_ref().map_or(1.0, |sn| sn.sigma);
        Ok(self.weight.map(|w| w / sigma))
    }

    fn power_iteration(&mut self, index: usize) -> Result<(), NnError> {
        let (rows, cols) = (self.weight.rows(), self.weight.cols());
        let sn = self.spectral.get_or_insert_with(|| SpectralNorm {
            u: vec![1.0 / (rows as f64).sqrt(); rows],
            v: vec![0.0; cols],
            sigma: 1.0,
        });
        let w = self.weight.data();
        let mut v = vec![0.0; cols];
        for (i, &ui) in sn.u.iter().enumerate() {
            for (vj, &wij) in v.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
                *vj += wij * ui;
            }
        }
        let v_norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if v_norm == 0.0 {
            return Err(NnError::DegenerateLayer { layer: index });
        }
        v.iter_mut().for_each(|x| *x /= v_norm);
        let mut u: Vec<f64> = (0..rows)
            .map(|i| w[i * cols..(i + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        let u_norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if u_norm == 0.0 {
            return Err(NnError::DegenerateLayer { layer: index });
        }
        u.iter_mut().for_each(|x| *x /= u_norm);
        // uᵀ W v with the freshly normalized u equals ||W v||.
        sn.sigma = u_norm;
        sn.u = u;
        sn.v = v;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub out: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub spectral_norm: bool,
}

impl NetworkSpec {
    /// Dense stack with a shared hidden activation and an identity output.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
        batch_norm: bool,
        spectral_norm: bool,
    ) -> Self {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&out| LayerSpec {
                out,
                activation,
                batch_norm,
            })
            .collect();
        layers.push(LayerSpec {
            out: output_dim,
            activation: Activation::Identity,
            batch_norm: false,
        });
        NetworkSpec {
            input_dim,
            layers,
            spectral_norm,
        }
    }

    /// 8 → 64 → 64 → 2 with relu hidden units.
    pub fn default_generator(latent_dim: usize, batch_norm: bool) -> Self {
        NetworkSpec::mlp(latent_dim, &[64, 64], 2, Activation::Relu, batch_norm, false)
    }

    /// 2·pack → 64 → 64 → 1 with leaky relu (0.2) hidden units.
    pub fn default_critic(input_dim: usize, spectral_norm: bool) -> Self {
        NetworkSpec::mlp(
            input_dim,
            &[64, 64],
            1,
            Activation::LeakyRelu(0.2),
            false,
            spectral_norm,
        )
    }
}

/// Parameter handles of a network bound to one tape, in [`Network::params`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

impl Network {
    /// Builds a network with Xavier-normal weights (variance `2/(in+out)`)
    /// and zero biases drawn from a generator seeded with `seed`.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::init_with(spec, &mut rng)
    }

    pub fn init_with<R: Rng>(spec: &NetworkSpec, rng: &mut R) -> Result<Self, NnError> {
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut fan_in = spec.input_dim;
        for ls in &spec.layers {
            let std = (2.0 / (fan_in + ls.out) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let data: Vec<f64> = (0..ls.out * fan_in).map(|_| normal.sample(rng)).collect();
            let mut layer = DenseLayer::new(
                Tensor::matrix(ls.out, fan_in, data)?,
                Tensor::zeros(&[ls.out]),
                ls.activation,
            );
            if ls.batch_norm {
                layer.batch_norm = Some(BatchNorm::new(ls.out));
            }
            if spec.spectral_norm {
                let mut u: Vec<f64> = (0..ls.out).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
                let n = u.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
                u.iter_mut().for_each(|x| *x /= n);
                layer.spectral = Some(SpectralNorm {
                    u,
                    v: vec![0.0; fan_in],
                    sigma: 1.0,
                });
            }
            layers.push(layer);
            fan_in = ls.out;
        }
        let mut net = Network::from_layers(layers)?;
        if spec.spectral_norm {
            net.power_iterate(SPECTRAL_WARM_START)?;
        }
        Ok(net)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(NnError::DimMismatch {
                    expected: pair[0].output_dim(),
                    got: pair[1].input_dim(),
                });
            }
        }
        Ok(Network { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::output_dim)
    }

    /// Runs `iters` power iterations on every spectrally normalized layer.
    pub fn power_iterate(&mut self, iters: usize) -> Result<(), NnError> {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if layer.spectral.is_some() {
                for _ in 0..iters {
                    layer.power_iteration(i)?;
                }
            }
        }
        Ok(())
    }

    /// Trainable parameters with stable names.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), &layer.weight));
            out.push((format!("layer{i}.bias"), &layer.bias));
            if let Some(bn) = &layer.batch_norm {
                out.push((format!("layer{i}.bn.gamma"), &bn.gamma));
                out.push((format!("layer{i}.bn.beta"), &bn.beta));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
            if let Some(bn) = &mut layer.batch_norm {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params().into_iter().map(|(_, t)| t.shape().to_vec()).collect()
    }

    /// Records parameters on `tape`, as leaves when `trainable`, else as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .params()
            .into_iter()
            .map(|(_, t)| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        BoundParams { vars }
    }

    /// Forward pass of a `[m, input_dim]` batch.
    ///
    /// In train mode batch-norm layers normalize with batch statistics and
    /// update their running averages; in eval mode they use the running
    /// averages and leave the network untouched.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        params: &BoundParams,
        input: Var,
        mode: Mode,
    ) -> Result<Var, NnError> {
        let width = tape.value(input).cols();
        if tape.value(input).rank() != 2 || width != self.input_dim() {
            return Err(NnError::DimMismatch {
                expected: self.input_dim(),
                got: width,
            });
        }
        let mut slots = params.vars.iter().copied();
        let mut x = input;
        for layer in &mut self.layers {
            let w = slots.next().expect("bound weight");
            let b = slots.next().expect("bound bias");
            let w = match &layer.spectral {
                Some(sn) => {
                    let (rows, cols) = (layer.weight.rows(), layer.weight.cols());
                    let mut outer = Vec::with_capacity(rows * cols);
                    for &ui in &sn.u {
                        outer.extend(sn.v.iter().map(|vj| ui * vj));
                    }
                    let outer = tape.constant(Tensor::matrix(rows, cols, outer)?);
                    let prod = tape.mul(w, outer)?;
                    let sigma = tape.sum(prod)?;
                    let sigma = tape.expand(sigma, &[rows, cols])?;
                    tape.div(w, sigma)?
                }
                None => w,
            };
            let wt = tape.transpose(w)?;
            let h = tape.matmul(x, wt)?;
            let mut h = tape.broadcast_add_row(h, b)?;
            if let Some(bn) = &mut layer.batch_norm {
                let gamma = slots.next().expect("bound gamma");
                let beta = slots.next().expect("bound beta");
                h = batch_norm(tape, bn, h, gamma, beta, mode)?;
            }
            x = layer.activation.apply(tape, h)?;
        }
        Ok(x)
    }

    /// Forward pass on a detached tensor; convenient for sampling and metrics.
    pub fn predict(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor, NnError> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, &params, x, mode)?;
        Ok(tape.value(y).clone())
    }
}

fn batch_norm(
    tape: &mut Tape,
    bn: &mut BatchNorm,
    h: Var,
    gamma: Var,
    beta: Var,
    mode: Mode,
) -> Result<Var, AutodiffError> {
    let (m, n) = (tape.value(h).rows(), tape.value(h).cols());
    let normalized = match mode {
        Mode::Train => {
            let s = tape.sum_rows(h)?;
            let mean = tape.scale(s, 1.0 / m as f64)?;
            let mean_b = tape.broadcast_rows(mean, m)?;
            let centered = tape.sub(h, mean_b)?;
            let sq = tape.square(centered)?;
            let s = tape.sum_rows(sq)?;
            let var = tape.scale(s, 1.0 / m as f64)?;
            let var_eps = tape.shift(var, bn.eps)?;
            let std = tape.sqrt(var_eps)?;
            let std_b = tape.broadcast_rows(std, m)?;
            let out = tape.div(centered, std_b)?;

            let batch_mean = tape.value(mean).data().to_vec();
            let batch_var = tape.value(var).data().to_vec();
            for j in 0..n {
                bn.running_mean[j] =
                    bn.momentum * bn.running_mean[j] + (1.0 - bn.momentum) * batch_mean[j];
                bn.running_var[j] =
                    bn.momentum * bn.running_var[j] + (1.0 - bn.momentum) * batch_var[j];
            }
            out
        }
        Mode::Eval => {
            let shift: Vec<f64> = bn.running_mean.iter().map(|v| -v).collect();
            let inv_std: Vec<f64> = bn
                .running_var
                .iter()
                .map(|v| 1.0 / (v + bn.eps).sqrt())
                .collect();
            let shift = tape.constant(Tensor::vector(shift));
            let centered = tape.broadcast_add_row(h, shift)?;
            let inv = tape.constant(Tensor::vector(inv_std));
            let inv = tape.broadcast_rows(inv, m)?;
            tape.mul(centered, inv)?
        }
    };
    let gamma_b = tape.broadcast_rows(gamma, m)?;
    let scaled = tape.mul(normalized, gamma_b)?;
    tape.broadcast_add_row(scaled, beta)
}

/// Concatenates consecutive groups of `k` rows feature-wise: `[m, d] -> [m/k, k·d]`.
pub fn pack(tape: &mut Tape, batch: Var, k: usize) -> Result<Var, NnError> {
    let (m, d) = (tape.value(batch).rows(), tape.value(batch).cols());
    if k == 0 || m % k != 0 {
        return Err(NnError::Pack { m, k });
    }
    if k == 1 {
        return Ok(batch);
    }
    Ok(tape.reshape(batch, &[m / k, k * d])?)
}

/// Tensor version of [`pack`].
pub fn pack_tensor(batch: &Tensor, k: usize) -> Result<Tensor, NnError> {
    let (m, d) = (batch.rows(), batch.cols());
    if k == 0 || m % k != 0 {
        return Err(NnError::Pack { m, k });
    }
    Ok(batch.reshaped(&[m / k, k * d])?)
}
