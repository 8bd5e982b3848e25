//! Plain-text parameter checkpoints.
//!
//! Format, version 1:
//!
//! ```text
//! relgan-checkpoint v1
//! <name> <dim>...
//! <value>,<value>,...
//! ```
//!
//! One header line and one value line per array. Values use Rust's shortest
//! round-trip `f64` formatting, so a save/load cycle is bit-exact. Besides
//! trainable parameters a network stores its buffers: batch-norm running
//! statistics (`bn.running_mean`, `bn.running_var`) and power-iteration
//! vectors (`sn.u`, `sn.v`).

use std::io::{BufRead, Write};

use thiserror::Error;

use super::{Network, NnError};
use crate::autodiff::Tensor;

const MAGIC: &str = "relgan-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Network(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub tensor: Tensor,
}

impl Network {
    /// Parameters and buffers, each name prefixed with `prefix.`.
    pub fn to_named_arrays(&self, prefix: &str) -> Vec<NamedArray> {
        let mut out = Vec::new();
        let mut push = |name: String, tensor: Tensor| {
            out.push(NamedArray {
                name: format!("{prefix}.{name}"),
                tensor,
            })
        };
        for (i, layer) in self.layers.iter().enumerate() {
            push(format!("layer{i}.weight"), layer.weight.clone());
            push(format!("layer{i}.bias"), layer.bias.clone());
            if let Some(bn) = &layer.batch_norm {
                push(format!("layer{i}.bn.gamma"), bn.gamma.clone());
                push(format!("layer{i}.bn.beta"), bn.beta.clone());
                push(format!("layer{i}.bn.running_mean"), Tensor::vector(bn.running_mean.clone()));
                push(format!("layer{i}.bn.running_var"), Tensor::vector(bn.running_var.clone()));
            }
            if let Some(sn) = &layer.spectral {
                push(format!("layer{i}.sn.u"), Tensor::vector(sn.u.clone()));
                push(format!("layer{i}.sn.v"), Tensor::vector(sn.v.clone()));
            }
        }
        out
    }

    /// Overwrites parameters and buffers from arrays named as in
    /// [`Network::to_named_arrays`]. The architecture must already match.
    pub fn load_named_arrays(&mut self, prefix: &str, arrays: &[NamedArray]) -> Result<(), NnError> {
        let find = |name: String| -> Result<&Tensor, NnError> {
            let full = format!("{prefix}.{name}");
            arrays
                .iter()
                .find(|a| a.name == full)
                .map(|a| &a.tensor)
                .ok_or(NnError::MissingParam(full))
        };
        let check = |name: &str, expected: &[usize], got: &Tensor| -> Result<(), NnError> {
            if expected == got.shape() {
                Ok(())
            } else {
                Err(NnError::ParamShape {
                    name: name.to_string(),
                    expected: expected.to_vec(),
                    got: got.shape().to_vec(),
                })
            }
        };
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let w = find(format!("layer{i}.weight"))?;
            check("weight", layer.weight.shape(), w)?;
            layer.weight = w.clone();
            let b = find(format!("layer{i}.bias"))?;
            check("bias", layer.bias.shape(), b)?;
            layer.bias = b.clone();
            if let Some(bn) = &mut layer.batch_norm {
                let shape = bn.gamma.shape().to_vec();
                for (field, target) in [("gamma", &mut bn.gamma), ("beta", &mut bn.beta)] {
                    let t = find(format!("layer{i}.bn.{field}"))?;
                    check(field, &shape, t)?;
                    *target = t.clone();
                }
                for (field, target) in [
                    ("running_mean", &mut bn.running_mean),
                    ("running_var", &mut bn.running_var),
                ] {
                    let t = find(format!("layer{i}.bn.{field}"))?;
                    check(field, &shape, t)?;
                    *target = t.data().to_vec();
                }
            }
            if let Some(sn) = &mut layer.spectral {
                let u = find(format!("layer{i}.sn.u"))?;
                check("sn.u", &[sn.u.len()], u)?;
                let v = find(format!("layer{i}.sn.v"))?;
                check("sn.v", &[sn.v.len()], v)?;
                sn.u = u.data().to_vec();
                sn.v = v.data().to_vec();
                sn.sigma = power_sigma(&layer.weight, &sn.u, &sn.v);
            }
        }
        Ok(())
    }
}

fn power_sigma(w: &Tensor, u: &[f64], v: &[f64]) -> f64 {
    let cols = w.cols();
    u.iter()
        .enumerate()
        .map(|(i, ui)| ui * w.data()[i * cols..(i + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

pub fn write_checkpoint<W: Write>(mut out: W, arrays: &[NamedArray]) -> std::io::Result<()> {
    writeln!(out, "{MAGIC}")?;
    for a in arrays {
        write!(out, "{}", a.name)?;
        for d in a.tensor.shape() {
            write!(out, " {d}")?;
        }
        writeln!(out)?;
        let values: Vec<String> = a.tensor.data().iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", values.join(","))?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Vec<NamedArray>, CheckpointError> {
    let mut lines = input.lines().enumerate();
    let parse_err = |line: usize, msg: String| CheckpointError::Parse { line: line + 1, msg };
    match lines.next() {
        Some((i, header)) => {
            if header?.trim() != MAGIC {
                return Err(parse_err(i, format!("expected `{MAGIC}` header")));
            }
        }
        None => return Err(parse_err(0, "empty checkpoint".into())),
    }
    let mut arrays = Vec::new();
    while let Some((i, header)) = lines.next() {
        let header = header?;
        if header.trim().is_empty() {
            continue;
        }
        let mut parts = header.split_whitespace();
        let name = parts.next().unwrap_or_default().to_string();
        let shape = parts
            .map(|p| p.parse::<usize>().map_err(|e| parse_err(i, format!("bad dimension `{p}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let (j, values) = lines
            .next()
            .ok_or_else(|| parse_err(i, format!("missing values for `{name}`")))?;
        let values = values?;
        let data = if values.trim().is_empty() {
            Vec::new()
        } else {
            values
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| parse_err(j, format!("bad value `{v}`: {e}"))))
                .collect::<Result<Vec<_>, _>>()?
        };
        let tensor = Tensor::new(shape, data).map_err(|e| parse_err(j, e.to_string()))?;
        arrays.push(NamedArray { name, tensor });
    }
    Ok(arrays)
}
