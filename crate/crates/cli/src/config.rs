//! Line-oriented experiment files.
//!
//! ```text
//! # comments start with '#'
//! loss = RaSGAN
//! seed = 1
//! iterations = 5000
//! critic_hidden = 64, 64
//! ```
//!
//! `loss` and `seed` are required; every other key has a default. Unknown
//! keys and repeated keys are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use relgan::data::MixtureName;
use relgan::losses::LossName;
use relgan::trainer::TrainConfig;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
}

pub const KEYS: &[&str] = &[
    "loss",
    "seed",
    "dataset",
    "out",
    "batch_size",
    "n_d",
    "lr",
    "beta1",
    "beta2",
    "lambda",
    "iterations",
    "metric_interval",
    "metric_samples",
    "latent_dim",
    "generator_hidden",
    "critic_hidden",
    "spectral_norm",
    "batch_norm",
    "pack",
    "record_wall_time",
];

/// A parsed experiment file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentFile {
    pub train: TrainConfig,
    pub out: Option<PathBuf>,
}

struct Entry {
    line: usize,
    value: String,
}

fn parse_value<T: FromStr>(key: &str, e: &Entry) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    e.value.parse::<T>().map_err(|err| ConfigError::Line {
        line: e.line,
        msg: format!("invalid value `{}` for {key}: {err}", e.value),
    })
}

fn parse_bool(key: &str, e: &Entry) -> Result<bool, ConfigError> {
    match e.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(ConfigError::Line {
            line: e.line,
            msg: format!("invalid value `{other}` for {key}: expected true or false"),
        }),
    }
}

fn parse_list(key: &str, e: &Entry) -> Result<Vec<usize>, ConfigError> {
    if e.value.is_empty() {
        return Ok(Vec::new());
    }
    e.value
        .split(',')
        .map(|s| {
            s.trim().parse::<usize>().map_err(|err| ConfigError::Line {
                line: e.line,
                msg: format!("invalid width `{}` in {key}: {err}", s.trim()),
            })
        })
        .collect()
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Line {
                    line,
                    msg: format!("expected `key = value`, got `{content}`"),
                });
            };
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(ConfigError::Line {
                    line,
                    msg: format!("unknown key `{key}`; valid keys: {}", KEYS.join(", ")),
                });
            }
            if let Some(prev) = entries.get(key) {
                return Err(ConfigError::Line {
                    line,
                    msg: format!("duplicate key `{key}` (first set on line {})", prev.line),
                });
            }
            entries.insert(
                key.to_string(),
                Entry {
                    line,
                    value: value.trim().to_string(),
                },
            );
        }

        let loss_entry = entries.get("loss").ok_or(ConfigError::Missing("loss"))?;
        let loss: LossName = loss_entry.value.parse().map_err(|e: relgan::losses::LossError| ConfigError::Line {
            line: loss_entry.line,
            msg: e.to_string(),
        })?;
        let seed: u64 = parse_value("seed", entries.get("seed").ok_or(ConfigError::Missing("seed"))?)?;

        let mut c = TrainConfig::new(loss, seed);
        let mut out = None;
        for (key, e) in &entries {
            match key.as_str() {
                "loss" | "seed" => {}
                "dataset" => {
                    c.dataset = e.value.parse::<MixtureName>().map_err(|msg| ConfigError::Line { line: e.line, msg })?
                }
                "out" => out = Some(PathBuf::from(&e.value)),
                "batch_size" => c.batch_size = parse_value(key, e)?,
                "n_d" => c.n_d = parse_value(key, e)?,
                "lr" => c.lr = parse_value(key, e)?,
                "beta1" => c.beta1 = parse_value(key, e)?,
                "beta2" => c.beta2 = parse_value(key, e)?,
                "lambda" => c.lambda = parse_value(key, e)?,
                "iterations" => c.iterations = parse_value(key, e)?,
                "metric_interval" => c.metric_interval = parse_value(key, e)?,
                "metric_samples" => c.metric_samples = parse_value(key, e)?,
                "latent_dim" => c.latent_dim = parse_value(key, e)?,
                "generator_hidden" => c.generator_hidden = parse_list(key, e)?,
                "critic_hidden" => c.critic_hidden = parse_list(key, e)?,
                "spectral_norm" => c.spectral_norm = parse_bool(key, e)?,
                "batch_norm" => c.batch_norm = parse_bool(key, e)?,
                "pack" => c.pack = parse_value(key, e)?,
                "record_wall_time" => c.record_wall_time = parse_bool(key, e)?,
                _ => unreachable!("keys are checked while reading"),
            }
        }
        c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(ExperimentFile { train: c, out })
    }
}
