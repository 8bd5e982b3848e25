//! Command implementations behind the `relgan` binary.

pub mod config;
pub mod svg;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use relgan::autodiff::{sigmoid, Tensor};
use relgan::data::{read_samples_csv, sample_real, stream_rng, write_samples_csv, MixtureName, MixtureSpec, Stream};
use relgan::gradcheck::{run_gradcheck, GradcheckOptions};
use relgan::losses::{named_loss, CriticBatch, LossName};
use relgan::metrics::Reference;
use relgan::trainer::{train, RunLog, TrainError, TrainOutcome};
use thiserror::Error;

use config::{ConfigError, ExperimentFile};

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Config = 1,
    Numeric = 2,
    Check = 3,
}

pub const OUT_ENV: &str = "RELGAN_OUT";
const SVG_POINTS: usize = 2_000;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl RunError {
    pub fn exit(&self) -> Exit {
        match self {
            RunError::Train(TrainError::Diverged { .. }) => Exit::Numeric,
            _ => Exit::Config,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut io::BufWriter<fs::File>) -> io::Result<()>) -> Result<(), RunError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = io::BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Reads and parses an experiment file, applying a `--seed` override.
pub fn load_experiment(path: &Path, seed: Option<u64>) -> Result<ExperimentFile, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut file = ExperimentFile::parse(&text).map_err(|source| RunError::Config {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(s) = seed {
        file.train.seed = s;
    }
    Ok(file)
}

/// Output directory for one run: `--out` (with a per-config subdirectory when
/// several configs share it), else the file's `out` key, else
/// `$RELGAN_OUT/<stem>`, else `runs/<stem>`.
pub fn output_dir(cli_out: Option<&Path>, file: &ExperimentFile, config_path: &Path, shared: bool) -> PathBuf {
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    match (cli_out, &file.out) {
        (Some(dir), _) if shared => dir.join(stem),
        (Some(dir), _) => dir.to_path_buf(),
        (None, Some(dir)) => dir.clone(),
        (None, None) => match std::env::var_os(OUT_ENV) {
            Some(root) => PathBuf::from(root).join(stem),
            None => PathBuf::from("runs").join(stem),
        },
    }
}

/// Trains one experiment, writing the run log, per-interval samples and
/// checkpoints, and a final scatter plot into `dir`.
pub fn run_experiment(file: &ExperimentFile, dir: &Path) -> Result<TrainOutcome, RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let config = file.train.clone();
    let mut log = RunLog::default();
    let mut last_samples: Option<Tensor> = None;
    let result = train(config.clone(), |record, trainer| {
        log.records.push(record.clone());
        let it = record.iteration;
        let mut write = || -> Result<(), RunError> {
            if let Some(samples) = trainer.last_samples() {
                let path = dir.join(format!("samples_{it}.csv"));
                write_file(&path, |w| write_samples_csv(w, samples))?;
                last_samples = Some(samples.clone());
            }
            let path = dir.join(format!("checkpoint_{it}.txt"));
            write_file(&path, |w| trainer.checkpoint().write(w))?;
            let path = dir.join("runlog.csv");
            write_file(&path, |w| w.write_all(log.to_csv().as_bytes()))
        };
        write().map_err(|e| TrainError::Observer(e.to_string()))
    });
    let outcome = match result {
        Ok(outcome) => outcome,
        Err(TrainError::Diverged {
            iteration,
            reason,
            last_good,
        }) => {
            if let Some(cp) = &last_good {
                let path = dir.join("checkpoint_last_good.txt");
                write_file(&path, |w| cp.write(w))?;
            }
            return Err(RunError::Train(TrainError::Diverged {
                iteration,
                reason,
                last_good,
            }));
        }
        Err(e) => return Err(e.into()),
    };
    let path = dir.join("checkpoint_final.txt");
    write_file(&path, |w| outcome.final_checkpoint.write(w))?;
    if let Some(generated) = &last_samples {
        let spec = MixtureSpec::by_name(config.dataset);
        let real = sample_real(&spec, config.metric_samples, &mut stream_rng(config.seed, Stream::Metrics));
        let path = dir.join("scatter.svg");
        write_file(&path, |w| w.write_all(svg::scatter(&real, generated, SVG_POINTS).as_bytes()))?;
    }
    Ok(outcome)
}

/// Runs every config, up to `jobs` at a time, and reports one line per run.
pub fn cmd_train(
    configs: &[PathBuf],
    cli_out: Option<&Path>,
    seed: Option<u64>,
    jobs: usize,
    out: &mut dyn Write,
) -> Exit {
    let mut loaded = Vec::with_capacity(configs.len());
    for path in configs {
        match load_experiment(path, seed) {
            Ok(file) => {
                let dir = output_dir(cli_out, &file, path, configs.len() > 1);
                loaded.push((path.clone(), file, dir));
            }
            Err(e) => {
                let _ = writeln!(out, "error: {e}");
                return e.exit();
            }
        }
    }

    let results: Vec<Mutex<Option<Result<TrainOutcome, RunError>>>> =
        loaded.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(loaded.len()) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("queue lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some((_, file, dir)) = loaded.get(i) else { break };
                let r = run_experiment(file, dir);
                *results[i].lock().expect("result lock") = Some(r);
            });
        }
    });

    let mut exit = Exit::Ok;
    for ((path, _, dir), result) in loaded.iter().zip(results) {
        let result = result.into_inner().expect("result lock").expect("every run finishes");
        match result {
            Ok(outcome) => {
                let last = outcome.log.records.last();
                let _ = writeln!(
                    out,
                    "{}: {} iterations -> {} (final jsd {:.4}, modes {})",
                    path.display(),
                    outcome.final_checkpoint.iteration,
                    dir.display(),
                    last.map_or(f64::NAN, |r| r.metrics.jsd),
                    last.map_or(0, |r| r.metrics.modes),
                );
            }
            Err(e) => {
                let _ = writeln!(out, "error: {}: {e}", path.display());
                if exit == Exit::Ok || e.exit() == Exit::Numeric {
                    exit = e.exit();
                }
            }
        }
    }
    exit
}

/// Gradient oracle and finite-difference report; `Exit::Check` on any breach.
pub fn cmd_gradcheck(seed: u64, sign_flip: Option<LossName>, out: &mut dyn Write) -> Exit {
    let report = match run_gradcheck(&GradcheckOptions { sign_flip, seed }) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return Exit::Numeric;
        }
    };
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{:<32} max_rel_err={:.3e} tol={:.0e} {}",
            row.label,
            row.max_rel_err,
            row.tolerance,
            if row.passed() { "PASS" } else { "FAIL" }
        );
    }
    if report.passed() {
        let _ = writeln!(out, "all {} checks passed", report.rows.len());
        Exit::Ok
    } else {
        let failed = report.rows.iter().filter(|r| !r.passed()).count();
        let _ = writeln!(out, "{failed} of {} checks failed", report.rows.len());
        Exit::Check
    }
}

/// Reference scenarios: one real critic value against a mean fake critic value.
pub const REFERENCE_SCENARIOS: [(f64, f64); 3] = [(8.0, -5.0), (8.0, 7.0), (-3.0, -5.0)];

/// Absolute and relative probabilities for each real critic value, followed
/// by every named loss on the batch when real and fake counts match.
pub fn losstable(real: &[f64], fake: &[f64]) -> Result<String, String> {
    if real.is_empty() || fake.is_empty() {
        return Err("need at least one real and one fake critic value".into());
    }
    if real.iter().chain(fake).any(|v| !v.is_finite()) {
        return Err("critic values must be finite".into());
    }
    let mean_fake = fake.iter().sum::<f64>() / fake.len() as f64;
    let mut s = String::new();
    s.push_str("c_real    mean_c_fake  absolute  relative\n");
    for &r in real {
        s.push_str(&format!(
            "{:<9} {:<12} {:<9.2} {:.2}\n",
            r,
            mean_fake,
            sigmoid(r),
            sigmoid(r - mean_fake)
        ));
    }
    if real.len() == fake.len() {
        let batch = CriticBatch::new(real.to_vec(), fake.to_vec()).map_err(|e| e.to_string())?;
        s.push_str("loss        L_D          L_G\n");
        for name in LossName::ALL {
            let (d, g) = named_loss(name).losses(&batch).map_err(|e| e.to_string())?;
            s.push_str(&format!("{:<11} {:<12.6} {:.6}\n", name.as_str(), d, g));
        }
    } else {
        s.push_str("(loss values need as many fake as real critic values)\n");
    }
    Ok(s)
}

/// Prints [`losstable`] for the given values, or for the three reference
/// scenarios when none are given.
pub fn cmd_losstable(real: &[f64], fake: &[f64], out: &mut dyn Write) -> Exit {
    let scenarios: Vec<(Vec<f64>, Vec<f64>)> = if real.is_empty() && fake.is_empty() {
        REFERENCE_SCENARIOS.iter().map(|&(r, f)| (vec![r], vec![f])).collect()
    } else {
        vec![(real.to_vec(), fake.to_vec())]
    };
    for (i, (r, f)) in scenarios.iter().enumerate() {
        match losstable(r, f) {
            Ok(table) => {
                if i > 0 {
                    let _ = writeln!(out);
                }
                let _ = write!(out, "{table}");
            }
            Err(e) => {
                let _ = writeln!(out, "error: {e}");
                return Exit::Config;
            }
        }
    }
    Exit::Ok
}

/// Recomputes metrics for a samples CSV against a fresh reference sample.
pub fn cmd_metrics(
    samples: &Path,
    dataset: MixtureName,
    seed: u64,
    reference_samples: usize,
    out: &mut dyn Write,
) -> Exit {
    let text = match fs::read_to_string(samples) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(out, "error: {}: {e}", samples.display());
            return Exit::Config;
        }
    };
    let generated = match read_samples_csv(&text) {
        Ok(t) if t.rows() > 0 => t,
        Ok(_) => {
            let _ = writeln!(out, "error: {}: no samples", samples.display());
            return Exit::Config;
        }
        Err(e) => {
            let _ = writeln!(out, "error: {}: {e}", samples.display());
            return Exit::Config;
        }
    };
    let spec = MixtureSpec::by_name(dataset);
    let real = sample_real(&spec, reference_samples.max(1), &mut stream_rng(seed, Stream::Metrics));
    let report = Reference::new(spec.clone(), &real).and_then(|r| r.evaluate(&generated));
    match report {
        Ok(m) => {
            let _ = writeln!(out, "samples={}", generated.rows());
            let _ = writeln!(out, "jsd={}", m.jsd);
            let _ = writeln!(out, "modes={}/{}", m.modes, spec.modes());
            let _ = writeln!(out, "hq_frac={}", m.hq_fraction);
            let _ = writeln!(out, "frechet={}", m.frechet);
            Exit::Ok
        }
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            Exit::Numeric
        }
    }
}
