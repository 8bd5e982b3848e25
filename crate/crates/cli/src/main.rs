use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relgan::data::MixtureName;
use relgan::losses::LossName;
use relgan_cli::{cmd_gradcheck, cmd_losstable, cmd_metrics, cmd_train, Exit};

#[derive(Debug, Parser)]
#[command(name = "relgan", version, about = "Relativistic GAN experiments on toy 2-D data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one or more experiment files.
    Train {
        /// Experiment file; repeat to run several.
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Output directory (default: the file's `out` key, else $RELGAN_OUT/<name>, else runs/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Runs to execute concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides the seed in every experiment file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare autodiff gradients with closed forms and finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negate one loss's autodiff gradient to confirm the check fails.
        #[arg(long, hide = true)]
        inject_sign_flip: Option<LossName>,
    },
    /// Print probabilities and loss values for given critic outputs.
    Losstable {
        /// Real critic values, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        real: Vec<f64>,
        /// Fake critic values, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        fake: Vec<f64>,
    },
    /// Recompute metrics from a samples CSV.
    Metrics {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value = "ring8")]
        dataset: MixtureName,
        /// Seed of the reference sample.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        reference_samples: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Exit::Config as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let mut stdout = io::stdout().lock();
    let exit = match cli.command {
        Command::Train {
            configs,
            out,
            jobs,
            seed,
        } => cmd_train(&configs, out.as_deref(), seed, jobs, &mut stdout),
        Command::Gradcheck { seed, inject_sign_flip } => cmd_gradcheck(seed, inject_sign_flip, &mut stdout),
        Command::Losstable { real, fake } => cmd_losstable(&real, &fake, &mut stdout),
        Command::Metrics {
            samples,
            dataset,
            seed,
            reference_samples,
        } => cmd_metrics(&samples, dataset, seed, reference_samples, &mut stdout),
    };
    ExitCode::from(exit as u8)
}
