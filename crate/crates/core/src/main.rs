use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ecgan::harness::{self, Axis, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ecgan", version, about = "Train and evaluate GAN-augmented classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured variant for every (percent, seed) cell.
    Train {
        config: PathBuf,
        /// Overrides ECGAN_SEED and the config seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep one axis across variants and seeds.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a grid of generated samples as PGM/PPM.
    Generate {
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        /// Class for a conditional generator.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the accuracy of a classifier checkpoint.
    Eval {
        checkpoint: PathBuf,
        /// synth:n_per_class=..,noise=..,seed=.. | idx:<images>,<labels> | dir:<root>,<labels.csv>
        #[arg(long)]
        data: String,
    },
}

fn load(path: &std::path::Path, seed: Option<u64>) -> ecgan::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    cfg.resolve_seeds(seed)?;
    Ok(cfg)
}

fn run(cli: Cli) -> ecgan::Result<()> {
    match cli.command {
        Command::Train { config, seed } => {
            let cfg = load(&config, seed)?;
            for acc in harness::cmd_train(&cfg)? {
                println!("final_accuracy={acc:.4}");
            }
        }
        Command::Sweep { config, axis, seed } => {
            let cfg = load(&config, seed)?;
            for r in harness::cmd_sweep(&cfg, axis)? {
                println!("{}={} {} mean={:.4} std={:.4}", r.axis, r.value, r.variant, r.mean_test_acc, r.std_test_acc);
            }
        }
        Command::Generate { checkpoint, n, class, out, seed } => {
            let seed = match seed {
                Some(s) => s,
                None => match std::env::var(harness::SEED_ENV) {
                    Ok(v) => v
                        .trim()
                        .parse()
                        .map_err(|_| ecgan::Error::Config(format!("{}={v:?} is not an unsigned integer", harness::SEED_ENV)))?,
                    Err(_) => 0,
                },
            };
            harness::cmd_generate(&checkpoint, n, class, &out, seed)?;
        }
        Command::Eval { checkpoint, data } => {
            println!("accuracy={:.4}", harness::cmd_eval(&checkpoint, &data)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
