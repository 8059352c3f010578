use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use lanerisk_cli::commands::{PREDICTIONS_FILE, SIM_LOG_FILE};
use lanerisk_cli::{cmd_eval, cmd_gen_data, cmd_plot, cmd_simulate, cmd_train, RunConfig};

#[derive(Parser)]
#[command(name = "lanerisk", version, about = "Lane-change prediction and risk-aware MPC pipeline")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the command's random choices (split shuffle, weight init).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the lane-change corpus and the train/test split.
    GenData {
        #[arg(long)]
        v_min: Option<f64>,
        #[arg(long)]
        v_max: Option<f64>,
        #[arg(long)]
        v_step: Option<f64>,
    },
    /// Train the trajectory predictor.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate trained weights on the test split.
    Eval {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the closed-loop two-vehicle scenario.
    Simulate {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Render a simulation log as SVG.
    Plot {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        pred: Option<PathBuf>,
    },
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<String> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let out_dir = cli.out.clone().unwrap_or_else(|| cfg.paths.out_dir.clone());
    match cli.command {
        Command::GenData { v_min, v_max, v_step } => {
            set(&mut cfg.corpus.v_min, v_min);
            set(&mut cfg.corpus.v_max, v_max);
            set(&mut cfg.corpus.v_step, v_step);
            set(&mut cfg.corpus.seed, cli.seed);
            let out = cli.out.unwrap_or_else(|| cfg.paths.data_dir.clone());
            Ok(cmd_gen_data(&cfg, &out)?.to_string())
        }
        Command::Train { epochs, batch_size, lr, data } => {
            set(&mut cfg.train.epochs, epochs);
            set(&mut cfg.train.batch_size, batch_size);
            set(&mut cfg.train.learning_rate, lr);
            set(&mut cfg.train.seed, cli.seed);
            let data = data.unwrap_or_else(|| cfg.paths.data_dir.clone());
            Ok(cmd_train(&cfg, &data, &out_dir)?.to_string())
        }
        Command::Eval { weights, data } => {
            let weights = weights.unwrap_or_else(|| cfg.weights_path());
            let data = data.unwrap_or_else(|| cfg.paths.data_dir.clone());
            Ok(cmd_eval(&cfg, &weights, &data, &out_dir)?.to_string())
        }
        Command::Simulate { weights, steps } => {
            set(&mut cfg.sim.steps, steps);
            set(&mut cfg.sim.seed, cli.seed);
            let weights = weights.unwrap_or_else(|| cfg.weights_path());
            Ok(cmd_simulate(&cfg, &weights, &out_dir)?.to_string())
        }
        Command::Plot { log, pred } => {
            let log = log.unwrap_or_else(|| cfg.paths.out_dir.join(SIM_LOG_FILE));
            let pred = pred.unwrap_or_else(|| cfg.paths.out_dir.join(PREDICTIONS_FILE));
            Ok(cmd_plot(&cfg, &log, &pred, &out_dir)?.to_string())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
