use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmlink::app::{resolve_config, run, Command};

#[derive(Parser)]
#[command(name = "dmlink", about = "Directly modulated laser link experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Steady-state light-current curve with threshold and slope.
    LiCurve(Common),
    /// Small-signal modulation response.
    S21(Common),
    /// Eye histograms of the received power.
    Eye(Common),
    /// Surrogate training frames from the rate equations.
    GenDataset(Common),
    /// Trains one surrogate per symbol rate.
    TrainSurrogate(Common),
    /// Held-out and stratified surrogate NRMSE.
    EvalSurrogate(Common),
    /// Trains the autoencoder through each surrogate.
    TrainAe(Common),
    /// Uncompensated, FFE and VNLE+LPS sweeps on the rate equations.
    RunBaselines(Common),
    /// Trained autoencoders on the rate equations.
    Evaluate(Common),
    /// Side-by-side comparison from the metric tables.
    Report(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::LiCurve(c) => (Command::LiCurve, c),
        Cmd::S21(c) => (Command::S21, c),
        Cmd::Eye(c) => (Command::Eye, c),
        Cmd::GenDataset(c) => (Command::GenDataset, c),
        Cmd::TrainSurrogate(c) => (Command::TrainSurrogate, c),
        Cmd::EvalSurrogate(c) => (Command::EvalSurrogate, c),
        Cmd::TrainAe(c) => (Command::TrainAe, c),
        Cmd::RunBaselines(c) => (Command::RunBaselines, c),
        Cmd::Evaluate(c) => (Command::Evaluate, c),
        Cmd::Report(c) => (Command::Report, c),
    };
    let result =
        resolve_config(common.config.as_deref(), common.seed, common.out.as_deref()).and_then(|cfg| run(command, &cfg));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
