//! Command-line front end for the drivegaze pipeline.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn run(cli: &Cli) -> anyhow::Result<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global()?;
    }
    let dry = cli.dry_run;
    match &cli.command {
        Command::Gen(a) => commands::gen(a, dry),
        Command::Maps(a) => commands::maps(a, dry),
        Command::Precompute(a) => commands::precompute(a, dry),
        Command::Mask(a) => commands::mask(a, dry),
        Command::TrainGaze(a) => commands::train_gaze_cmd(a, dry),
        Command::TrainAgent(a) => commands::train_agent_cmd(a, dry),
        Command::EvalGaze(a) => commands::eval_gaze_cmd(a, dry),
        Command::EvalAgent(a) => commands::eval_agent_cmd(a, dry),
        Command::EvalSeries(a) => commands::eval_series_cmd(a, dry),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
