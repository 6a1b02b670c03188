mod args;
mod commands;
mod error;
mod report;
mod svg;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::Result;

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Keygen { common, agents, maze_seed, budget, dense } => commands::keygen(&common, agents, maze_seed, budget, dense),
        Command::Generate { common, count } => commands::generate_mazes(&common, count),
        Command::Train { common, count, cover_only, overwrite, budget } => commands::train(&common, count, cover_only, overwrite, budget),
        Command::EvalDistortion { common, input, trials, noise } => commands::eval_distortion(&common, &input, trials, noise),
        Command::EvalCapacity { common, input, trials, noise } => commands::eval_capacity(&common, &input, trials, noise),
        Command::EvalSecrecy { common, input, eve_seeds, trials, shadows, episodes_per_class } => {
            commands::eval_secrecy(&common, &input, eve_seeds, trials, shadows, episodes_per_class)
        }
        Command::EvalRobustness { common, input, p_values, trials } => commands::eval_robustness(&common, &input, &p_values, trials),
        Command::Render { common, maze, system, episodes, name } => {
            commands::render(&common, maze.as_deref(), system.as_deref(), &episodes, &name)
        }
        Command::Encode { common, message, system } => commands::encode(&common, &message, system.as_deref()),
        Command::Decode { common, episodes, system } => commands::decode(&common, &episodes, system.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
