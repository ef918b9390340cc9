use std::process::ExitCode;

use agvlab::harness::{self, Cli, Command};
use clap::Parser;

fn run(cli: Cli) -> agvlab::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let spec = harness::resolve(args)?;
            for dir in harness::run_experiment(&spec)? {
                println!("{}", dir.display());
            }
        }
        Command::Eval(args) => {
            let report = harness::eval_checkpoint(&args)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Compare(args) => {
            print!("{}", harness::compare(&args.dirs)?.to_table());
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
